#pragma once

// Planted-signal synthetic dataset: 30 years of monthly precipitation for a set
// of regions, categorical region attributes, and impact reports whose presence
// is a steep logistic function of SPI6/SPI12 inside a study window.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "drought/common.hpp"
#include "drought/ingest.hpp"
#include "drought/spi.hpp"

namespace drought::fixture {

/// How one category's label depends on SPI: score = w6 * spi6 + w12 * spi12;
/// P(impact) = sigmoid(steepness * (q - score)), q the `rate` quantile of score.
struct CategorySignal {
  Category category;
  double rate;
  double w6;
  double w12;
  double steepness;
};

inline std::vector<CategorySignal> default_signals() {
  return {
      {Category::agriculture, 0.69, 0.5, 0.5, 8.0},
      {Category::energy, 0.03, 0.0, 1.0, 8.0},
      {Category::plants_wildlife, 0.29, 0.6, 0.4, 8.0},
      {Category::society_public_health, 0.50, 0.0, 1.0, 8.0},
      {Category::water_supply_quality, 0.36, 0.3, 0.7, 8.0},
      {Category::business_industry, 0.04, 0.5, 0.5, 8.0},
      {Category::fire, 0.11, 0.7, 0.3, 6.0},
      {Category::relief_response_restrictions, 0.36, 0.5, 0.5, 8.0},
      {Category::tourism_recreation, 0.02, 0.4, 0.6, 8.0},
  };
}

struct FixtureSpec {
  std::size_t regions = 88;
  YearMonth record_start{1985, 7};
  std::size_t record_months = 360;
  YearMonth study_start{2010, 10};
  YearMonth study_end{2015, 6};
  std::uint64_t seed = 20240615;
  std::vector<CategorySignal> signals = default_signals();
};

struct Fixture {
  std::vector<spi::MonthlySeries> precip;
  std::vector<ingest::ImpactRecord> impacts;
  std::vector<ingest::RegionAttributes> regions;
};

inline std::string region_name(std::size_t i) {
  std::string digits = std::to_string(i + 1);
  return "TX-" + std::string(3 - std::min<std::size_t>(3, digits.size()), '0') + digits;
}

[[nodiscard]] inline Fixture generate(const FixtureSpec& spec) {
  static const std::array<const char*, 4> land_cover{"cropland", "forest", "grassland", "shrubland"};
  static const std::array<double, 12> climatology{45, 50, 60, 65, 95, 85, 55, 60, 80, 85, 55, 45};

  Fixture fx;
  std::mt19937_64 rng(derive_seed(spec.seed, "fixture"));
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Shared state-wide anomaly plus a regional one, both AR(1) with unit variance.
  std::vector<double> state(spec.record_months);
  double a = 0.0;
  for (auto& s : state) {
    a = 0.9 * a + std::sqrt(1.0 - 0.81) * z(rng);
    s = a;
  }
  for (std::size_t r = 0; r < spec.regions; ++r) {
    const std::string id = region_name(r);
    fx.regions.push_back({id, land_cover[r % land_cover.size()], "phr" + std::to_string(1 + r % 6),
                          std::string(1, static_cast<char>('A' + (r / 3) % 6)), "d" + std::to_string(1 + (r / 2) % 8)});
    spi::MonthlySeries s{id, spec.record_start, {}};
    double b = 0.0;
    const double wetness = 0.7 + 0.6 * unit(rng);
    for (std::size_t t = 0; t < spec.record_months; ++t) {
      b = 0.8 * b + std::sqrt(1.0 - 0.64) * z(rng);
      const int month = s.month_at(t).month;
      const double anomaly = 0.6 * state[t] + 0.8 * b;
      const double mean = wetness * climatology[static_cast<std::size_t>(month - 1)] * std::exp(0.5 * anomaly);
      std::gamma_distribution<double> depth(2.0, mean / 2.0);
      double v = unit(rng) < 0.03 ? 0.0 : depth(rng);
      s.values.push_back(std::round(v * 100.0) / 100.0);
    }
    fx.precip.push_back(std::move(s));
  }

  // Labels from the SPI values the pipeline itself will compute.
  struct Row {
    std::size_t region;
    YearMonth month;
    double spi6;
    double spi12;
  };
  std::vector<Row> rows;
  const std::array<int, 2> windows{6, 12};
  for (std::size_t r = 0; r < fx.precip.size(); ++r) {
    auto spi_by_window = spi::compute_spi(fx.precip[r], windows);
    const auto& s6 = spi_by_window.at(6);
    const auto& s12 = spi_by_window.at(12);
    for (std::size_t t = 0; t < s12.values.size(); ++t) {
      const auto m = s12.start.plus(static_cast<std::int64_t>(t));
      if (m < spec.study_start || m > spec.study_end || !s12.values[t] || !s6.values[t]) continue;
      rows.push_back({r, m, *s6.values[t], *s12.values[t]});
    }
  }

  for (const auto& signal : spec.signals) {
    std::vector<double> score;
    for (const auto& row : rows) score.push_back(signal.w6 * row.spi6 + signal.w12 * row.spi12);
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    const double q = sorted[static_cast<std::size_t>(signal.rate * static_cast<double>(sorted.size() - 1))];
    std::mt19937_64 label_rng(derive_seed(spec.seed, "labels", to_token(signal.category)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> count(1, 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double p = sigmoid(signal.steepness * (q - score[i]));
      const double draw = u(label_rng);
      const int n = count(label_rng);
      if (draw < p) {
        fx.impacts.push_back({fx.precip[rows[i].region].region_id, rows[i].month, signal.category, n});
      } else if (n == 4) {
        // Some explicit zero-count rows, which must read as absence.
        fx.impacts.push_back({fx.precip[rows[i].region].region_id, rows[i].month, signal.category, 0});
      }
    }
  }
  return fx;
}

/// Writes precip.csv, impacts.csv, regions.csv and a matching config.json into `dir`.
inline void write(const Fixture& fx, const FixtureSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("precip.csv");
    ingest::write_precip(out, fx.precip);
  }
  {
    auto out = open("impacts.csv");
    ingest::write_impacts(out, fx.impacts);
  }
  {
    auto out = open("regions.csv");
    ingest::write_regions(out, fx.regions);
  }
  auto out = open("config.json");
  out << "{\n"
      << "  \"precip\": \"precip.csv\",\n"
      << "  \"impacts\": \"impacts.csv\",\n"
      << "  \"regions\": \"regions.csv\",\n"
      << "  \"output_dir\": \"out\",\n"
      << "  \"study_window\": {\"start\": \"" << spec.study_start.to_string() << "\", \"end\": \""
      << spec.study_end.to_string() << "\"},\n"
      << "  \"seed\": " << spec.seed << "\n"
      << "}\n";
}

}  // namespace drought::fixture
