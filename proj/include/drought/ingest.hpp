#pragma once

// Loading and validation of the three tabular inputs:
//
//   precip.csv   region_id,month,precip_mm
//   impacts.csv  region_id,month,category,count
//   regions.csv  region_id,lc,phr,rwpd,taesd
//
// Comma separated, mandatory header, months as YYYY-MM. Headers must match
// exactly; extra or renamed columns are rejected. Row numbers in diagnostics
// are file line numbers (the header is row 1).

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "drought/common.hpp"
#include "drought/spi.hpp"

namespace drought {

/// Impact sectors of the Drought Impact Reporter.
enum class Category {
  agriculture,
  energy,
  plants_wildlife,
  society_public_health,
  water_supply_quality,
  business_industry,
  fire,
  relief_response_restrictions,
  tourism_recreation,
};

inline constexpr std::array<Category, 9> kAllCategories{
    Category::agriculture,          Category::energy,
    Category::plants_wildlife,      Category::society_public_health,
    Category::water_supply_quality, Category::business_industry,
    Category::fire,                 Category::relief_response_restrictions,
    Category::tourism_recreation,
};

[[nodiscard]] inline std::string_view to_token(Category c) {
  switch (c) {
    case Category::agriculture: return "agriculture";
    case Category::energy: return "energy";
    case Category::plants_wildlife: return "plants_wildlife";
    case Category::society_public_health: return "society_public_health";
    case Category::water_supply_quality: return "water_supply_quality";
    case Category::business_industry: return "business_industry";
    case Category::fire: return "fire";
    case Category::relief_response_restrictions: return "relief_response_restrictions";
    case Category::tourism_recreation: return "tourism_recreation";
  }
  return "?";
}

[[nodiscard]] inline std::string_view display_name(Category c) {
  switch (c) {
    case Category::agriculture: return "Agriculture";
    case Category::energy: return "Energy";
    case Category::plants_wildlife: return "Plants & Wildlife";
    case Category::society_public_health: return "Society & Public Health";
    case Category::water_supply_quality: return "Water Supply & Quality";
    case Category::business_industry: return "Business & Industry";
    case Category::fire: return "Fire";
    case Category::relief_response_restrictions: return "Relief, Response & Restrictions";
    case Category::tourism_recreation: return "Tourism & Recreation";
  }
  return "?";
}

[[nodiscard]] inline std::string category_vocabulary() {
  std::string out;
  for (auto c : kAllCategories) {
    if (!out.empty()) out += ", ";
    out += to_token(c);
  }
  return out;
}

[[nodiscard]] inline std::optional<Category> parse_category(std::string_view token) {
  for (auto c : kAllCategories)
    if (to_token(c) == token) return c;
  return std::nullopt;
}

[[nodiscard]] inline Category require_category(std::string_view token) {
  if (auto c = parse_category(token)) return *c;
  throw ValidationError("unknown impact category '" + std::string(token) + "'; valid categories: " +
                        category_vocabulary());
}

namespace ingest {

inline constexpr std::array<std::string_view, 3> kPrecipHeader{"region_id", "month", "precip_mm"};
inline constexpr std::array<std::string_view, 4> kImpactsHeader{"region_id", "month", "category", "count"};
inline constexpr std::array<std::string_view, 5> kRegionsHeader{"region_id", "lc", "phr", "rwpd", "taesd"};

struct ImpactRecord {
  std::string region_id;
  YearMonth month;
  Category category = Category::agriculture;
  long long count = 0;

  friend bool operator==(const ImpactRecord&, const ImpactRecord&) = default;
};

struct RegionAttributes {
  std::string region_id;
  std::string land_cover;
  std::string public_health_region;
  std::string water_project_region;
  std::string extension_district;

  friend bool operator==(const RegionAttributes&, const RegionAttributes&) = default;
};

// ---------------------------------------------------------------------------
// CSV

[[nodiscard]] inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t begin = 0;
  while (true) {
    auto comma = line.find(',', begin);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(begin));
      return fields;
    }
    fields.push_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
}

/// Reads a header-led CSV, enforcing the exact header. Calls `row(fields, row_number)` per data row.
template <std::size_t N, typename RowFn>
void read_csv(std::istream& in, const std::string& source, const std::array<std::string_view, N>& header, RowFn&& row) {
  std::string line;
  std::size_t number = 0;
  auto strip = [](std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  };
  if (!std::getline(in, line)) throw ValidationError(source + ": empty file, expected header");
  ++number;
  strip(line);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto fields = split_fields(line);
  bool ok = fields.size() == N && std::equal(fields.begin(), fields.end(), header.begin());
  if (!ok) {
    std::string expected;
    for (auto h : header) expected += (expected.empty() ? "" : ",") + std::string(h);
    throw ValidationError(source + ": header '" + line + "' does not match expected '" + expected + "'");
  }
  while (std::getline(in, line)) {
    ++number;
    strip(line);
    if (line.empty()) continue;
    auto cells = split_fields(line);
    if (cells.size() != N) {
      throw ValidationError(source + ": row " + std::to_string(number) + ": expected " + std::to_string(N) +
                            " fields, found " + std::to_string(cells.size()));
    }
    row(cells, number);
  }
}

[[nodiscard]] inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open input file: " + path);
  return in;
}

[[nodiscard]] inline YearMonth require_month(std::string_view text, const std::string& source, std::size_t row) {
  auto m = YearMonth::parse(text);
  if (!m) {
    throw ValidationError(source + ": row " + std::to_string(row) + ": malformed month '" + std::string(text) +
                          "' (expected YYYY-MM)");
  }
  return *m;
}

inline void require_id(std::string_view text, const std::string& source, std::size_t row) {
  if (text.empty()) throw ValidationError(source + ": row " + std::to_string(row) + ": empty region_id");
}

// ---------------------------------------------------------------------------
// Precipitation

/// One gap-free series per region, sorted by region_id.
[[nodiscard]] inline std::vector<spi::MonthlySeries> parse_precip(std::istream& in, const std::string& source) {
  std::map<std::string, std::map<YearMonth, double>> by_region;
  read_csv(in, source, kPrecipHeader, [&](const std::vector<std::string_view>& f, std::size_t row) {
    require_id(f[0], source, row);
    auto month = require_month(f[1], source, row);
    auto depth = parse_double(f[2]);
    if (!depth || !std::isfinite(*depth)) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": invalid precipitation '" + std::string(f[2]) +
                            "'");
    }
    if (*depth < 0.0) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": negative precipitation " +
                            std::string(f[2]));
    }
    auto [it, inserted] = by_region[std::string(f[0])].emplace(month, *depth);
    if (!inserted) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": duplicate record for region " +
                            std::string(f[0]) + " month " + month.to_string());
    }
  });
  std::vector<spi::MonthlySeries> out;
  for (auto& [region, months] : by_region) {
    spi::MonthlySeries s{region, months.begin()->first, {}};
    auto expected = s.start;
    for (auto& [month, depth] : months) {
      if (month != expected) {
        throw ValidationError(source + ": region " + region + ": gap in monthly record, missing " +
                              expected.to_string());
      }
      s.values.push_back(depth);
      expected = expected.plus(1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

[[nodiscard]] inline std::vector<spi::MonthlySeries> load_precip(const std::string& path) {
  auto in = open_input(path);
  return parse_precip(in, path);
}

inline void write_precip(std::ostream& out, std::span<const spi::MonthlySeries> series) {
  out << "region_id,month,precip_mm\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.values.size(); ++i)
      out << s.region_id << ',' << s.month_at(i).to_string() << ',' << format_double(s.values[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Impacts

[[nodiscard]] inline std::vector<ImpactRecord> parse_impacts(std::istream& in, const std::string& source) {
  std::vector<ImpactRecord> out;
  read_csv(in, source, kImpactsHeader, [&](const std::vector<std::string_view>& f, std::size_t row) {
    require_id(f[0], source, row);
    auto month = require_month(f[1], source, row);
    Category category;
    try {
      category = require_category(f[2]);
    } catch (const ValidationError& e) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": " + e.what());
    }
    auto count = parse_int(f[3]);
    if (!count || *count < 0) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": invalid count '" + std::string(f[3]) + "'");
    }
    out.push_back({std::string(f[0]), month, category, *count});
  });
  return out;
}

[[nodiscard]] inline std::vector<ImpactRecord> load_impacts(const std::string& path) {
  auto in = open_input(path);
  return parse_impacts(in, path);
}

inline void write_impacts(std::ostream& out, std::span<const ImpactRecord> records) {
  out << "region_id,month,category,count\n";
  for (const auto& r : records)
    out << r.region_id << ',' << r.month.to_string() << ',' << to_token(r.category) << ',' << r.count << '\n';
}

// ---------------------------------------------------------------------------
// Regions

/// Region attribute rows, sorted by region_id.
[[nodiscard]] inline std::vector<RegionAttributes> parse_regions(std::istream& in, const std::string& source) {
  std::map<std::string, RegionAttributes> by_id;
  read_csv(in, source, kRegionsHeader, [&](const std::vector<std::string_view>& f, std::size_t row) {
    require_id(f[0], source, row);
    for (std::size_t i = 1; i < f.size(); ++i) {
      if (f[i].empty()) {
        throw ValidationError(source + ": row " + std::to_string(row) + ": empty class for " +
                              std::string(kRegionsHeader[i]));
      }
    }
    RegionAttributes r{std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]), std::string(f[4])};
    if (!by_id.emplace(r.region_id, r).second) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": duplicate region " + r.region_id);
    }
  });
  std::vector<RegionAttributes> out;
  for (auto& [id, r] : by_id) out.push_back(std::move(r));
  return out;
}

[[nodiscard]] inline std::vector<RegionAttributes> load_regions(const std::string& path) {
  auto in = open_input(path);
  return parse_regions(in, path);
}

inline void write_regions(std::ostream& out, std::span<const RegionAttributes> regions) {
  out << "region_id,lc,phr,rwpd,taesd\n";
  for (const auto& r : regions) {
    out << r.region_id << ',' << r.land_cover << ',' << r.public_health_region << ',' << r.water_project_region << ','
        << r.extension_district << '\n';
  }
}

/// Referential closure: every region in the precipitation and impact tables has
/// exactly one attribute row, impacts only name regions with precipitation, and
/// the attribute table names no unknown regions.
inline void check_references(std::span<const spi::MonthlySeries> precip, std::span<const ImpactRecord> impacts,
                             std::span<const RegionAttributes> regions) {
  std::set<std::string> precip_ids;
  for (const auto& s : precip) precip_ids.insert(s.region_id);
  std::set<std::string> region_ids;
  for (const auto& r : regions) {
    if (!region_ids.insert(r.region_id).second) throw ValidationError("regions: duplicate region " + r.region_id);
  }
  for (const auto& id : precip_ids) {
    if (!region_ids.count(id)) {
      throw ValidationError("cross-reference error: region " + id + " has precipitation but no attribute row");
    }
  }
  for (const auto& r : impacts) {
    if (!precip_ids.count(r.region_id)) {
      throw ValidationError("cross-reference error: region " + r.region_id + " has impacts but no precipitation");
    }
  }
  for (const auto& id : region_ids) {
    if (!precip_ids.count(id)) {
      throw ValidationError("cross-reference error: region " + id + " has attributes but no precipitation");
    }
  }
}

}  // namespace ingest
}  // namespace drought
