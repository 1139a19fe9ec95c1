#pragma once

// Design matrix assembly: SPI columns, one-hot calendar and regional columns,
// binary impact labels, category pruning, and stratified train/validation/test
// splitting.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "drought/common.hpp"
#include "drought/ingest.hpp"
#include "drought/spi.hpp"

namespace drought::features {

/// A block of indicator columns of which exactly one is set per row.
struct OneHotGroup {
  std::string name;
  std::size_t first = 0;
  std::size_t size = 0;

  friend bool operator==(const OneHotGroup&, const OneHotGroup&) = default;
};

/// Numeric columns come first, followed by the one-hot groups in order.
struct ColumnLayout {
  std::size_t numeric = 0;
  std::vector<OneHotGroup> groups;

  [[nodiscard]] std::size_t width() const { return groups.empty() ? numeric : groups.back().first + groups.back().size; }

  friend bool operator==(const ColumnLayout&, const ColumnLayout&) = default;
};

struct RowKey {
  std::string region_id;
  YearMonth month;

  friend bool operator==(const RowKey&, const RowKey&) = default;
};

struct DesignMatrix {
  std::vector<RowKey> rows;
  std::vector<std::string> column_names;
  ColumnLayout layout;
  Matrix values;

  [[nodiscard]] std::size_t column(std::string_view name) const {
    auto it = std::find(column_names.begin(), column_names.end(), name);
    if (it == column_names.end()) throw ValidationError("design matrix has no column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - column_names.begin());
  }
};

struct LabelVector {
  Category category = Category::agriculture;
  std::vector<int> values;

  [[nodiscard]] std::size_t positives() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
  }
  [[nodiscard]] double positive_rate() const {
    return values.empty() ? 0.0 : static_cast<double>(positives()) / static_cast<double>(values.size());
  }
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct SplitSet {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// SPI table: one row per (region, month) with one value per window.

struct SpiTable {
  std::vector<int> windows;
  std::vector<RowKey> rows;
  std::vector<std::vector<std::optional<double>>> values;  ///< values[row][window index]
};

/// Flattens per-region SPI series into a table ordered by region, then month.
[[nodiscard]] inline SpiTable make_spi_table(const std::vector<std::map<int, spi::SpiSeries>>& per_region,
                                             std::span<const int> windows) {
  SpiTable table;
  table.windows.assign(windows.begin(), windows.end());
  for (const auto& series : per_region) {
    const auto& first = series.at(windows.front());
    for (std::size_t i = 0; i < first.values.size(); ++i) {
      table.rows.push_back({first.region_id, first.start.plus(static_cast<std::int64_t>(i))});
      std::vector<std::optional<double>> row;
      for (int k : windows) row.push_back(series.at(k).values.at(i));
      table.values.push_back(std::move(row));
    }
  }
  return table;
}

inline void write_spi_table(std::ostream& out, const SpiTable& table) {
  out << "region_id,month";
  for (int k : table.windows) out << ",spi" << k;
  out << ",warmup\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.rows[r].region_id << ',' << table.rows[r].month.to_string();
    bool warmup = false;
    for (const auto& v : table.values[r]) {
      out << ',' << (v ? format_double(*v) : std::string("NA"));
      warmup = warmup || !v;
    }
    out << ',' << (warmup ? 1 : 0) << '\n';
  }
}

[[nodiscard]] inline SpiTable read_spi_table(std::istream& in, const std::string& source) {
  SpiTable table;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
  auto header = ingest::split_fields(line);
  if (header.size() < 4 || header[0] != "region_id" || header[1] != "month" || header.back() != "warmup") {
    throw ValidationError(source + ": unexpected SPI table header");
  }
  for (std::size_t i = 2; i + 1 < header.size(); ++i) {
    auto k = header[i].substr(0, 3) == "spi" ? parse_int(header[i].substr(3)) : std::nullopt;
    if (!k) throw ValidationError(source + ": unexpected SPI column '" + std::string(header[i]) + "'");
    table.windows.push_back(static_cast<int>(*k));
  }
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    auto f = ingest::split_fields(line);
    if (f.size() != header.size()) throw ValidationError(source + ": row " + std::to_string(number) + ": bad width");
    auto month = ingest::require_month(f[1], source, number);
    std::vector<std::optional<double>> row;
    for (std::size_t i = 2; i + 1 < f.size(); ++i) {
      if (f[i] == "NA") {
        row.emplace_back();
        continue;
      }
      auto v = parse_double(f[i]);
      if (!v) throw ValidationError(source + ": row " + std::to_string(number) + ": bad SPI value");
      row.emplace_back(*v);
    }
    table.rows.push_back({std::string(f[0]), month});
    table.values.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// One-hot encoding

/// Meteorological season of a calendar month.
[[nodiscard]] inline std::string_view season_of(int month) {
  switch (month) {
    case 12: case 1: case 2: return "DJF";
    case 3: case 4: case 5: return "MAM";
    case 6: case 7: case 8: return "JJA";
    default: return "SON";
  }
}

inline const std::vector<std::string>& season_vocabulary() {
  static const std::vector<std::string> v{"DJF", "MAM", "JJA", "SON"};
  return v;
}

inline const std::vector<std::string>& month_vocabulary() {
  static const std::vector<std::string> v{"01", "02", "03", "04", "05", "06", "07", "08", "09", "10", "11", "12"};
  return v;
}

/// Indicator block (rows x vocabulary) for categorical values.
[[nodiscard]] inline Matrix one_hot(std::span<const std::string> vocabulary, std::span<const std::string> values,
                                    std::string_view group = "attribute") {
  Matrix out(values.size(), vocabulary.size());
  for (std::size_t r = 0; r < values.size(); ++r) {
    auto it = std::find(vocabulary.begin(), vocabulary.end(), values[r]);
    if (it == vocabulary.end()) {
      throw ValidationError(std::string(group) + ": class '" + values[r] + "' is not in the vocabulary");
    }
    out(r, static_cast<std::size_t>(it - vocabulary.begin())) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Design matrix

struct StudyWindow {
  std::optional<YearMonth> start;
  std::optional<YearMonth> end;

  [[nodiscard]] bool contains(YearMonth m) const { return (!start || m >= *start) && (!end || m <= *end); }
};

/// Rows: SPI table rows inside the study window whose SPI values are all
/// defined. Columns: spi<k> per window, then season, month, lc, phr, rwpd, taesd
/// indicator groups with class vocabularies sorted lexicographically.
[[nodiscard]] inline DesignMatrix build_design_matrix(const SpiTable& spi_table,
                                                      std::span<const ingest::RegionAttributes> regions,
                                                      const StudyWindow& window = {}) {
  std::map<std::string, const ingest::RegionAttributes*> by_id;
  for (const auto& r : regions) by_id[r.region_id] = &r;

  DesignMatrix dm;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < spi_table.rows.size(); ++r) {
    const auto& key = spi_table.rows[r];
    if (!window.contains(key.month)) continue;
    const auto& v = spi_table.values[r];
    if (!std::all_of(v.begin(), v.end(), [](const auto& x) { return x.has_value(); })) continue;
    if (!by_id.count(key.region_id)) {
      throw ValidationError("cross-reference error: region " + key.region_id + " has no attribute row");
    }
    kept.push_back(r);
    dm.rows.push_back(key);
  }
  if (kept.empty()) throw ValidationError("design matrix is empty: no rows with defined SPI inside the study window");

  struct Group {
    std::string name;
    std::vector<std::string> vocabulary;
    std::vector<std::string> values;
  };
  auto attribute = [&](std::string name, auto member) {
    Group g{std::move(name), {}, {}};
    std::set<std::string> vocab;
    for (const auto& r : regions) vocab.insert(r.*member);
    g.vocabulary.assign(vocab.begin(), vocab.end());
    for (const auto& key : dm.rows) g.values.push_back(by_id.at(key.region_id)->*member);
    return g;
  };
  std::vector<Group> groups;
  {
    Group season{"season", season_vocabulary(), {}};
    Group month{"month", month_vocabulary(), {}};
    for (const auto& key : dm.rows) {
      season.values.emplace_back(season_of(key.month.month));
      month.values.push_back(month_vocabulary()[static_cast<std::size_t>(key.month.month - 1)]);
    }
    groups.push_back(std::move(season));
    groups.push_back(std::move(month));
  }
  groups.push_back(attribute("lc", &ingest::RegionAttributes::land_cover));
  groups.push_back(attribute("phr", &ingest::RegionAttributes::public_health_region));
  groups.push_back(attribute("rwpd", &ingest::RegionAttributes::water_project_region));
  groups.push_back(attribute("taesd", &ingest::RegionAttributes::extension_district));

  for (int k : spi_table.windows) dm.column_names.push_back("spi" + std::to_string(k));
  dm.layout.numeric = spi_table.windows.size();
  std::size_t next = dm.layout.numeric;
  for (const auto& g : groups) {
    dm.layout.groups.push_back({g.name, next, g.vocabulary.size()});
    for (const auto& c : g.vocabulary) dm.column_names.push_back(g.name + "_" + c);
    next += g.vocabulary.size();
  }

  dm.values = Matrix(dm.rows.size(), next);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t w = 0; w < spi_table.windows.size(); ++w) dm.values(i, w) = *spi_table.values[kept[i]][w];
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    auto block = one_hot(groups[gi].vocabulary, groups[gi].values, groups[gi].name);
    const auto first = dm.layout.groups[gi].first;
    for (std::size_t r = 0; r < block.rows(); ++r)
      for (std::size_t c = 0; c < block.cols(); ++c) dm.values(r, first + c) = block(r, c);
  }
  return dm;
}

// ---------------------------------------------------------------------------
// Labels

/// Presence (1) or absence (0) of at least one impact report per row, for
/// every category. Records outside the matrix rows are ignored.
[[nodiscard]] inline std::map<Category, LabelVector> summarize_impacts(std::span<const ingest::ImpactRecord> records,
                                                                       std::span<const RowKey> rows) {
  std::map<std::pair<std::string, std::int64_t>, std::size_t> index;
  for (std::size_t i = 0; i < rows.size(); ++i) index[{rows[i].region_id, rows[i].month.ordinal()}] = i;
  std::map<Category, std::vector<long long>> totals;
  for (auto c : kAllCategories) totals[c].assign(rows.size(), 0);
  for (const auto& r : records) {
    auto it = index.find({r.region_id, r.month.ordinal()});
    if (it != index.end()) totals[r.category][it->second] += r.count;
  }
  std::map<Category, LabelVector> out;
  for (auto& [c, t] : totals) {
    LabelVector lv{c, {}};
    lv.values.reserve(t.size());
    for (auto n : t) lv.values.push_back(n > 0 ? 1 : 0);
    out.emplace(c, std::move(lv));
  }
  return out;
}

struct PruneResult {
  std::map<Category, LabelVector> kept;
  std::vector<Category> removed;
};

/// Drops categories whose positive proportion is strictly below `threshold`.
[[nodiscard]] inline PruneResult prune_categories(std::map<Category, LabelVector> labels, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("prune threshold must lie in (0, 1)");
  PruneResult result;
  for (auto& [c, lv] : labels) {
    if (lv.positive_rate() < threshold) {
      log_info("dropping category " + std::string(to_token(c)) + ": positive proportion " +
               format_fixed(lv.positive_rate(), 4) + " below " + format_double(threshold));
      result.removed.push_back(c);
    } else {
      result.kept.emplace(c, std::move(lv));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Stratified split

/// Largest-remainder allocation of `count` items over `fractions`.
[[nodiscard]] inline std::vector<std::size_t> allocate(std::size_t count, std::span<const double> fractions) {
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(count);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += sizes[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++sizes[remainders[i % remainders.size()].second];
  return sizes;
}

[[nodiscard]] inline SplitSet stratified_split(const LabelVector& labels, const SplitFractions& fractions,
                                               std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
  for (double x : f)
    if (!(x > 0.0)) throw ValidationError("split fractions must all be positive (every split must be nonempty)");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.values.size(); ++i) (labels.values[i] == 1 ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  auto pos_sizes = allocate(pos.size(), f);
  auto neg_sizes = allocate(neg.size(), f);
  static constexpr const char* names[] = {"train", "validation", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    if (pos_sizes[s] == 0) {
      throw ValidationError(std::string("category ") + std::string(to_token(labels.category)) + ": " + names[s] +
                            " split would receive zero positives; merge categories or change split fractions");
    }
  }

  SplitSet out;
  out.seed = seed;
  std::array<std::vector<std::size_t>*, 3> parts{&out.train, &out.validation, &out.test};
  std::size_t p = 0, n = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    parts[s]->insert(parts[s]->end(), pos.begin() + static_cast<std::ptrdiff_t>(p),
                     pos.begin() + static_cast<std::ptrdiff_t>(p + pos_sizes[s]));
    parts[s]->insert(parts[s]->end(), neg.begin() + static_cast<std::ptrdiff_t>(n),
                     neg.begin() + static_cast<std::ptrdiff_t>(n + neg_sizes[s]));
    p += pos_sizes[s];
    n += neg_sizes[s];
    std::sort(parts[s]->begin(), parts[s]->end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// Design matrix plus one label column per category, as CSV.
inline void write_design(std::ostream& out, const DesignMatrix& dm, const std::map<Category, LabelVector>& labels) {
  out << "region_id,month";
  for (const auto& name : dm.column_names) out << ',' << name;
  for (const auto& [c, lv] : labels) out << ",label_" << to_token(c);
  out << '\n';
  for (std::size_t r = 0; r < dm.rows.size(); ++r) {
    out << dm.rows[r].region_id << ',' << dm.rows[r].month.to_string();
    for (double v : dm.values.row(r)) out << ',' << format_double(v);
    for (const auto& [c, lv] : labels) out << ',' << lv.values[r];
    out << '\n';
  }
}

struct LabelledDesign {
  DesignMatrix matrix;
  std::map<Category, LabelVector> labels;
};

[[nodiscard]] inline LabelledDesign read_design(std::istream& in, const std::string& source) {
  LabelledDesign out;
  auto& dm = out.matrix;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
  auto header = ingest::split_fields(line);
  if (header.size() < 3 || header[0] != "region_id" || header[1] != "month") {
    throw ValidationError(source + ": unexpected design header");
  }
  std::vector<Category> label_columns;
  for (std::size_t i = 2; i < header.size(); ++i) {
    std::string_view name = header[i];
    if (name.substr(0, 6) == "label_") {
      label_columns.push_back(require_category(name.substr(6)));
      continue;
    }
    if (!label_columns.empty()) throw ValidationError(source + ": feature column after label columns");
    dm.column_names.emplace_back(name);
    if (name.substr(0, 3) == "spi") {
      if (!dm.layout.groups.empty()) throw ValidationError(source + ": numeric column after indicator columns");
      ++dm.layout.numeric;
      continue;
    }
    auto underscore = name.find('_');
    if (underscore == std::string_view::npos) throw ValidationError(source + ": unrecognized column " + std::string(name));
    std::string group(name.substr(0, underscore));
    if (dm.layout.groups.empty() || dm.layout.groups.back().name != group) {
      dm.layout.groups.push_back({group, dm.column_names.size() - 1, 0});
    }
    ++dm.layout.groups.back().size;
  }
  for (auto c : label_columns) out.labels[c] = LabelVector{c, {}};
  const std::size_t width = dm.column_names.size();
  std::vector<double> row(width);
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    auto f = ingest::split_fields(line);
    if (f.size() != header.size()) throw ValidationError(source + ": row " + std::to_string(number) + ": bad width");
    dm.rows.push_back({std::string(f[0]), ingest::require_month(f[1], source, number)});
    for (std::size_t i = 0; i < width; ++i) {
      auto v = parse_double(f[2 + i]);
      if (!v) throw ValidationError(source + ": row " + std::to_string(number) + ": bad value");
      row[i] = *v;
    }
    dm.values.append_row(row);
    for (std::size_t j = 0; j < label_columns.size(); ++j) {
      auto v = parse_int(f[2 + width + j]);
      if (!v || (*v != 0 && *v != 1)) throw ValidationError(source + ": row " + std::to_string(number) + ": bad label");
      out.labels[label_columns[j]].values.push_back(static_cast<int>(*v));
    }
  }
  if (dm.rows.empty()) dm.values = Matrix(0, width);
  return out;
}

}  // namespace drought::features
