#pragma once

// Batch pipeline: spi -> prepare -> train -> evaluate -> explain -> report.
// Every stage reads its inputs from files and writes only under the output
// directory, so stages can be rerun independently.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drought/common.hpp"
#include "drought/eval.hpp"
#include "drought/explain.hpp"
#include "drought/features.hpp"
#include "drought/gbt.hpp"
#include "drought/ingest.hpp"
#include "drought/resample.hpp"
#include "drought/spi.hpp"
#include "drought/svg.hpp"

namespace drought::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct PipelineConfig {
  fs::path precip;
  fs::path impacts;
  fs::path regions;
  fs::path output_dir = "out";
  features::StudyWindow study_window;
  std::vector<int> spi_windows{1, 3, 6, 9, 12};
  features::SplitFractions split;
  std::uint64_t seed = 0;
  bool resample_enabled = true;
  resample::ResamplePlan resample;
  gbt::TrainConfig boost;
  eval::GridAxes grid;
  std::size_t cv_folds = 10;
  double threshold = 0.5;
  double prune_threshold = 0.05;
  std::optional<Category> only;  ///< restrict train/evaluate/explain to one category

  void validate() const {
    if (spi_windows.empty()) throw ValidationError("config: spi_windows is empty");
    for (int k : spi_windows)
      if (!spi::is_standard_window(k)) throw ValidationError("config: unsupported SPI window " + std::to_string(k));
    if (study_window.start && study_window.end && *study_window.end < *study_window.start) {
      throw ValidationError("config: study window is empty (end precedes start)");
    }
    const double total = split.train + split.validation + split.test;
    if (!(split.train > 0 && split.validation > 0 && split.test > 0) || std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("config: split fractions must be positive and sum to 1");
    }
    resample.validate();
    boost.validate();
    if (grid.max_depth.empty() || grid.gamma.empty() || grid.lambda.empty() || grid.scale_pos_weight.empty()) {
      throw ValidationError("config: every grid axis needs at least one value");
    }
    if (cv_folds < 2) throw ValidationError("config: cv_folds must be at least 2");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("config: threshold must lie in (0, 1)");
    if (!(prune_threshold > 0.0 && prune_threshold < 1.0)) {
      throw ValidationError("config: prune_threshold must lie in (0, 1)");
    }
  }
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

inline void reject_unknown(const json& object, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!object.is_object()) throw ValidationError("config: " + std::string(where) + " must be an object");
  for (const auto& [key, value] : object.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("config: unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T get(const json& object, const char* key, T fallback) {
  if (!object.contains(key)) return fallback;
  try {
    return object.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: key '") + key + "' has the wrong type");
  }
}

inline std::optional<YearMonth> month_or_null(const json& object, const char* key) {
  if (!object.contains(key) || object.at(key).is_null()) return std::nullopt;
  auto text = get<std::string>(object, key, "");
  auto m = YearMonth::parse(text);
  if (!m) throw ValidationError(std::string("config: ") + key + " must be YYYY-MM, got '" + text + "'");
  return m;
}

}  // namespace detail

/// Builds a config from JSON; relative paths resolve against `base_dir`.
[[nodiscard]] inline PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  using detail::get;
  detail::reject_unknown(j,
                         {"precip", "impacts", "regions", "output_dir", "study_window", "spi_windows", "split", "seed",
                          "resample", "boost", "grid", "cv_folds", "threshold", "prune_threshold"},
                         "config");
  PipelineConfig c;
  auto path = [&](const char* key, bool required, fs::path fallback = {}) {
    if (!j.contains(key)) {
      if (required) throw ValidationError(std::string("config: missing required key '") + key + "'");
      return fallback.is_relative() ? base_dir / fallback : fallback;
    }
    fs::path p = get<std::string>(j, key, "");
    return p.is_relative() ? base_dir / p : p;
  };
  c.precip = path("precip", true);
  c.impacts = path("impacts", true);
  c.regions = path("regions", true);
  c.output_dir = path("output_dir", false, "out");
  if (j.contains("study_window")) {
    const auto& w = j.at("study_window");
    detail::reject_unknown(w, {"start", "end"}, "study_window");
    c.study_window = {detail::month_or_null(w, "start"), detail::month_or_null(w, "end")};
  }
  c.spi_windows = get(j, "spi_windows", c.spi_windows);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::reject_unknown(s, {"train", "validation", "test"}, "split");
    c.split = {get(s, "train", c.split.train), get(s, "validation", c.split.validation), get(s, "test", c.split.test)};
  }
  c.seed = get<std::uint64_t>(j, "seed", 0);
  if (j.contains("resample")) {
    const auto& r = j.at("resample");
    detail::reject_unknown(r, {"enabled", "trigger_threshold", "smote_k", "oversample_ratio", "undersample_ratio"},
                           "resample");
    c.resample_enabled = get(r, "enabled", true);
    c.resample.trigger_threshold = get(r, "trigger_threshold", c.resample.trigger_threshold);
    c.resample.smote_k = get(r, "smote_k", c.resample.smote_k);
    c.resample.oversample_ratio = get(r, "oversample_ratio", c.resample.oversample_ratio);
    c.resample.undersample_ratio = get(r, "undersample_ratio", c.resample.undersample_ratio);
  }
  if (j.contains("boost")) {
    const auto& b = j.at("boost");
    detail::reject_unknown(b, {"eta", "n_rounds", "min_child_weight", "base_score"}, "boost");
    c.boost.eta = get(b, "eta", c.boost.eta);
    c.boost.n_rounds = get(b, "n_rounds", c.boost.n_rounds);
    c.boost.min_child_weight = get(b, "min_child_weight", c.boost.min_child_weight);
    c.boost.base_score = get(b, "base_score", c.boost.base_score);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::reject_unknown(g, {"max_depth", "gamma", "lambda", "scale_pos_weight"}, "grid");
    c.grid.max_depth = get(g, "max_depth", c.grid.max_depth);
    c.grid.gamma = get(g, "gamma", c.grid.gamma);
    c.grid.lambda = get(g, "lambda", c.grid.lambda);
    if (g.contains("scale_pos_weight")) {
      c.grid.scale_pos_weight.clear();
      for (const auto& v : g.at("scale_pos_weight")) {
        if (v.is_string() && v.get<std::string>() == "balanced") {
          c.grid.scale_pos_weight.push_back(0.0);
        } else if (v.is_number() && v.get<double>() > 0.0) {
          c.grid.scale_pos_weight.push_back(v.get<double>());
        } else {
          throw ValidationError("config: grid.scale_pos_weight entries must be positive numbers or \"balanced\"");
        }
      }
    }
  }
  c.cv_folds = get(j, "cv_folds", c.cv_folds);
  c.threshold = get(j, "threshold", c.threshold);
  c.prune_threshold = get(j, "prune_threshold", c.prune_threshold);
  c.resample.seed = c.seed;
  c.validate();
  return c;
}

[[nodiscard]] inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Artifact files

namespace files {
inline const char* const spi = "spi.csv";
inline const char* const design = "design.csv";
inline const char* const categories = "categories.csv";
inline const char* const splits = "splits.csv";
inline const char* const metrics_table = "metrics_table.csv";
inline const char* const metrics_detail = "metrics_detail.csv";
inline const char* const report = "report.txt";

inline std::string model(Category c) { return "model_" + std::string(to_token(c)) + ".txt"; }
inline std::string cv(Category c) { return "cv_" + std::string(to_token(c)) + ".csv"; }
inline std::string best(Category c) { return "best_" + std::string(to_token(c)) + ".json"; }
inline fs::path shap_dir(Category c) { return fs::path("shap") / std::string(to_token(c)); }
}  // namespace files

namespace detail {

inline std::ofstream create(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::ifstream open_artifact(const fs::path& path, std::string_view produced_by) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("missing artifact " + path.string() + " (run the '" + std::string(produced_by) + "' stage first)");
  }
  return in;
}

}  // namespace detail

struct CategoryInfo {
  Category category = Category::agriculture;
  std::size_t positives = 0;
  std::size_t total = 0;
  bool retained = false;

  [[nodiscard]] double ratio() const {
    return total == 0 ? 0.0 : static_cast<double>(positives) / static_cast<double>(total);
  }
};

inline void write_categories(std::ostream& out, const std::vector<CategoryInfo>& info) {
  out << "category,positives,total,ratio,retained\n";
  for (const auto& c : info) {
    out << to_token(c.category) << ',' << c.positives << ',' << c.total << ',' << format_double(c.ratio()) << ','
        << (c.retained ? 1 : 0) << '\n';
  }
}

[[nodiscard]] inline std::vector<CategoryInfo> read_categories(std::istream& in, const std::string& source) {
  std::vector<CategoryInfo> out;
  static constexpr std::array<std::string_view, 5> header{"category", "positives", "total", "ratio", "retained"};
  ingest::read_csv(in, source, header, [&](const std::vector<std::string_view>& f, std::size_t row) {
    auto p = parse_int(f[1]);
    auto t = parse_int(f[2]);
    if (!p || !t || *p < 0 || *t < *p || (f[4] != "0" && f[4] != "1")) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": malformed category summary");
    }
    out.push_back({require_category(f[0]), static_cast<std::size_t>(*p), static_cast<std::size_t>(*t), f[4] == "1"});
  });
  return out;
}

inline void write_splits(std::ostream& out, const std::map<Category, features::SplitSet>& splits) {
  out << "category,split,row\n";
  for (const auto& [c, s] : splits) {
    for (auto i : s.train) out << to_token(c) << ",train," << i << '\n';
    for (auto i : s.validation) out << to_token(c) << ",validation," << i << '\n';
    for (auto i : s.test) out << to_token(c) << ",test," << i << '\n';
  }
}

[[nodiscard]] inline std::map<Category, features::SplitSet> read_splits(std::istream& in, const std::string& source) {
  std::map<Category, features::SplitSet> out;
  static constexpr std::array<std::string_view, 3> header{"category", "split", "row"};
  ingest::read_csv(in, source, header, [&](const std::vector<std::string_view>& f, std::size_t row) {
    auto& s = out[require_category(f[0])];
    auto index = parse_int(f[2]);
    if (!index || *index < 0) throw ValidationError(source + ": row " + std::to_string(row) + ": bad row index");
    const auto i = static_cast<std::size_t>(*index);
    if (f[1] == "train") {
      s.train.push_back(i);
    } else if (f[1] == "validation") {
      s.validation.push_back(i);
    } else if (f[1] == "test") {
      s.test.push_back(i);
    } else {
      throw ValidationError(source + ": row " + std::to_string(row) + ": unknown split '" + std::string(f[1]) + "'");
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stage: spi

[[nodiscard]] inline features::SpiTable run_spi(const PipelineConfig& config) {
  const auto precip = ingest::load_precip(config.precip.string());
  std::vector<std::map<int, spi::SpiSeries>> per_region;
  for (const auto& series : precip) per_region.push_back(spi::compute_spi(series, config.spi_windows));
  auto table = features::make_spi_table(per_region, config.spi_windows);
  auto out = detail::create(config.output_dir / files::spi);
  features::write_spi_table(out, table);
  log_info("spi: " + std::to_string(precip.size()) + " regions, " + std::to_string(table.rows.size()) + " rows");
  return table;
}

// ---------------------------------------------------------------------------
// Stage: prepare

struct Prepared {
  features::DesignMatrix design;
  std::map<Category, features::LabelVector> labels;
  std::vector<CategoryInfo> categories;
  std::map<Category, features::SplitSet> splits;
};

[[nodiscard]] inline Prepared run_prepare(const PipelineConfig& config) {
  auto spi_in = detail::open_artifact(config.output_dir / files::spi, "spi");
  const auto table = features::read_spi_table(spi_in, (config.output_dir / files::spi).string());
  const auto regions = ingest::load_regions(config.regions.string());
  const auto impacts = ingest::load_impacts(config.impacts.string());

  std::vector<spi::MonthlySeries> precip_ids;
  std::set<std::string> seen;
  for (const auto& row : table.rows)
    if (seen.insert(row.region_id).second) precip_ids.push_back({row.region_id, row.month, {}});
  ingest::check_references(precip_ids, impacts, regions);

  Prepared p;
  p.design = features::build_design_matrix(table, regions, config.study_window);
  p.labels = features::summarize_impacts(impacts, p.design.rows);
  const auto pruned = features::prune_categories(p.labels, config.prune_threshold);
  for (const auto& [c, lv] : p.labels) {
    p.categories.push_back({c, lv.positives(), lv.values.size(), pruned.kept.count(c) > 0});
  }
  for (const auto& [c, lv] : pruned.kept) {
    p.splits[c] = features::stratified_split(lv, config.split, derive_seed(config.seed, "split", to_token(c)));
  }

  auto design_out = detail::create(config.output_dir / files::design);
  features::write_design(design_out, p.design, p.labels);
  auto categories_out = detail::create(config.output_dir / files::categories);
  write_categories(categories_out, p.categories);
  auto splits_out = detail::create(config.output_dir / files::splits);
  write_splits(splits_out, p.splits);
  log_info("prepare: " + std::to_string(p.design.rows.size()) + " rows, " +
           std::to_string(p.design.column_names.size()) + " features, " + std::to_string(pruned.kept.size()) +
           " categories retained");
  return p;
}

/// The prepare-stage artifacts, reloaded from disk.
struct PreparedArtifacts {
  features::LabelledDesign design;
  std::vector<CategoryInfo> categories;
  std::map<Category, features::SplitSet> splits;

  [[nodiscard]] std::vector<Category> retained(const std::optional<Category>& only) const {
    std::vector<Category> out;
    for (const auto& c : categories) {
      if (!c.retained) continue;
      if (only && *only != c.category) continue;
      out.push_back(c.category);
    }
    if (only && out.empty()) {
      throw ValidationError("category " + std::string(to_token(*only)) + " was not retained by the prepare stage");
    }
    return out;
  }
  [[nodiscard]] const CategoryInfo& info(Category c) const {
    for (const auto& i : categories)
      if (i.category == c) return i;
    throw ValidationError("no summary for category " + std::string(to_token(c)));
  }
};

[[nodiscard]] inline PreparedArtifacts load_prepared(const fs::path& output_dir) {
  PreparedArtifacts a;
  auto design_in = detail::open_artifact(output_dir / files::design, "prepare");
  a.design = features::read_design(design_in, (output_dir / files::design).string());
  auto categories_in = detail::open_artifact(output_dir / files::categories, "prepare");
  a.categories = read_categories(categories_in, (output_dir / files::categories).string());
  auto splits_in = detail::open_artifact(output_dir / files::splits, "prepare");
  a.splits = read_splits(splits_in, (output_dir / files::splits).string());
  return a;
}

// ---------------------------------------------------------------------------
// Stage: train

struct TrainOutcome {
  Category category = Category::agriculture;
  eval::GridSearchResult search;
  gbt::Ensemble model;
  bool resampled = false;
  std::size_t synthetic = 0;
  eval::MetricsReport validation;
};

[[nodiscard]] inline TrainOutcome train_category(const PipelineConfig& config, const PreparedArtifacts& prepared,
                                                 Category category) {
  const auto& dm = prepared.design.matrix;
  const auto& labels = prepared.design.labels.at(category).values;
  const auto& split = prepared.splits.at(category);
  const Matrix x = dm.values.select_rows(split.train);
  const std::vector<int> y = select<int>(labels, split.train);
  const auto positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double ratio = (static_cast<double>(y.size()) - positives) / positives;

  TrainOutcome out;
  out.category = category;
  const auto grid = eval::expand_grid(config.grid, config.boost, ratio);
  const auto folds = eval::stratified_kfold(y, config.cv_folds, derive_seed(config.seed, "folds", to_token(category)));
  std::optional<resample::ResamplePlan> plan;
  if (config.resample_enabled) {
    plan = config.resample;
    plan->seed = derive_seed(config.seed, "resample", to_token(category));
  }
  out.search = eval::grid_search(x, y, dm.layout, grid, folds, plan, config.threshold);

  Matrix fit_x = x;
  std::vector<int> fit_y = y;
  if (plan && resample::needs_resampling(y, plan->trigger_threshold)) {
    auto final_plan = *plan;
    final_plan.seed = derive_seed(plan->seed, "final");
    auto balanced = resample::balance(x, y, dm.layout, final_plan);
    fit_x = std::move(balanced.rows);
    fit_y = std::move(balanced.labels);
    out.resampled = true;
    out.synthetic = balanced.synthetic;
  }
  out.model = gbt::train(fit_x, fit_y, out.search.best_config());
  out.validation = eval::evaluate(out.model, dm.values.select_rows(split.validation),
                                  select<int>(labels, split.validation), config.threshold);
  out.validation.category = category;
  return out;
}

inline void write_cv_report(std::ostream& out, const eval::GridSearchResult& search) {
  out << "grid_index,fold,max_depth,gamma,lambda,scale_pos_weight,f2,pr_auc,recall,precision,accuracy\n";
  for (const auto& s : search.scores) {
    const auto& c = search.grid[s.grid_index];
    out << s.grid_index << ',' << s.fold << ',' << c.max_depth << ',' << format_double(c.gamma) << ','
        << format_double(c.lambda) << ',' << format_double(c.scale_pos_weight) << ',' << format_double(s.metrics.f2)
        << ',' << format_double(s.metrics.pr_auc) << ',' << format_double(s.metrics.recall) << ','
        << format_double(s.metrics.precision) << ',' << format_double(s.metrics.accuracy) << '\n';
  }
}

[[nodiscard]] inline json metrics_json(const eval::MetricsReport& m) {
  return json{{"accuracy", m.accuracy}, {"recall", m.recall},    {"precision", m.precision},
              {"f2", m.f2},             {"pr_auc", m.pr_auc},    {"threshold", m.threshold},
              {"tp", m.counts.tp},      {"fp", m.counts.fp},     {"tn", m.counts.tn},
              {"fn", m.counts.fn}};
}

inline std::vector<TrainOutcome> run_train(const PipelineConfig& config) {
  const auto prepared = load_prepared(config.output_dir);
  std::vector<TrainOutcome> outcomes;
  for (auto c : prepared.retained(config.only)) {
    auto outcome = train_category(config, prepared, c);
    {
      auto out = detail::create(config.output_dir / files::model(c));
      gbt::save(out, outcome.model);
    }
    {
      auto out = detail::create(config.output_dir / files::cv(c));
      write_cv_report(out, outcome.search);
    }
    const auto& best = outcome.search.best_config();
    json j{{"category", std::string(to_token(c))},
           {"grid_index", outcome.search.best},
           {"config",
            {{"eta", best.eta},
             {"n_rounds", best.n_rounds},
             {"max_depth", best.max_depth},
             {"gamma", best.gamma},
             {"lambda", best.lambda},
             {"scale_pos_weight", best.scale_pos_weight},
             {"min_child_weight", best.min_child_weight},
             {"base_score", best.base_score}}},
           {"cv_mean_f2", outcome.search.mean_f2[outcome.search.best]},
           {"cv_mean_pr_auc", outcome.search.mean_pr_auc[outcome.search.best]},
           {"resampled", outcome.resampled},
           {"synthetic_rows", outcome.synthetic},
           {"validation", metrics_json(outcome.validation)}};
    auto out = detail::create(config.output_dir / files::best(c));
    out << j.dump(2) << '\n';
    log_info("train: " + std::string(to_token(c)) + " best grid point " + std::to_string(outcome.search.best) +
             " (cv F2 " + format_fixed(outcome.search.mean_f2[outcome.search.best], 3) + ")");
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

[[nodiscard]] inline gbt::Ensemble load_model(const fs::path& output_dir, Category c) {
  auto in = detail::open_artifact(output_dir / files::model(c), "train");
  return gbt::load(in);
}

// ---------------------------------------------------------------------------
// Stage: evaluate

inline const char* const kMetricsTableHeader = "Category,Ratio of Impacts,Accuracy,Recall,F2 Score";

inline std::vector<eval::MetricsReport> run_evaluate(const PipelineConfig& config) {
  const auto prepared = load_prepared(config.output_dir);
  const auto& dm = prepared.design.matrix;
  std::vector<eval::MetricsReport> reports;
  for (auto c : prepared.retained(config.only)) {
    const auto model = load_model(config.output_dir, c);
    const auto& split = prepared.splits.at(c);
    const auto& labels = prepared.design.labels.at(c).values;
    auto m = eval::evaluate(model, dm.values.select_rows(split.test), select<int>(labels, split.test),
                            config.threshold);
    m.category = c;
    m.ratio = prepared.info(c).ratio();
    reports.push_back(m);
  }
  auto table = detail::create(config.output_dir / files::metrics_table);
  table << kMetricsTableHeader << '\n';
  for (const auto& m : reports) {
    table << to_token(m.category) << ',' << format_double(m.ratio) << ',' << format_double(m.accuracy) << ','
          << format_double(m.recall) << ',' << format_double(m.f2) << '\n';
  }
  auto detail_out = detail::create(config.output_dir / files::metrics_detail);
  detail_out << "category,ratio,accuracy,recall,precision,f2,pr_auc,threshold,tp,fp,tn,fn\n";
  for (const auto& m : reports) {
    detail_out << to_token(m.category) << ',' << format_double(m.ratio) << ',' << format_double(m.accuracy) << ','
               << format_double(m.recall) << ',' << format_double(m.precision) << ',' << format_double(m.f2) << ','
               << format_double(m.pr_auc) << ',' << format_double(m.threshold) << ',' << m.counts.tp << ','
               << m.counts.fp << ',' << m.counts.tn << ',' << m.counts.fn << '\n';
  }
  return reports;
}

struct MetricsRow {
  Category category = Category::agriculture;
  double ratio = 0, accuracy = 0, recall = 0, f2 = 0;
};

[[nodiscard]] inline std::vector<MetricsRow> read_metrics_table(std::istream& in, const std::string& source) {
  static constexpr std::array<std::string_view, 5> header{"Category", "Ratio of Impacts", "Accuracy", "Recall",
                                                          "F2 Score"};
  std::vector<MetricsRow> out;
  ingest::read_csv(in, source, header, [&](const std::vector<std::string_view>& f, std::size_t row) {
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      auto x = parse_double(f[i + 1]);
      if (!x) throw ValidationError(source + ": row " + std::to_string(row) + ": bad number");
      v[i] = *x;
    }
    out.push_back({require_category(f[0]), v[0], v[1], v[2], v[3]});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stage: explain

struct ExplainOutcome {
  Category category = Category::agriculture;
  explain::ShapMatrix shap;
  explain::ShapSummary summary;
  double max_additivity_error = 0.0;
};

/// Largest |base + sum(phi) - margin| over the rows.
[[nodiscard]] inline double additivity_error(const gbt::Ensemble& model, const explain::ShapMatrix& shap,
                                             const Matrix& rows) {
  double worst = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double sum = shap.base_value;
    for (double v : shap.values.row(r)) sum += v;
    worst = std::max(worst, std::abs(sum - model.margin(rows.row(r))));
  }
  return worst;
}

inline std::vector<ExplainOutcome> run_explain(const PipelineConfig& config) {
  const auto prepared = load_prepared(config.output_dir);
  const auto& dm = prepared.design.matrix;
  std::vector<ExplainOutcome> outcomes;
  for (auto c : prepared.retained(config.only)) {
    const auto model = load_model(config.output_dir, c);
    const Matrix rows = dm.values.select_rows(prepared.splits.at(c).test);
    ExplainOutcome o;
    o.category = c;
    o.shap = explain::shap_values(model, rows);
    o.max_additivity_error = additivity_error(model, o.shap, rows);
    if (o.max_additivity_error > 1e-6) {
      throw NumericalError("explain: " + std::string(to_token(c)) + ": attributions miss the margin by " +
                           format_double(o.max_additivity_error));
    }
    o.summary = explain::summarize(o.shap, rows, dm.layout.numeric);

    const fs::path dir = config.output_dir / files::shap_dir(c);
    {
      auto out = detail::create(dir / "shap_summary.csv");
      out << "feature,mean_abs_shap,rank\n";
      for (std::size_t rank = 0; rank < o.summary.ranking.order.size(); ++rank) {
        const auto f = o.summary.ranking.order[rank];
        out << dm.column_names[f] << ',' << format_double(o.summary.ranking.mean_abs[f]) << ',' << rank + 1 << '\n';
      }
    }
    for (const auto& s : o.summary.scatter) {
      const auto& name = dm.column_names[s.feature];
      auto out = detail::create(dir / ("shap_scatter_" + name + ".csv"));
      out << "feature_value,shap_value\n";
      for (std::size_t r = 0; r < s.feature_values.size(); ++r) {
        out << format_double(s.feature_values[r]) << ',' << format_double(s.shap_values[r]) << '\n';
      }
    }
    const std::string title = std::string(display_name(c));
    for (std::size_t k = 0; k < std::min<std::size_t>(2, o.summary.scatter.size()); ++k) {
      const auto& s = o.summary.scatter[k];
      const auto& name = dm.column_names[s.feature];
      const auto me = explain::main_effects(model, rows, s.feature);
      {
        auto out = detail::create(dir / ("main_effect_" + name + ".csv"));
        out << "feature_value,main_effect\n";
        for (std::size_t r = 0; r < me.feature_values.size(); ++r) {
          out << format_double(me.feature_values[r]) << ',' << format_double(me.main_effects[r]) << '\n';
        }
      }
      {
        auto out = detail::create(dir / ("shap_scatter_" + name + ".svg"));
        svg::scatter(out, s.feature_values, s.shap_values,
                     {title + ": SHAP values for " + name, name, "SHAP value (log-odds)"});
      }
      auto out = detail::create(dir / ("main_effect_" + name + ".svg"));
      svg::scatter(out, me.feature_values, me.main_effects,
                   {title + ": SHAP main effect of " + name, name, "main effect (log-odds)", 640, 420, 60, 2.0,
                    "#d62728"});
    }
    log_info("explain: " + std::string(to_token(c)) + " top feature " +
             dm.column_names[o.summary.ranking.order.front()]);
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

// ---------------------------------------------------------------------------
// Stage: report

inline std::string expected_files() {
  return std::string(files::spi) + ", " + files::design + ", " + files::categories + ", " + files::splits +
         ", model_<category>.txt, cv_<category>.csv, best_<category>.json, " + files::metrics_table + ", " +
         files::metrics_detail + ", shap/<category>/shap_summary.csv";
}

/// Aligned text summary of a finished run.
inline void render_report(const fs::path& output_dir, std::ostream& out) {
  for (const char* name : {files::metrics_table, files::categories}) {
    if (!fs::exists(output_dir / name)) {
      throw IoError("report: " + (output_dir / name).string() + " not found; a finished run leaves these files in " +
                    output_dir.string() + ": " + expected_files());
    }
  }
  std::ifstream categories_in(output_dir / files::categories);
  const auto categories = read_categories(categories_in, (output_dir / files::categories).string());
  std::ifstream table_in(output_dir / files::metrics_table);
  const auto rows = read_metrics_table(table_in, (output_dir / files::metrics_table).string());

  const std::array<std::string, 5> header{"Category", "Ratio of Impacts", "Accuracy", "Recall", "F2 Score"};
  std::size_t name_width = header[0].size();
  for (const auto& r : rows) name_width = std::max(name_width, display_name(r.category).size());
  auto cell = [&](std::string_view text, std::size_t width, bool left) {
    out << (left ? std::left : std::right) << std::setw(static_cast<int>(width)) << text;
  };
  cell(header[0], name_width, true);
  for (std::size_t i = 1; i < header.size(); ++i) {
    out << "  ";
    cell(header[i], header[i].size(), false);
  }
  out << '\n';
  for (const auto& r : rows) {
    const double ratio = [&] {
      for (const auto& c : categories)
        if (c.category == r.category) return c.ratio();
      return r.ratio;
    }();
    cell(display_name(r.category), name_width, true);
    const std::array<double, 4> v{ratio, r.accuracy, r.recall, r.f2};
    for (std::size_t i = 0; i < 4; ++i) {
      out << "  ";
      cell(format_fixed(v[i], 2), header[i + 1].size(), false);
    }
    out << '\n';
  }
  std::string dropped;
  for (const auto& c : categories) {
    if (c.retained) continue;
    dropped += (dropped.empty() ? "" : ", ") + std::string(display_name(c.category)) + " (" + format_fixed(c.ratio(), 3) +
               ")";
  }
  if (!dropped.empty()) out << "\nDropped below the prune threshold: " << dropped << '\n';

  for (const auto& r : rows) {
    const fs::path summary = output_dir / files::shap_dir(r.category) / "shap_summary.csv";
    std::ifstream in(summary);
    if (!in) continue;
    out << '\n' << display_name(r.category) << ": features by mean |SHAP|\n";
    std::string line;
    std::getline(in, line);
    for (int n = 0; n < 5 && std::getline(in, line); ++n) {
      auto f = ingest::split_fields(line);
      if (f.size() != 3) break;
      out << "  " << std::setw(2) << std::right << f[2] << ". " << std::left << std::setw(14) << f[0];
      auto v = parse_double(f[1]);
      out << (v ? format_fixed(*v, 4) : std::string(f[1])) << '\n';
    }
  }
}

inline void run_report(const PipelineConfig& config, std::ostream& out) {
  std::ostringstream text;
  render_report(config.output_dir, text);
  out << text.str();
  auto file = detail::create(config.output_dir / files::report);
  file << text.str();
}

// ---------------------------------------------------------------------------
// All stages

namespace detail {

/// Runs one stage, prefixing any failure with the stage name.
template <typename F>
auto stage(std::string_view name, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + std::string(name) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("stage " + std::string(name) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + std::string(name) + ": " + e.what());
  }
}

}  // namespace detail

inline void run_all(const PipelineConfig& config, std::ostream& report_out) {
  detail::stage("spi", [&] { return run_spi(config); });
  detail::stage("prepare", [&] { return run_prepare(config); });
  detail::stage("train", [&] { return run_train(config); });
  detail::stage("evaluate", [&] { return run_evaluate(config); });
  detail::stage("explain", [&] { return run_explain(config); });
  detail::stage("report", [&] {
    run_report(config, report_out);
    return 0;
  });
}

}  // namespace drought::pipeline
