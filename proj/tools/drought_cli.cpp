// drought: command-line driver for the drought impact pipeline.
//
// Exit status: 0 success, 1 validation failure, 2 I/O failure, 3 numerical failure.

#include <iostream>

#include <CLI11.hpp>

#include "drought/fixture.hpp"
#include "drought/pipeline.hpp"

namespace {

using namespace drought;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string category;
};

pipeline::PipelineConfig resolve(const Options& o) {
  if (o.config.empty()) throw ValidationError("--config <path> is required for this subcommand");
  auto c = pipeline::load_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) {
    c.seed = *o.seed;
    c.resample.seed = *o.seed;
  }
  if (!o.category.empty()) c.only = require_category(o.category);
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"Drought impact assessment pipeline: SPI features, boosted trees, SHAP explanations"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config, "pipeline configuration file (JSON)");
    if (needs_config) opt->required();
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
  };

  auto* spi = app.add_subcommand("spi", "compute the SPI table");
  auto* prepare = app.add_subcommand("prepare", "build the design matrix, labels and splits");
  auto* train = app.add_subcommand("train", "grid-search and fit one model per category");
  auto* evaluate = app.add_subcommand("evaluate", "score the models on the test split");
  auto* explain = app.add_subcommand("explain", "SHAP summaries, scatter data and plots");
  auto* report = app.add_subcommand("report", "print the metrics table and feature rankings");
  auto* run_all = app.add_subcommand("run-all", "run every stage in order");
  auto* fixtures = app.add_subcommand("fixtures", "write the planted-signal synthetic dataset");
  for (auto* sub : {spi, prepare, train, evaluate, explain, run_all}) add_common(sub, true);
  for (auto* sub : {train, evaluate, explain, run_all}) {
    sub->add_option("--category", o.category, "restrict to one category token (e.g. fire)");
  }
  report->add_option("--config", o.config, "pipeline configuration file (JSON)");
  report->add_option("--out", o.out, "output directory of a finished run");
  fixtures->add_option("--out", o.out, "directory for the generated files")->required();
  fixtures->add_option("--seed", o.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*spi) {
    (void)pipeline::run_spi(resolve(o));
  } else if (*prepare) {
    (void)pipeline::run_prepare(resolve(o));
  } else if (*train) {
    (void)pipeline::run_train(resolve(o));
  } else if (*evaluate) {
    for (const auto& m : pipeline::run_evaluate(resolve(o))) {
      std::cout << to_token(m.category) << ": recall " << format_fixed(m.recall, 3) << ", F2 " << format_fixed(m.f2, 3)
                << '\n';
    }
  } else if (*explain) {
    (void)pipeline::run_explain(resolve(o));
  } else if (*report) {
    if (!o.config.empty()) {
      pipeline::run_report(resolve(o), std::cout);
    } else if (!o.out.empty()) {
      pipeline::render_report(o.out, std::cout);
    } else {
      throw ValidationError("report needs --out <dir> or --config <path>");
    }
  } else if (*run_all) {
    pipeline::run_all(resolve(o), std::cout);
  } else if (*fixtures) {
    fixture::FixtureSpec spec;
    if (o.seed) spec.seed = *o.seed;
    fixture::write(fixture::generate(spec), spec, o.out);
    std::cout << "fixture written to " << o.out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const drought::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const drought::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const drought::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
