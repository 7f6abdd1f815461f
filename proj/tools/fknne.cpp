#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "fknne/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
  std::string cache;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->add_option("--jobs", f.jobs, "maximum parallel jobs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--cache", f.cache, "feature cache directory");
}

fknne::ExperimentConfig load(const CommonFlags& f) {
  auto cfg = fknne::load_config(f.config);
  fknne::RunOptions opt;
  opt.seed = f.seed;
  opt.jobs = f.jobs;
  if (!f.out.empty()) opt.out = f.out;
  if (!f.cache.empty()) opt.cache = f.cache;
  fknne::apply_overrides(cfg, opt);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional kNN ensembles combined by a constrained multinomial logit"};
  app.require_subcommand(1);

  CommonFlags featurize_flags, fit_flags, predict_flags, replicate_flags;
  auto* featurize = app.add_subcommand("featurize", "leave-one-out posteriors for every ensemble member");
  add_common(featurize, featurize_flags);

  auto* fit = app.add_subcommand("fit", "fit the configured penalties along the lambda path");
  add_common(fit, fit_flags);

  auto* predict = app.add_subcommand("predict", "class probabilities for new curves");
  add_common(predict, predict_flags);
  std::string fit_file, predictions_out;
  std::vector<std::string> new_files;
  predict->add_option("--fit", fit_file, "fit_<penalty>.json written by 'fit'")->required();
  predict->add_option("--new", new_files, "one CSV per covariate type")->required();
  predict->add_option("--predictions", predictions_out, "output CSV (default <out>/predictions.csv)");

  auto* evaluate = app.add_subcommand("evaluate", "Brier score and misclassification rate");
  std::string eval_predictions, eval_labels;
  evaluate->add_option("--predictions", eval_predictions, "predictions CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--labels", eval_labels, "true labels, one per line")->required()->check(CLI::ExistingFile);

  auto* replicate = app.add_subcommand("replicate", "repeated random learning/test splits");
  add_common(replicate, replicate_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage problems (missing config file, bad flag values) count as config errors.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*featurize) {
      const auto cfg = load(featurize_flags);
      const auto r = fknne::cmd_featurize(cfg);
      std::cout << "tuples " << r.tuples << ", kept after filtering " << r.kept << "\n"
                << "wrote " << r.manifest.string() << " and " << r.tensor.string() << "\n";
    } else if (*fit) {
      const auto cfg = load(fit_flags);
      const auto r = fknne::cmd_fit(cfg);
      for (std::size_t i = 0; i < r.fits.size(); ++i) {
        const auto& f = r.fits[i].fit();
        std::cout << fknne::penalty_name(f.penalty) << ": lambda " << f.lambda << ", df " << f.df << ", aic "
                  << f.aic << " -> " << r.fit_files[i].string() << "\n";
      }
    } else if (*predict) {
      const auto cfg = load(predict_flags);
      std::vector<fknne::fs::path> paths(new_files.begin(), new_files.end());
      const fknne::fs::path out =
          predictions_out.empty() ? cfg.output_dir / "predictions.csv" : fknne::fs::path(predictions_out);
      const auto pred = fknne::cmd_predict(cfg, fit_file, paths, out);
      std::cout << "predicted " << pred.labels.size() << " curves -> " << out.string() << "\n";
    } else if (*evaluate) {
      const auto r = fknne::cmd_evaluate(eval_predictions, eval_labels);
      std::cout << "n " << r.n_test << "\nbrier " << fknne::format_double(r.brier) << "\nmcr "
                << fknne::format_double(r.mcr) << "\n";
    } else if (*replicate) {
      const auto cfg = load(replicate_flags);
      const auto r = fknne::cmd_replicate(cfg);
      std::cout << "wrote " << r.plan.string() << ", " << r.table.string() << ", " << r.summary.string() << ", "
                << r.importance.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fknne::exit_code_for(e);
  }
  return 0;
}
