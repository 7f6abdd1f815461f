#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fknne/config.hpp"
#include "fknne/curves.hpp"
#include "fknne/ensemble.hpp"
#include "fknne/eval.hpp"
#include "fknne/io.hpp"
#include "fknne/model.hpp"
#include "fknne/parallel.hpp"
#include "fknne/random.hpp"

namespace fknne {

/// Command-line overrides applied on top of a loaded config.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<fs::path> out;
  std::optional<fs::path> cache;
};

inline void apply_overrides(ExperimentConfig& cfg, const RunOptions& opt) {
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.jobs) {
    if (*opt.jobs < 1) throw ConfigError("--jobs must be >= 1");
    cfg.jobs = *opt.jobs;
  }
  if (opt.out) cfg.output_dir = *opt.out;
  if (opt.cache) cfg.cache_dir = *opt.cache;
}

/// Header line embedded in every CSV output.
inline std::string provenance_comment(const ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed) + "\n";
}

inline json provenance_json(const ExperimentConfig& cfg) {
  return {{"config_hash", cfg.hash()}, {"seed", cfg.seed}};
}

// -- feature cache --------------------------------------------------------------------------

inline std::string feature_cache_key(const EnsembleSpec& spec, const Dataset& learn, const Dataset* targets) {
  std::string key = "fknne-features-1|";
  key += ensemble_to_json(spec, covariate_names(learn)).dump();
  key += spec.jump_on_derivative ? "|jump_on_derivative" : "|jump_underived";
  key += "|learn=" + hex64(dataset_hash(learn));
  key += targets ? "|new=" + hex64(dataset_hash(*targets)) : std::string("|loo");
  return hex64(fnv1a(key));
}

/// Posteriors through the on-disk cache when one is configured. Unreadable
/// cache entries are recomputed and overwritten.
inline FeatureTensor cached_posteriors(const ExperimentConfig& cfg, const EnsembleSpec& spec, const Dataset& learn,
                                       const Dataset* targets, int jobs) {
  auto compute = [&] { return targets ? posteriors_new(spec, learn, *targets, jobs) : posteriors(spec, learn, jobs); };
  if (cfg.cache_dir.empty()) return compute();
  const auto ext = cfg.cache_format == TensorFormat::Binary ? ".bin" : ".csv";
  const fs::path path = cfg.cache_dir / ("w_" + feature_cache_key(spec, learn, targets) + ext);
  if (fs::exists(path)) {
    try {
      auto w = read_tensor(path, cfg.cache_format);
      if (w.tuple_ids == spec.ids() && w.n == (targets ? targets->size() : learn.size()) &&
          w.classes == learn.class_count) {
        return w;
      }
    } catch (const Error&) {
    }
  }
  auto w = compute();
  write_tensor(path, w, cfg.cache_format);
  return w;
}

// -- shared pipeline ------------------------------------------------------------------------

struct LearningFeatures {
  EnsembleSpec full;
  FeatureTensor w;
  FilterResult filtered;
};

inline LearningFeatures learning_features(const ExperimentConfig& cfg, const EnsembleSpec& full, const Dataset& learn,
                                          int jobs) {
  LearningFeatures out;
  out.full = full;
  out.w = cached_posteriors(cfg, full, learn, nullptr, jobs);
  out.filtered = filter_zero_variance(differences(out.w), full);
  return out;
}

struct PenaltyFit {
  LambdaGrid grid;
  PathResult path;
  std::size_t selected = 0;

  const FitResult& fit() const { return path.fits.at(selected); }
};

inline PenaltyFit fit_penalty(const ExperimentConfig& cfg, const FilterResult& features, std::span<const int> labels,
                              PenaltyKind kind, std::uint64_t seed) {
  PenaltyFit out;
  if (!cfg.lambda.values.empty()) {
    out.grid.values = cfg.lambda.values;
  } else {
    out.grid = LambdaGrid::log_spaced(lambda_max(features.features, labels, kind), cfg.lambda.count, cfg.lambda.ratio);
  }
  out.path = fit_path(features.features, labels, kind, out.grid, cfg.solver);
  for (auto& f : out.path.fits) f.removed_tuple_ids = features.removed_ids;
  if (cfg.aic_folds >= 2) {
    out.selected = select_by_mean_aic(features.features, labels, kind, out.grid, cfg.solver, cfg.aic_folds, seed);
  } else {
    const auto& best = select_by_aic(out.path.fits);
    out.selected = static_cast<std::size_t>(&best - out.path.fits.data());
  }
  return out;
}

/// Subset of a full ensemble, in the given id order.
inline EnsembleSpec select_tuples(const EnsembleSpec& full, const std::vector<int>& ids) {
  std::map<int, const TupleSpec*> by_id;
  for (const auto& t : full.tuples) by_id[t.id] = &t;
  EnsembleSpec out;
  out.jump_on_derivative = full.jump_on_derivative;
  for (int id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("tuple id " + std::to_string(id) + " is not part of the ensemble");
    out.tuples.push_back(*it->second);
  }
  return out;
}

// -- fit serialization --------------------------------------------------------------------

inline json coefficients_to_json(const FitResult& fit) {
  json coef = json::object();
  const auto& c = fit.coefficients.values;
  for (Eigen::Index l = 0; l < c.cols(); ++l) {
    if (!(c.col(l).array() > 0.0).any()) continue;
    const auto id = std::to_string(fit.tuple_ids[static_cast<std::size_t>(l)]);
    if (c.rows() == 1) {
      coef[id] = c(0, l);
    } else {
      std::vector<double> col(static_cast<std::size_t>(c.rows()));
      for (Eigen::Index g = 0; g < c.rows(); ++g) col[static_cast<std::size_t>(g)] = c(g, l);
      coef[id] = col;
    }
  }
  return coef;
}

inline json fit_to_json(const ExperimentConfig& cfg, const PenaltyFit& pf, const std::vector<double>& scale,
                        const std::vector<int>& degenerate_ids, int classes) {
  const auto& fit = pf.fit();
  json j = provenance_json(cfg);
  j["penalty"] = std::string(penalty_name(fit.penalty));
  j["classes"] = classes;
  j["lambda"] = fit.lambda;
  j["loglik"] = fit.loglik;
  j["df"] = fit.df;
  j["aic"] = fit.aic;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["selection"] = cfg.aic_folds >= 2 ? "mean_aic_" + std::to_string(cfg.aic_folds) + "_fold" : std::string("aic");
  j["scale"] = scale;
  j["tuple_ids"] = fit.tuple_ids;
  j["removed_tuple_ids"] = fit.removed_tuple_ids;
  j["degenerate_tuple_ids"] = degenerate_ids;
  j["coefficients"] = coefficients_to_json(fit);
  return j;
}

struct StoredFit {
  FitResult fit;
  std::vector<double> scale;
  int classes = 0;
};

inline StoredFit fit_from_json(const json& j) {
  StoredFit s;
  try {
    s.fit.penalty = parse_penalty(j.at("penalty").get<std::string>());
    s.classes = j.at("classes").get<int>();
    s.fit.lambda = j.at("lambda").get<double>();
    s.fit.tuple_ids = j.at("tuple_ids").get<std::vector<int>>();
    s.fit.removed_tuple_ids = j.at("removed_tuple_ids").get<std::vector<int>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    s.fit.coefficients = CoefMatrix::zeros(layout_for(s.fit.penalty), s.classes,
                                           static_cast<Eigen::Index>(s.fit.tuple_ids.size()));
    std::map<std::string, Eigen::Index> column;
    for (std::size_t l = 0; l < s.fit.tuple_ids.size(); ++l) {
      column[std::to_string(s.fit.tuple_ids[l])] = static_cast<Eigen::Index>(l);
    }
    auto& c = s.fit.coefficients.values;
    for (const auto& [id, value] : j.at("coefficients").items()) {
      auto it = column.find(id);
      if (it == column.end()) throw DataError("coefficient for unknown tuple id " + id);
      if (value.is_number()) {
        if (c.rows() != 1) throw DataError("tuple " + id + ": expected one coefficient per class");
        c(0, it->second) = value.get<double>();
      } else {
        const auto col = value.get<std::vector<double>>();
        if (static_cast<Eigen::Index>(col.size()) != c.rows()) throw DataError("tuple " + id + ": wrong coefficient count");
        for (Eigen::Index g = 0; g < c.rows(); ++g) c(g, it->second) = col[static_cast<std::size_t>(g)];
      }
    }
    if ((c.array() < 0.0).any()) throw DataError("fitted coefficients must be nonnegative");
  } catch (const json::exception& e) {
    throw DataError(std::string("fit file: ") + e.what());
  }
  return s;
}

// -- table writers --------------------------------------------------------------------------

inline std::string path_csv(const ExperimentConfig& cfg, const PenaltyFit& pf) {
  std::string s = provenance_comment(cfg);
  s += "lambda,df,loglik,aic,iterations,converged,selected\n";
  for (std::size_t i = 0; i < pf.path.fits.size(); ++i) {
    const auto& f = pf.path.fits[i];
    s += format_double(f.lambda) + "," + std::to_string(f.df) + "," + format_double(f.loglik) + "," +
         format_double(f.aic) + "," + std::to_string(f.iterations) + "," + (f.converged ? "1" : "0") + "," +
         (i == pf.selected ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string rfi_csv(const ExperimentConfig& cfg, const FitResult& fit, const EnsembleSpec& spec,
                           const std::vector<std::string>& names) {
  std::string s = provenance_comment(cfg);
  s += "tuple_id,rfi,label\n";
  if (fit.coefficients.nonzeros() == 0) return s;
  const auto importance = rfi(fit.coefficients);
  for (std::size_t l = 0; l < importance.size(); ++l) {
    if (importance[l] == 0.0) continue;
    s += std::to_string(fit.tuple_ids[l]) + "," + format_double(importance[l]) + ",\"" +
         describe(spec.tuples[l], names) + "\"\n";
  }
  return s;
}

inline std::string trace_csv(const ExperimentConfig& cfg, const PenaltyFit& pf) {
  std::string s = provenance_comment(cfg);
  s += "lambda,iteration,objective,step\n";
  for (const auto& f : pf.path.fits) {
    for (const auto& r : f.trace) {
      s += format_double(f.lambda) + "," + std::to_string(r.iteration) + "," + format_double(r.objective) + "," +
           format_double(r.step) + "\n";
    }
  }
  return s;
}

inline std::string predictions_csv(const ExperimentConfig& cfg, const Prediction& pred) {
  std::string s = provenance_comment(cfg);
  s += "i";
  for (Eigen::Index g = 0; g < pred.probabilities.cols(); ++g) s += ",p" + std::to_string(g + 1);
  s += ",label\n";
  for (Eigen::Index i = 0; i < pred.probabilities.rows(); ++i) {
    s += std::to_string(i + 1);
    for (Eigen::Index g = 0; g < pred.probabilities.cols(); ++g) s += "," + format_double(pred.probabilities(i, g));
    s += "," + std::to_string(pred.labels[static_cast<std::size_t>(i)]) + "\n";
  }
  return s;
}

inline Prediction read_predictions_csv(const fs::path& path) {
  const auto lines = detail::data_lines(read_file(path));
  if (lines.empty()) throw DataError(path.string() + ": empty predictions file");
  const auto header = detail::split(lines[0]);
  if (header.size() < 4 || detail::trim(header.front()) != "i" || detail::trim(header.back()) != "label") {
    throw DataError(path.string() + ": expected header i,p1..pG,label");
  }
  const auto G = static_cast<Eigen::Index>(header.size() - 2);
  Prediction p;
  p.probabilities.resize(static_cast<Eigen::Index>(lines.size() - 1), G);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split(lines[r]);
    const std::string where = path.string() + " line " + std::to_string(r + 1);
    if (cells.size() != header.size()) throw DataError(where + ": wrong number of fields");
    for (Eigen::Index g = 0; g < G; ++g) {
      p.probabilities(static_cast<Eigen::Index>(r - 1), g) =
          detail::parse_double(cells[static_cast<std::size_t>(g) + 1], where);
    }
    p.labels.push_back(static_cast<int>(detail::parse_double(cells.back(), where)));
  }
  return p;
}

// -- commands -------------------------------------------------------------------------------

struct FeaturizeOutput {
  fs::path manifest;
  fs::path tensor;
  std::size_t tuples = 0;
  std::size_t kept = 0;
};

/// Standardizes the full data set, computes leave-one-out posteriors for every
/// tuple and writes the tensor plus a manifest decoding every tuple id.
inline FeaturizeOutput cmd_featurize(const ExperimentConfig& cfg) {
  const auto data = load_dataset(cfg);
  const auto names = covariate_names(data);
  Dataset learn = data;
  std::vector<double> scale(data.covariates.size(), 1.0);
  if (cfg.standardize) {
    auto st = standardize(data, data);
    learn = std::move(st.learn);
    scale = st.scale;
  }
  const auto full = build_ensemble(cfg, learn);
  const auto lf = learning_features(cfg, full, learn, cfg.jobs);

  FeaturizeOutput out;
  out.tuples = full.size();
  out.kept = lf.filtered.spec.size();
  const auto ext = cfg.cache_format == TensorFormat::Binary ? ".bin" : ".csv";
  out.tensor = cfg.output_dir / (std::string("features") + ext);
  write_tensor(out.tensor, lf.w, cfg.cache_format, "config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed));

  json m = provenance_json(cfg);
  m["n"] = learn.size();
  m["classes"] = learn.class_count;
  m["p"] = full.size();
  m["jump_on_derivative"] = full.jump_on_derivative;
  m["scale"] = scale;
  m["tensor"] = out.tensor.filename().string();
  m["tuples"] = ensemble_to_json(full, names);
  m["degenerate_tuple_ids"] = lf.w.degenerate_ids;
  m["removed_tuple_ids"] = lf.filtered.removed_ids;
  out.manifest = cfg.output_dir / "manifest.json";
  write_file_atomic(out.manifest, m.dump(2) + "\n");
  return out;
}

struct FitOutput {
  std::vector<fs::path> fit_files;
  std::vector<PenaltyFit> fits;
};

/// Fits every configured penalty on the full (standardized) data set.
inline FitOutput cmd_fit(const ExperimentConfig& cfg) {
  const auto data = load_dataset(cfg);
  const auto names = covariate_names(data);
  Dataset learn = data;
  std::vector<double> scale(data.covariates.size(), 1.0);
  if (cfg.standardize) {
    auto st = standardize(data, data);
    learn = std::move(st.learn);
    scale = st.scale;
  }
  const auto full = build_ensemble(cfg, learn);
  const auto lf = learning_features(cfg, full, learn, cfg.jobs);

  FitOutput out;
  out.fits.resize(cfg.penalties.size());
  parallel_for(cfg.penalties.size(), cfg.jobs, [&](std::size_t i) {
    out.fits[i] = fit_penalty(cfg, lf.filtered, learn.labels, cfg.penalties[i], cfg.seed);
  });
  for (std::size_t i = 0; i < cfg.penalties.size(); ++i) {
    const auto& pf = out.fits[i];
    const std::string tag(penalty_name(cfg.penalties[i]));
    const auto file = cfg.output_dir / ("fit_" + tag + ".json");
    write_file_atomic(file, fit_to_json(cfg, pf, scale, lf.w.degenerate_ids, learn.class_count).dump(2) + "\n");
    write_file_atomic(cfg.output_dir / ("path_" + tag + ".csv"), path_csv(cfg, pf));
    write_file_atomic(cfg.output_dir / ("rfi_" + tag + ".csv"), rfi_csv(cfg, pf.fit(), lf.filtered.spec, names));
    if (cfg.solver.record_trace) write_file_atomic(cfg.output_dir / ("trace_" + tag + ".csv"), trace_csv(cfg, pf));
    out.fit_files.push_back(file);
  }
  return out;
}

/// Reads one CSV per covariate type (same layout as the training files).
inline Dataset load_new_observations(const ExperimentConfig& cfg, const std::vector<fs::path>& paths, int classes) {
  if (paths.size() != cfg.covariates.size()) {
    throw ConfigError("expected " + std::to_string(cfg.covariates.size()) + " new-observation files, got " +
                      std::to_string(paths.size()));
  }
  Dataset d;
  d.class_count = classes;
  for (std::size_t r = 0; r < paths.size(); ++r) {
    if (!fs::exists(paths[r])) throw ConfigError("new-observation file not found: " + paths[r].string());
    d.covariates.push_back(read_covariate_csv(paths[r], cfg.covariates[r].name));
  }
  d.labels.assign(d.covariates.front().curves.size(), 1);
  d.validate(false);
  return d;
}

/// Applies a stored fit to new observations.
inline Prediction cmd_predict(const ExperimentConfig& cfg, const fs::path& fit_file,
                              const std::vector<fs::path>& new_files, const fs::path& out_file) {
  if (!fs::exists(fit_file)) throw ConfigError("fit file not found: " + fit_file.string());
  json j;
  try {
    j = json::parse(read_file(fit_file));
  } catch (const json::exception& e) {
    throw DataError(fit_file.string() + ": " + e.what());
  }
  const auto stored = fit_from_json(j);
  const auto data = load_dataset(cfg);
  if (data.class_count != stored.classes) throw DataError("fit was made for a different number of classes");
  auto new_obs = load_new_observations(cfg, new_files, data.class_count);
  for (std::size_t r = 0; r < new_obs.covariates.size(); ++r) {
    if (!same_grid(new_obs.covariates[r].grid, data.covariates[r].grid)) {
      throw DataError("new observations of '" + new_obs.covariates[r].name + "' are on a different grid");
    }
    new_obs.covariates[r].grid = data.covariates[r].grid;
    for (auto& c : new_obs.covariates[r].curves) c.grid = data.covariates[r].grid;
  }
  const auto learn = apply_scale(data, stored.scale);
  new_obs = apply_scale(new_obs, stored.scale);
  const auto spec = select_tuples(build_ensemble(cfg, learn), stored.fit.tuple_ids);
  auto pred = predict(stored.fit, spec, learn, new_obs, cfg.jobs);
  write_file_atomic(out_file, predictions_csv(cfg, pred));
  return pred;
}

inline ScoreReport cmd_evaluate(const fs::path& predictions_file, const fs::path& labels_file) {
  const auto pred = read_predictions_csv(predictions_file);
  const auto truth = read_labels(labels_file);
  if (truth.size() != pred.labels.size()) {
    throw DataError("predictions have " + std::to_string(pred.labels.size()) + " rows, labels have " +
                    std::to_string(truth.size()));
  }
  return score(truth, pred.probabilities, pred.labels);
}

// -- replication ----------------------------------------------------------------------------

struct Split {
  std::vector<std::size_t> learn;
  std::vector<std::size_t> test;
};

/// Random learning/test partitions; per-class sizes give stratified splits.
inline std::vector<Split> make_splits(std::span<const int> labels, int classes, const ReplicationSpec& rep,
                                      std::uint64_t seed) {
  if (rep.n_splits < 1) throw ConfigError("replication.n_splits must be >= 1");
  const bool per_class = rep.learn_per_class.has_value();
  if (per_class != rep.test_per_class.has_value() || rep.learn_size.has_value() != rep.test_size.has_value() ||
      per_class == rep.learn_size.has_value()) {
    throw ConfigError("replication needs either learn_per_class/test_per_class or learn_size/test_size");
  }
  std::mt19937_64 rng(seed);
  std::vector<Split> splits;
  for (int s = 0; s < rep.n_splits; ++s) {
    Split sp;
    if (per_class) {
      for (int g = 1; g <= classes; ++g) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) if (labels[i] == g) idx.push_back(i);
        const auto nl = static_cast<std::size_t>(*rep.learn_per_class), nt = static_cast<std::size_t>(*rep.test_per_class);
        if (nl + nt > idx.size()) {
          throw ConfigError("class " + std::to_string(g) + " has " + std::to_string(idx.size()) +
                            " curves, split needs " + std::to_string(nl + nt));
        }
        shuffle_in_place(idx, rng);
        sp.learn.insert(sp.learn.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nl));
        sp.test.insert(sp.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(nl),
                       idx.begin() + static_cast<std::ptrdiff_t>(nl + nt));
      }
    } else {
      std::vector<std::size_t> idx(labels.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      const auto nl = static_cast<std::size_t>(*rep.learn_size), nt = static_cast<std::size_t>(*rep.test_size);
      if (nl + nt > idx.size()) {
        throw ConfigError("split needs " + std::to_string(nl + nt) + " curves, data has " + std::to_string(idx.size()));
      }
      shuffle_in_place(idx, rng);
      sp.learn.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nl));
      sp.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(nl), idx.begin() + static_cast<std::ptrdiff_t>(nl + nt));
    }
    std::sort(sp.learn.begin(), sp.learn.end());
    std::sort(sp.test.begin(), sp.test.end());
    splits.push_back(std::move(sp));
  }
  return splits;
}

inline std::string plan_csv(const ExperimentConfig& cfg, const std::vector<Split>& splits) {
  std::string s = provenance_comment(cfg);
  s += "split_id,role,index\n";
  for (std::size_t k = 0; k < splits.size(); ++k) {
    for (auto i : splits[k].learn) s += std::to_string(k + 1) + ",learn," + std::to_string(i + 1) + "\n";
    for (auto i : splits[k].test) s += std::to_string(k + 1) + ",test," + std::to_string(i + 1) + "\n";
  }
  return s;
}

struct ReplicationRow {
  int split_id = 0;
  std::string method;
  std::string penalty;
  double brier = 0.0;
  double mcr = 0.0;
  int df = 0;
  std::optional<double> lambda;
};

struct SplitResult {
  std::vector<ReplicationRow> rows;
  std::vector<std::pair<std::string, std::vector<std::pair<int, double>>>> importance;  // penalty -> (id, rfi)
  int removed = 0;
};

inline constexpr const char* kBaselineMethod = "knn_eucl";
inline constexpr const char* kModelMethod = "cmlm";

/// One learning/test split: standardize on the learning part, featurize,
/// fit each penalty, select lambda by AIC and score on the test part; plus the
/// Euclidean kNN baseline on the first covariate type.
inline SplitResult run_split(const ExperimentConfig& cfg, const Dataset& data, const Split& split, int split_id,
                             int jobs) {
  Dataset learn = data.subset(split.learn);
  Dataset test = data.subset(split.test);
  learn.validate(true);
  if (cfg.standardize) {
    auto st = standardize(learn, test);
    learn = std::move(st.learn);
    test = std::move(st.test);
  }
  const auto full = build_ensemble(cfg, learn);
  const auto lf = learning_features(cfg, full, learn, jobs);
  const auto w_test = cached_posteriors(cfg, lf.filtered.spec, learn, &test, jobs);
  const auto v_test = differences(w_test);

  SplitResult out;
  out.removed = static_cast<int>(lf.filtered.removed_ids.size());
  const auto seed = cfg.seed + static_cast<std::uint64_t>(split_id);
  for (auto kind : cfg.penalties) {
    const auto pf = fit_penalty(cfg, lf.filtered, learn.labels, kind, seed);
    const auto& fit = pf.fit();
    const Eigen::MatrixXd probs = probabilities(v_test, fit.coefficients);
    const auto rep = score(test.labels, probs, argmax_labels(probs));
    out.rows.push_back({split_id, kModelMethod, std::string(penalty_name(kind)), rep.brier, rep.mcr, fit.df, fit.lambda});
    std::vector<std::pair<int, double>> imp;
    if (fit.coefficients.nonzeros() > 0) {
      const auto r = rfi(fit.coefficients);
      for (std::size_t l = 0; l < r.size(); ++l) {
        if (r[l] > 0.0) imp.emplace_back(fit.tuple_ids[l], r[l]);
      }
    }
    out.importance.emplace_back(std::string(penalty_name(kind)), std::move(imp));
  }

  EnsembleSpec baseline;
  baseline.tuples.push_back({1, SemiMetricSpec{metric::Eucl{}, false}, 0, cfg.baseline_k, 0});
  const auto wb = posteriors_new(baseline, learn, test, 1);
  Eigen::MatrixXd pb(static_cast<Eigen::Index>(test.size()), learn.class_count);
  for (int g = 0; g < learn.class_count; ++g) pb.col(g) = wb.w[static_cast<std::size_t>(g)].col(0);
  const auto rep = score(test.labels, pb, argmax_labels(pb));
  out.rows.push_back({split_id, std::string(kBaselineMethod) + "_k" + std::to_string(cfg.baseline_k), "none",
                      rep.brier, rep.mcr, 0, std::nullopt});
  return out;
}

struct ReplicateOutput {
  fs::path plan;
  fs::path table;
  fs::path summary;
  fs::path importance;
  std::vector<ReplicationRow> rows;
};

inline std::string replication_csv(const ExperimentConfig& cfg, const std::vector<ReplicationRow>& rows) {
  std::string s = provenance_comment(cfg);
  s += "split_id,method,penalty,brier,mcr,df,lambda\n";
  for (const auto& r : rows) {
    s += std::to_string(r.split_id) + "," + r.method + "," + r.penalty + "," + format_double(r.brier) + "," +
         format_double(r.mcr) + "," + std::to_string(r.df) + "," + (r.lambda ? format_double(*r.lambda) : "NA") + "\n";
  }
  return s;
}

inline std::string summary_csv(const ExperimentConfig& cfg, const std::vector<ReplicationRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.method, r.penalty);
    if (!groups.count(key)) order.push_back(key);
    groups[key].first.push_back(r.brier);
    groups[key].second.push_back(r.mcr);
  }
  std::string s = provenance_comment(cfg);
  s += "method,penalty,metric,min,q1,median,q3,max,mean,count\n";
  for (const auto& key : order) {
    const auto& [b, m] = groups[key];
    for (const auto& [metric, values] : {std::make_pair("brier", b), std::make_pair("mcr", m)}) {
      const auto box = summarize(values);
      s += key.first + "," + key.second + "," + metric + "," + format_double(box.min) + "," + format_double(box.q1) +
           "," + format_double(box.median) + "," + format_double(box.q3) + "," + format_double(box.max) + "," +
           format_double(box.mean) + "," + std::to_string(box.count) + "\n";
    }
  }
  return s;
}

/// Repeated random splits. The plan is written before any fitting; results
/// are gathered per split and written in split order, so output bytes do not
/// depend on the job count.
inline ReplicateOutput cmd_replicate(const ExperimentConfig& cfg) {
  const auto data = load_dataset(cfg);
  const auto splits = make_splits(data.labels, data.class_count, cfg.replication, cfg.seed);
  ReplicateOutput out;
  out.plan = cfg.output_dir / "plan.csv";
  write_file_atomic(out.plan, plan_csv(cfg, splits));

  std::vector<SplitResult> results(splits.size());
  const int outer = std::min<int>(cfg.jobs, static_cast<int>(splits.size()));
  const int inner = std::max(1, cfg.jobs / std::max(1, outer));
  parallel_for(splits.size(), outer, [&](std::size_t s) {
    results[s] = run_split(cfg, data, splits[s], static_cast<int>(s) + 1, inner);
  });

  std::string imp = provenance_comment(cfg);
  imp += "split_id,penalty,tuple_id,rfi\n";
  for (std::size_t s = 0; s < results.size(); ++s) {
    out.rows.insert(out.rows.end(), results[s].rows.begin(), results[s].rows.end());
    for (const auto& [pen, pairs] : results[s].importance) {
      for (const auto& [id, value] : pairs) {
        imp += std::to_string(s + 1) + "," + pen + "," + std::to_string(id) + "," + format_double(value) + "\n";
      }
    }
  }
  out.table = cfg.output_dir / "replication.csv";
  out.summary = cfg.output_dir / "summary.csv";
  out.importance = cfg.output_dir / "importance.csv";
  write_file_atomic(out.table, replication_csv(cfg, out.rows));
  write_file_atomic(out.summary, summary_csv(cfg, out.rows));
  write_file_atomic(out.importance, imp);
  return out;
}

/// Process exit codes by error category.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace fknne
