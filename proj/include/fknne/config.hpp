#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fknne/curves.hpp"
#include "fknne/ensemble.hpp"
#include "fknne/error.hpp"
#include "fknne/io.hpp"
#include "fknne/model.hpp"
#include "fknne/optimizer.hpp"
#include "fknne/semimetrics.hpp"

namespace fknne {

using json = nlohmann::json;

struct CovariateSource {
  std::string name;
  fs::path path;
};

/// How learning/test sets are drawn for each replication.
struct ReplicationSpec {
  int n_splits = 0;
  std::optional<int> learn_size, test_size;            // drawn from the pooled data
  std::optional<int> learn_per_class, test_per_class;  // drawn within each class
};

struct LambdaGridSpec {
  std::vector<double> values;  ///< explicit grid; empty means log-spaced from lambda_max
  int count = 50;
  double ratio = 1e-3;
};

struct ExperimentConfig {
  fs::path base_dir;
  std::vector<CovariateSource> covariates;
  fs::path labels;
  json semimetrics = json::array();  ///< raw entries, resolved against each grid
  std::vector<int> ks;
  std::vector<int> orders;
  bool jump_on_derivative = false;
  bool standardize = true;
  std::vector<PenaltyKind> penalties{PenaltyKind::GlobalLasso};
  LambdaGridSpec lambda;
  int aic_folds = 0;
  FistaConfig solver;
  ReplicationSpec replication;
  int baseline_k = 5;
  std::uint64_t seed = 1;
  fs::path output_dir = "out";
  fs::path cache_dir;  ///< empty disables the feature cache
  TensorFormat cache_format = TensorFormat::Binary;
  int jobs = 1;
  json source;  ///< parsed config, used for hashing

  /// Hash of the canonical config, ignoring output/cache locations and
  /// including the effective seed.
  std::string hash() const {
    json canon = source;
    canon.erase("output");
    canon.erase("cache");
    canon.erase("jobs");
    canon["seed"] = seed;
    return hex64(fnv1a(canon.dump()));
  }
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

// A position is either a domain value or "tN", the N-th (1-based) grid point.
inline double resolve_position(const json& j, const Grid& grid) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s.size() > 1 && s[0] == 't') {
      try {
        const auto idx = std::stoul(s.substr(1));
        if (idx >= 1 && idx <= grid.size()) return grid[idx - 1];
      } catch (const std::exception&) {
      }
    }
    throw ConfigError("position '" + s + "' is not a grid reference t1..t" + std::to_string(grid.size()));
  }
  throw ConfigError("position must be a number or a grid reference, got " + j.dump());
}

inline Interval resolve_interval(const json& j, const Grid& grid, const char* what) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(what) + " must be a [lo, hi] pair");
  return {resolve_position(j[0], grid), resolve_position(j[1], grid)};
}

inline const json& require(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(ctx + ": missing '" + key + "'");
  return j.at(key);
}

}  // namespace detail

/// Parses one semi-metric entry against a grid.
inline SemiMetricSpec parse_semimetric(const json& j, const Grid& grid) {
  if (!j.is_object()) throw ConfigError("semi-metric entry must be an object");
  const auto kind = detail::get_or<std::string>(j, "kind", "");
  const std::string ctx = "semi-metric '" + kind + "'";
  SemiMetricSpec spec;
  spec.centered = detail::get_or<bool>(j, "centered", false);
  if (kind == "eucl") {
    spec.params = metric::Eucl{};
  } else if (kind == "scan") {
    metric::Scan s;
    s.weight.tau = detail::resolve_position(detail::require(j, "tau", ctx), grid);
    s.weight.sigma = detail::require(j, "sigma", ctx).get<double>();
    s.weight.scale = detail::get_or<double>(j, "scale", 1.0);
    spec.params = s;
  } else if (kind == "short_eucl") {
    spec.params = metric::ShortEucl{detail::resolve_interval(detail::require(j, "interval", ctx), grid, "interval")};
  } else if (kind == "mean") {
    spec.params = metric::Mean{};
  } else if (kind == "rel_areas") {
    spec.params = metric::RelAreas{detail::resolve_interval(detail::require(j, "numerator", ctx), grid, "numerator"),
                                   detail::resolve_interval(detail::require(j, "denominator", ctx), grid, "denominator")};
  } else if (kind == "jump") {
    const auto& pts = detail::require(j, "points", ctx);
    if (!pts.is_array() || pts.size() != 2) throw ConfigError(ctx + ": 'points' must be [t_b, t_o]");
    spec.params = metric::Jump{detail::resolve_position(pts[0], grid), detail::resolve_position(pts[1], grid)};
  } else if (kind == "max") {
    spec.params = metric::Max{};
  } else if (kind == "min") {
    spec.params = metric::Min{};
  } else if (kind == "points") {
    const auto& at = detail::require(j, "at", ctx);
    if (!at.is_array() || at.empty()) throw ConfigError(ctx + ": 'at' must be a nonempty list");
    metric::Points p;
    for (const auto& t : at) p.at.push_back(detail::resolve_position(t, grid));
    spec.params = p;
  } else {
    throw ConfigError("unknown semi-metric kind '" + kind + "'");
  }
  // Bind once to surface out-of-range parameters at load time.
  SemiMetricKernel check(spec, std::make_shared<const Grid>(grid));
  return spec;
}

/// Decoded, resolved form of a semi-metric for manifests and cache keys.
inline json semimetric_to_json(const SemiMetricSpec& spec) {
  json j;
  j["kind"] = std::string(kind_name(spec.kind()));
  j["centered"] = spec.centered;
  std::visit(
      [&j](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, metric::Scan>) {
          j["tau"] = p.weight.tau;
          j["sigma"] = p.weight.sigma;
          j["scale"] = p.weight.scale;
        } else if constexpr (std::is_same_v<P, metric::ShortEucl>) {
          j["interval"] = {p.range.lo, p.range.hi};
        } else if constexpr (std::is_same_v<P, metric::RelAreas>) {
          j["numerator"] = {p.numerator.lo, p.numerator.hi};
          j["denominator"] = {p.denominator.lo, p.denominator.hi};
        } else if constexpr (std::is_same_v<P, metric::Jump>) {
          j["points"] = {p.t_b, p.t_o};
        } else if constexpr (std::is_same_v<P, metric::Points>) {
          j["at"] = p.at;
        }
      },
      spec.params);
  return j;
}

/// Short human-readable tuple label, e.g. "short_eucl[1,17] centered a=0 k=21 logpgram".
inline std::string describe(const TupleSpec& t, const std::vector<std::string>& covariate_names) {
  std::string s(kind_name(t.semimetric.kind()));
  std::visit(
      [&s](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, metric::Scan>) {
          s += "[tau=" + format_double(p.weight.tau) + "]";
        } else if constexpr (std::is_same_v<P, metric::ShortEucl>) {
          s += "[" + format_double(p.range.lo) + "," + format_double(p.range.hi) + "]";
        } else if constexpr (std::is_same_v<P, metric::RelAreas>) {
          s += "[" + format_double(p.numerator.lo) + "," + format_double(p.numerator.hi) + "]/[" +
               format_double(p.denominator.lo) + "," + format_double(p.denominator.hi) + "]";
        } else if constexpr (std::is_same_v<P, metric::Jump>) {
          s += "[" + format_double(p.t_b) + "," + format_double(p.t_o) + "]";
        } else if constexpr (std::is_same_v<P, metric::Points>) {
          s += "[E=" + std::to_string(p.at.size()) + "]";
        }
      },
      t.semimetric.params);
  if (t.semimetric.centered) s += " centered";
  s += " a=" + std::to_string(t.order) + " k=" + std::to_string(t.k);
  if (t.covariate < covariate_names.size()) s += " " + covariate_names[t.covariate];
  return s;
}

inline json tuple_to_json(const TupleSpec& t, const std::vector<std::string>& covariate_names) {
  json j;
  j["id"] = t.id;
  j["covariate"] = t.covariate + 1;
  j["covariate_name"] = t.covariate < covariate_names.size() ? covariate_names[t.covariate] : "";
  j["order"] = t.order;
  j["k"] = t.k;
  j["semimetric"] = semimetric_to_json(t.semimetric);
  j["label"] = describe(t, covariate_names);
  return j;
}

inline json ensemble_to_json(const EnsembleSpec& spec, const std::vector<std::string>& covariate_names) {
  json arr = json::array();
  for (const auto& t : spec.tuples) arr.push_back(tuple_to_json(t, covariate_names));
  return arr;
}

inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  ExperimentConfig cfg;
  cfg.source = j;
  cfg.base_dir = base_dir;
  try {
    const auto& data = detail::require(j, "data", "config");
    const auto& covs = detail::require(data, "covariates", "data");
    if (!covs.is_array() || covs.empty()) throw ConfigError("data.covariates must be a nonempty list");
    for (const auto& c : covs) {
      cfg.covariates.push_back({detail::get_or<std::string>(c, "name", "x" + std::to_string(cfg.covariates.size() + 1)),
                                (base_dir / detail::require(c, "path", "covariate").get<std::string>()).lexically_normal()});
    }
    cfg.labels = (base_dir / detail::require(data, "labels", "data").get<std::string>()).lexically_normal();

    const auto& ens = detail::require(j, "ensemble", "config");
    cfg.semimetrics = detail::require(ens, "semimetrics", "ensemble");
    if (!cfg.semimetrics.is_array() || cfg.semimetrics.empty()) throw ConfigError("ensemble.semimetrics must be a nonempty list");
    cfg.ks = detail::require(ens, "k", "ensemble").get<std::vector<int>>();
    cfg.orders = detail::require(ens, "orders", "ensemble").get<std::vector<int>>();
    cfg.jump_on_derivative = detail::get_or<bool>(ens, "jump_on_derivative", false);
    const auto scheme = detail::get_or<std::string>(ens, "derivative_scheme", "finite_difference");
    if (scheme != "finite_difference") throw ConfigError("unknown derivative scheme '" + scheme + "'");
    for (int k : cfg.ks) if (k < 1) throw ConfigError("k values must be >= 1");
    for (int a : cfg.orders) if (a < 0) throw ConfigError("derivative orders must be >= 0");
    if (cfg.ks.empty() || cfg.orders.empty()) throw ConfigError("ensemble needs at least one k and one order");
    cfg.baseline_k = detail::get_or<int>(j.value("baseline", json::object()), "k", 5);

    cfg.standardize = detail::get_or<bool>(j, "standardize", true);

    const json model = j.value("model", json::object());
    if (model.contains("penalties")) {
      cfg.penalties.clear();
      for (const auto& p : model.at("penalties")) cfg.penalties.push_back(parse_penalty(p.get<std::string>()));
      if (cfg.penalties.empty()) throw ConfigError("model.penalties must not be empty");
    }
    const json lg = model.value("lambda_grid", json::object());
    cfg.lambda.values = detail::get_or<std::vector<double>>(lg, "values", {});
    cfg.lambda.count = detail::get_or<int>(lg, "count", 50);
    cfg.lambda.ratio = detail::get_or<double>(lg, "ratio", 1e-3);
    if (!cfg.lambda.values.empty()) LambdaGrid{cfg.lambda.values}.validate();
    cfg.aic_folds = detail::get_or<int>(model, "aic_folds", 0);
    if (cfg.aic_folds == 1 || cfg.aic_folds < 0) throw ConfigError("model.aic_folds must be 0 or >= 2");

    const json solver = j.value("solver", json::object());
    cfg.solver.max_iters = detail::get_or<int>(solver, "max_iters", 5000);
    cfg.solver.tol = detail::get_or<double>(solver, "tol", 1e-8);
    cfg.solver.step = detail::get_or<double>(solver, "step", 1.0);
    cfg.solver.backtrack = detail::get_or<double>(solver, "backtrack", 0.5);
    cfg.solver.record_trace = detail::get_or<bool>(solver, "trace", false);
    cfg.solver.validate();

    const json rep = j.value("replication", json::object());
    cfg.replication.n_splits = detail::get_or<int>(rep, "n_splits", 0);
    if (rep.contains("learn_size")) cfg.replication.learn_size = rep.at("learn_size").get<int>();
    if (rep.contains("test_size")) cfg.replication.test_size = rep.at("test_size").get<int>();
    if (rep.contains("learn_per_class")) cfg.replication.learn_per_class = rep.at("learn_per_class").get<int>();
    if (rep.contains("test_per_class")) cfg.replication.test_per_class = rep.at("test_per_class").get<int>();

    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 1);
    cfg.output_dir = (base_dir / detail::get_or<std::string>(j, "output", "out")).lexically_normal();
    const json cache = j.value("cache", json::object());
    const auto cache_dir = detail::get_or<std::string>(cache, "dir", "");
    if (!cache_dir.empty()) cfg.cache_dir = (base_dir / cache_dir).lexically_normal();
    const auto fmt = detail::get_or<std::string>(cache, "format", "binary");
    if (fmt == "binary") {
      cfg.cache_format = TensorFormat::Binary;
    } else if (fmt == "csv") {
      cfg.cache_format = TensorFormat::Csv;
    } else {
      throw ConfigError("cache.format must be 'binary' or 'csv'");
    }
    cfg.jobs = detail::get_or<int>(j, "jobs", 1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j, path.has_parent_path() ? path.parent_path().lexically_normal() : fs::path("."));
}

/// Reads every covariate file and the labels; G is the largest label.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  for (const auto& c : cfg.covariates) {
    if (!fs::exists(c.path)) throw ConfigError("covariate file not found: " + c.path.string());
  }
  if (!fs::exists(cfg.labels)) throw ConfigError("labels file not found: " + cfg.labels.string());
  Dataset d;
  for (const auto& c : cfg.covariates) d.covariates.push_back(read_covariate_csv(c.path, c.name));
  d.labels = read_labels(cfg.labels);
  d.class_count = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end());
  d.validate();
  return d;
}

/// Full member grid with semi-metric parameters resolved against each
/// covariate type's grid.
inline EnsembleSpec build_ensemble(const ExperimentConfig& cfg, const Dataset& data) {
  EnsembleSpec spec;
  spec.jump_on_derivative = cfg.jump_on_derivative;
  int id = 1;
  for (std::size_t r = 0; r < data.covariates.size(); ++r) {
    std::vector<SemiMetricSpec> metrics;
    for (const auto& entry : cfg.semimetrics) metrics.push_back(parse_semimetric(entry, *data.covariates[r].grid));
    for (int a : cfg.orders)
      for (int k : cfg.ks)
        for (const auto& m : metrics) spec.tuples.push_back({id++, m, a, k, r});
  }
  spec.validate();
  return spec;
}

inline std::vector<std::string> covariate_names(const Dataset& d) {
  std::vector<std::string> names;
  for (const auto& c : d.covariates) names.push_back(c.name);
  return names;
}

}  // namespace fknne
