#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fknne/curves.hpp"
#include "fknne/error.hpp"
#include "fknne/parallel.hpp"
#include "fknne/semimetrics.hpp"

namespace fknne {

/// One ensemble member {semi-metric, derivative order, k, covariate type}.
struct TupleSpec {
  int id = 0;
  SemiMetricSpec semimetric;
  int order = 0;
  int k = 1;
  std::size_t covariate = 0;  ///< 0-based covariate type index
};

struct EnsembleSpec {
  std::vector<TupleSpec> tuples;
  /// Jump evaluates the underived curve unless this is set.
  bool jump_on_derivative = false;

  std::size_t size() const noexcept { return tuples.size(); }

  std::vector<int> ids() const {
    std::vector<int> out;
    out.reserve(tuples.size());
    for (const auto& t : tuples) out.push_back(t.id);
    return out;
  }

  int effective_order(const TupleSpec& t) const noexcept {
    if (t.semimetric.kind() == SemiMetricKind::Jump && !jump_on_derivative) return 0;
    return t.order;
  }

  void validate() const {
    std::vector<int> seen;
    for (const auto& t : tuples) {
      if (t.k < 1) throw ConfigError("tuple " + std::to_string(t.id) + ": k must be >= 1");
      if (t.order < 0) throw ConfigError("tuple " + std::to_string(t.id) + ": order must be >= 0");
      seen.push_back(t.id);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
      throw ConfigError("tuple ids are not unique");
    }
  }
};

/// Full grid of members: covariate type, then derivative order, then k, then
/// semi-metric (fastest). Ids run 1..p in that order, so p = q*R*M*O.
inline EnsembleSpec enumerate_ensemble(const std::vector<SemiMetricSpec>& semimetrics,
                                       const std::vector<int>& ks, const std::vector<int>& orders,
                                       std::size_t type_count, bool jump_on_derivative = false) {
  EnsembleSpec spec;
  spec.jump_on_derivative = jump_on_derivative;
  int id = 1;
  for (std::size_t r = 0; r < type_count; ++r)
    for (int a : orders)
      for (int k : ks)
        for (const auto& sm : semimetrics) spec.tuples.push_back({id++, sm, a, k, r});
  spec.validate();
  return spec;
}

/// Posterior probabilities w[i][g][l], stored as one n x p matrix per class.
struct FeatureTensor {
  std::size_t n = 0;
  int classes = 0;
  std::vector<int> tuple_ids;
  std::vector<Eigen::MatrixXd> w;
  /// Tuples whose semi-metric could not be evaluated; their columns are uniform.
  std::vector<int> degenerate_ids;

  std::size_t tuples() const noexcept { return tuple_ids.size(); }
  double operator()(std::size_t i, int g, std::size_t l) const {
    return w[static_cast<std::size_t>(g)](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
  }
};

/// v[i][g][l] = w[i][g][l] - w[i][G][l] for g < G.
struct DiffFeatures {
  std::size_t n = 0;
  int classes = 0;
  std::vector<int> tuple_ids;
  std::vector<Eigen::MatrixXd> v;

  std::size_t tuples() const noexcept { return tuple_ids.size(); }
};

namespace detail {

struct DistanceGroup {
  std::size_t covariate = 0;
  int order = 0;
  SemiMetricSpec metric;
  std::vector<std::size_t> members;  // positions in EnsembleSpec::tuples
  int kmax = 0;
};

// Members that share covariate, effective order and semi-metric need the same
// distances; only k differs.
inline std::vector<DistanceGroup> group_tuples(const EnsembleSpec& spec) {
  std::vector<DistanceGroup> groups;
  for (std::size_t l = 0; l < spec.tuples.size(); ++l) {
    const auto& t = spec.tuples[l];
    const int a = spec.effective_order(t);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const DistanceGroup& g) {
      return g.covariate == t.covariate && g.order == a && g.metric == t.semimetric;
    });
    if (it == groups.end()) {
      groups.push_back({t.covariate, a, t.semimetric, {}, 0});
      it = std::prev(groups.end());
    }
    it->members.push_back(l);
    it->kmax = std::max(it->kmax, t.k);
  }
  return groups;
}

inline std::vector<std::vector<double>> embed_all(const SemiMetricKernel& kernel,
                                                  const std::vector<Curve>& curves, int order) {
  std::vector<std::vector<double>> out;
  out.reserve(curves.size());
  const auto& grid = *kernel.grid();
  for (const auto& c : curves) {
    out.push_back(kernel.embed(prepare_values(grid, c.values, order, kernel.spec().centered)));
  }
  return out;
}

// First `count` learn indices ordered by (distance, index), skipping `self`.
inline std::vector<std::size_t> nearest(const std::vector<double>& dist, std::size_t count,
                                        std::optional<std::size_t> self) {
  std::vector<std::size_t> idx;
  idx.reserve(dist.size());
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (!self || *self != j) idx.push_back(j);
  }
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                    });
  idx.resize(count);
  return idx;
}

inline void check_targets(const Dataset& learn, const Dataset& targets) {
  if (targets.covariates.size() != learn.covariates.size()) {
    throw DataError("new observations have " + std::to_string(targets.covariates.size()) +
                    " covariate types, learning data has " + std::to_string(learn.covariates.size()));
  }
  for (std::size_t r = 0; r < learn.covariates.size(); ++r) {
    if (!same_grid(targets.covariates[r].grid, learn.covariates[r].grid)) {
      throw DataError("grid of covariate '" + learn.covariates[r].name +
                      "' differs between learning data and new observations");
    }
  }
}

// Shared featurizer. With targets == nullptr the learning curves are their own
// targets and each one is left out of its own neighbourhood.
inline FeatureTensor featurize(const EnsembleSpec& spec, const Dataset& learn, const Dataset* targets,
                               int jobs) {
  spec.validate();
  const bool loo = targets == nullptr;
  const std::size_t n_learn = learn.size();
  const std::size_t n_out = loo ? n_learn : targets->size();
  const std::size_t p = spec.size();
  const int G = learn.class_count;
  if (!loo) check_targets(learn, *targets);
  for (const auto& t : spec.tuples) {
    if (t.covariate >= learn.covariates.size()) {
      throw ConfigError("tuple " + std::to_string(t.id) + " refers to covariate type " +
                        std::to_string(t.covariate + 1) + " which does not exist");
    }
    const auto needed = static_cast<std::size_t>(t.k) + (loo ? 1 : 0);
    if (n_learn < needed) {
      throw DataError("tuple " + std::to_string(t.id) + " needs " + std::to_string(needed) +
                      " learning curves, only " + std::to_string(n_learn) + " available");
    }
  }

  FeatureTensor out;
  out.n = n_out;
  out.classes = G;
  out.tuple_ids = spec.ids();
  out.w.assign(static_cast<std::size_t>(G), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_out),
                                                                 static_cast<Eigen::Index>(p)));

  const auto groups = group_tuples(spec);
  std::vector<char> degenerate(groups.size(), 0);

  parallel_for(groups.size(), jobs, [&](std::size_t gi) {
    const auto& group = groups[gi];
    const auto& cov = learn.covariates[group.covariate];
    const SemiMetricKernel kernel(group.metric, cov.grid);
    std::vector<std::vector<double>> learn_emb, target_emb;
    try {
      learn_emb = embed_all(kernel, cov.curves, group.order);
      if (!loo) target_emb = embed_all(kernel, targets->covariates[group.covariate].curves, group.order);
    } catch (const DegenerateInputError&) {
      degenerate[gi] = 1;
      for (auto l : group.members) {
        for (int g = 0; g < G; ++g) {
          out.w[static_cast<std::size_t>(g)].col(static_cast<Eigen::Index>(l)).setConstant(1.0 / G);
        }
      }
      return;
    }
    const auto& targets_emb = loo ? learn_emb : target_emb;
    std::vector<double> dist(n_learn);
    std::vector<int> counts(static_cast<std::size_t>(G));
    for (std::size_t i = 0; i < n_out; ++i) {
      for (std::size_t j = 0; j < n_learn; ++j) dist[j] = kernel.between(targets_emb[i], learn_emb[j]);
      const auto nb = nearest(dist, static_cast<std::size_t>(group.kmax),
                              loo ? std::optional<std::size_t>(i) : std::nullopt);
      for (auto l : group.members) {
        const int k = spec.tuples[l].k;
        std::fill(counts.begin(), counts.end(), 0);
        for (int m = 0; m < k; ++m) ++counts[static_cast<std::size_t>(learn.labels[nb[static_cast<std::size_t>(m)]] - 1)];
        for (int g = 0; g < G; ++g) {
          out.w[static_cast<std::size_t>(g)](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) =
              static_cast<double>(counts[static_cast<std::size_t>(g)]) / k;
        }
      }
    }
  });

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (!degenerate[gi]) continue;
    for (auto l : groups[gi].members) out.degenerate_ids.push_back(spec.tuples[l].id);
  }
  std::sort(out.degenerate_ids.begin(), out.degenerate_ids.end());
  return out;
}

}  // namespace detail

/// The k learning indices nearest to `target` under the tuple's semi-metric,
/// ties broken by ascending index. With `self` set, that learning index is
/// excluded (leave-one-out neighbourhood).
inline std::vector<std::size_t> neighborhood(const TupleSpec& tuple, const Dataset& learn,
                                             const Curve& target, std::optional<std::size_t> self,
                                             bool jump_on_derivative = false) {
  if (tuple.covariate >= learn.covariates.size()) throw ConfigError("tuple covariate out of range");
  const auto& cov = learn.covariates[tuple.covariate];
  const auto needed = static_cast<std::size_t>(tuple.k) + (self ? 1 : 0);
  if (learn.size() < needed) {
    throw DataError("neighbourhood of size " + std::to_string(tuple.k) + " needs " +
                    std::to_string(needed) + " learning curves, got " + std::to_string(learn.size()));
  }
  if (!same_grid(target.grid, cov.grid)) throw DataError("target curve is on a different grid");
  const int order = (tuple.semimetric.kind() == SemiMetricKind::Jump && !jump_on_derivative) ? 0 : tuple.order;
  const SemiMetricKernel kernel(tuple.semimetric, cov.grid);
  const auto emb = detail::embed_all(kernel, cov.curves, order);
  const auto t = kernel.embed(prepare_values(*cov.grid, target.values, order, tuple.semimetric.centered));
  std::vector<double> dist(emb.size());
  for (std::size_t j = 0; j < emb.size(); ++j) dist[j] = kernel.between(t, emb[j]);
  return detail::nearest(dist, static_cast<std::size_t>(tuple.k), self);
}

/// Leave-one-out posteriors for every learning observation.
inline FeatureTensor posteriors(const EnsembleSpec& spec, const Dataset& learn, int jobs = 1) {
  return detail::featurize(spec, learn, nullptr, jobs);
}

/// Posteriors of new observations (labels ignored) against the learning set.
inline FeatureTensor posteriors_new(const EnsembleSpec& spec, const Dataset& learn, const Dataset& new_obs,
                                    int jobs = 1) {
  return detail::featurize(spec, learn, &new_obs, jobs);
}

inline DiffFeatures differences(const FeatureTensor& w) {
  if (w.classes < 2) throw DataError("differences need at least two classes");
  DiffFeatures out;
  out.n = w.n;
  out.classes = w.classes;
  out.tuple_ids = w.tuple_ids;
  const auto& ref = w.w.back();
  for (int g = 0; g + 1 < w.classes; ++g) out.v.push_back(w.w[static_cast<std::size_t>(g)] - ref);
  return out;
}

/// Keeps the listed tuple positions (in order) of a feature set.
inline DiffFeatures select_columns(const DiffFeatures& v, const std::vector<std::size_t>& keep) {
  DiffFeatures out;
  out.n = v.n;
  out.classes = v.classes;
  for (auto l : keep) out.tuple_ids.push_back(v.tuple_ids.at(l));
  for (const auto& m : v.v) {
    Eigen::MatrixXd s(m.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) s.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(keep[c]));
    out.v.push_back(std::move(s));
  }
  return out;
}

struct FilterResult {
  DiffFeatures features;
  EnsembleSpec spec;
  std::vector<int> removed_ids;
};

/// Sample standard deviation of a column, rounded to 1e-12.
inline double rounded_sd(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() < 2) return 0.0;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
  return std::round(std::sqrt(var) * 1e12) / 1e12;
}

/// Drops tuples whose difference features have zero spread for every class.
inline FilterResult filter_zero_variance(const DiffFeatures& v, const EnsembleSpec& spec) {
  if (spec.size() != v.tuples()) {
    throw DataError("ensemble has " + std::to_string(spec.size()) + " tuples but features have " +
                    std::to_string(v.tuples()));
  }
  std::vector<std::size_t> keep;
  FilterResult out;
  out.spec.jump_on_derivative = spec.jump_on_derivative;
  for (std::size_t l = 0; l < v.tuples(); ++l) {
    bool informative = false;
    for (const auto& m : v.v) {
      if (rounded_sd(m.col(static_cast<Eigen::Index>(l))) != 0.0) {
        informative = true;
        break;
      }
    }
    if (informative) {
      keep.push_back(l);
      out.spec.tuples.push_back(spec.tuples[l]);
    } else {
      out.removed_ids.push_back(spec.tuples[l].id);
    }
  }
  if (keep.empty()) throw DataError("zero-variance filtering removed every tuple");
  out.features = select_columns(v, keep);
  return out;
}

}  // namespace fknne
