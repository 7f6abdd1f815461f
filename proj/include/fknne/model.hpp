#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fknne/ensemble.hpp"
#include "fknne/error.hpp"
#include "fknne/optimizer.hpp"
#include "fknne/random.hpp"

namespace fknne {

/// Linear predictors eta[i][g] = v_ig . c (global) or v_ig . c_g, g < G.
inline Eigen::MatrixXd linear_predictors(const DiffFeatures& v, const CoefMatrix& coef) {
  const auto n = static_cast<Eigen::Index>(v.n);
  const auto G1 = static_cast<Eigen::Index>(v.v.size());
  if (coef.values.cols() != static_cast<Eigen::Index>(v.tuples())) {
    throw DataError("coefficients have " + std::to_string(coef.values.cols()) + " columns, features " +
                    std::to_string(v.tuples()));
  }
  Eigen::MatrixXd eta(n, G1);
  for (Eigen::Index g = 0; g < G1; ++g) {
    const auto row = coef.layout == CoefLayout::Global ? 0 : g;
    eta.col(g) = v.v[static_cast<std::size_t>(g)] * coef.values.row(row).transpose();
  }
  return eta;
}

namespace detail {

// Multinomial logit with reference category G (eta_G = 0); overflow-safe.
inline void softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& eta, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> pi) {
  const auto G1 = eta.size();
  const double m = std::max(0.0, eta.maxCoeff());
  double denom = std::exp(-m);
  for (Eigen::Index g = 0; g < G1; ++g) denom += std::exp(eta(g) - m);
  for (Eigen::Index g = 0; g < G1; ++g) pi(g) = std::exp(eta(g) - m) / denom;
  pi(G1) = std::exp(-m) / denom;
}

inline double log_prob(const Eigen::Ref<const Eigen::RowVectorXd>& eta, int label) {
  const auto G1 = eta.size();
  const double m = std::max(0.0, eta.maxCoeff());
  double denom = std::exp(-m);
  for (Eigen::Index g = 0; g < G1; ++g) denom += std::exp(eta(g) - m);
  const double lse = m + std::log(denom);
  const double eta_y = label <= G1 ? eta(label - 1) : 0.0;
  return eta_y - lse;
}

}  // namespace detail

/// Class probabilities for a matrix of linear predictors (n x (G-1)) -> n x G.
inline Eigen::MatrixXd probabilities_from_eta(const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd pi(eta.rows(), eta.cols() + 1);
  for (Eigen::Index i = 0; i < eta.rows(); ++i) detail::softmax_row(eta.row(i), pi.row(i));
  return pi;
}

inline Eigen::MatrixXd probabilities(const DiffFeatures& v, const CoefMatrix& coef) {
  return probabilities_from_eta(linear_predictors(v, coef));
}

/// Probabilities for one observation given its (G-1) x p difference features.
inline Eigen::VectorXd probabilities(const Eigen::MatrixXd& v_row, const CoefMatrix& coef) {
  Eigen::RowVectorXd eta(v_row.rows());
  for (Eigen::Index g = 0; g < v_row.rows(); ++g) {
    const auto row = coef.layout == CoefLayout::Global ? 0 : g;
    eta(g) = v_row.row(g).dot(coef.values.row(row));
  }
  Eigen::RowVectorXd pi(v_row.rows() + 1);
  detail::softmax_row(eta, pi);
  return pi.transpose();
}

inline double log_likelihood_from_eta(const Eigen::MatrixXd& eta, std::span<const int> labels) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.rows(); ++i) ll += detail::log_prob(eta.row(i), labels[static_cast<std::size_t>(i)]);
  return ll;
}

inline double log_likelihood(const DiffFeatures& v, std::span<const int> labels, const CoefMatrix& coef) {
  if (labels.size() != v.n) throw DataError("label count does not match feature rows");
  return log_likelihood_from_eta(linear_predictors(v, coef), labels);
}

/// Gradient of the log-likelihood with respect to the coefficients.
inline Eigen::MatrixXd log_likelihood_gradient(const DiffFeatures& v, std::span<const int> labels,
                                               const CoefMatrix& coef) {
  const Eigen::MatrixXd pi = probabilities(v, coef);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(coef.values.rows(), coef.values.cols());
  for (std::size_t g = 0; g < v.v.size(); ++g) {
    Eigen::VectorXd resid = -pi.col(static_cast<Eigen::Index>(g));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(g) + 1) resid(static_cast<Eigen::Index>(i)) += 1.0;
    }
    const auto row = coef.layout == CoefLayout::Global ? 0 : static_cast<Eigen::Index>(g);
    grad.row(row) += (v.v[g].transpose() * resid).transpose();
  }
  return grad;
}

/// Negative log-likelihood of the constrained multinomial logit, for the solver.
class MlmObjective {
 public:
  MlmObjective(const DiffFeatures& v, std::span<const int> labels, CoefLayout layout)
      : v_(v), labels_(labels.begin(), labels.end()), layout_(layout) {
    if (labels_.size() != v.n) throw DataError("label count does not match feature rows");
  }

  double value(const Eigen::MatrixXd& c) const {
    return -log_likelihood(v_, labels_, CoefMatrix{layout_, c});
  }

  double value_and_gradient(const Eigen::MatrixXd& c, Eigen::MatrixXd& grad) const {
    const CoefMatrix coef{layout_, c};
    const Eigen::MatrixXd eta = linear_predictors(v_, coef);
    const Eigen::MatrixXd pi = probabilities_from_eta(eta);
    grad.setZero(c.rows(), c.cols());
    for (std::size_t g = 0; g < v_.v.size(); ++g) {
      Eigen::VectorXd resid = pi.col(static_cast<Eigen::Index>(g));
      for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == static_cast<int>(g) + 1) resid(static_cast<Eigen::Index>(i)) -= 1.0;
      }
      const auto row = layout_ == CoefLayout::Global ? 0 : static_cast<Eigen::Index>(g);
      grad.row(row) += (v_.v[g].transpose() * resid).transpose();
    }
    return -log_likelihood_from_eta(eta, labels_);
  }

  CoefLayout layout() const noexcept { return layout_; }

 private:
  const DiffFeatures& v_;
  std::vector<int> labels_;
  CoefLayout layout_;
};

/// Smallest lambda for which c = 0 satisfies the KKT conditions of the
/// nonnegative problem, nudged up so round-off in the solver keeps c = 0 there.
inline double lambda_max(const DiffFeatures& v, std::span<const int> labels, PenaltyKind kind) {
  const auto zero = CoefMatrix::zeros(layout_for(kind), v.classes, static_cast<Eigen::Index>(v.tuples()));
  const Eigen::MatrixXd g = log_likelihood_gradient(v, labels, zero);
  if (kind == PenaltyKind::CatsLasso) {
    const double norm = g.cwiseMax(0.0).colwise().norm().maxCoeff();
    return norm / std::sqrt(static_cast<double>(g.rows())) * (1.0 + 1e-10);
  }
  return std::max(0.0, g.maxCoeff()) * (1.0 + 1e-10);
}

struct LambdaGrid {
  std::vector<double> values;

  void validate() const {
    if (values.empty()) throw ConfigError("lambda grid is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] > 0.0) || !std::isfinite(values[i])) throw ConfigError("lambda values must be positive");
      if (i > 0 && !(values[i] < values[i - 1])) throw ConfigError("lambda grid must be strictly decreasing");
    }
  }

  /// `count` log-spaced values from lmax down to ratio * lmax.
  static LambdaGrid log_spaced(double lmax, int count, double ratio) {
    if (count < 1) throw ConfigError("lambda grid count must be >= 1");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("lambda grid ratio must lie in (0, 1)");
    if (!(lmax > 0.0)) lmax = 1.0;  // c = 0 is optimal everywhere; any grid will do
    LambdaGrid grid;
    if (count == 1) {
      grid.values.push_back(lmax);
      return grid;
    }
    const double a = std::log(lmax), b = std::log(lmax * ratio);
    for (int i = 0; i < count; ++i) grid.values.push_back(std::exp(a + (b - a) * i / (count - 1)));
    return grid;
  }
};

struct FitResult {
  PenaltyKind penalty = PenaltyKind::GlobalLasso;
  CoefMatrix coefficients;
  double lambda = 0.0;
  double loglik = 0.0;
  int df = 0;
  double aic = 0.0;
  Eigen::MatrixXd probabilities;  ///< n x G on the learning data
  std::vector<int> tuple_ids;
  std::vector<int> removed_tuple_ids;
  int iterations = 0;
  bool converged = false;
  std::vector<FistaTraceRow> trace;
};

struct PathResult {
  std::vector<FitResult> fits;
  /// Places where df increased with lambda; such non-monotonicities are allowed.
  int df_monotonicity_violations = 0;
};

/// One constrained fit per lambda, from the largest lambda down, each
/// warm-started from the previous solution.
inline PathResult fit_path(const DiffFeatures& v, std::span<const int> labels, PenaltyKind kind,
                           const LambdaGrid& grid, const FistaConfig& config) {
  grid.validate();
  const auto layout = layout_for(kind);
  const MlmObjective objective(v, labels, layout);
  PathResult path;
  std::optional<CoefMatrix> warm;
  FistaConfig cfg = config;
  for (double lambda : grid.values) {
    FistaResult sol;
    try {
      sol = fista_solve(objective, PenaltySpec{kind, lambda}, layout, v.classes,
                        static_cast<Eigen::Index>(v.tuples()), cfg, warm);
    } catch (const NumericError& e) {
      throw NumericError("lambda " + std::to_string(lambda) + ": " + e.what());
    }
    // Restart the next line search a little above the last accepted step.
    cfg.step = std::max(sol.step * 4.0, 1e-12);
    FitResult fit;
    fit.penalty = kind;
    fit.coefficients = sol.coef;
    fit.lambda = lambda;
    const Eigen::MatrixXd eta = linear_predictors(v, sol.coef);
    fit.loglik = log_likelihood_from_eta(eta, labels);
    fit.df = sol.coef.nonzeros();
    fit.aic = -2.0 * fit.loglik + 2.0 * fit.df;
    fit.probabilities = probabilities_from_eta(eta);
    fit.tuple_ids = v.tuple_ids;
    fit.iterations = sol.iterations;
    fit.converged = sol.converged;
    fit.trace = std::move(sol.trace);
    if (!path.fits.empty() && fit.df < path.fits.back().df) ++path.df_monotonicity_violations;
    warm = sol.coef;
    path.fits.push_back(std::move(fit));
  }
  return path;
}

/// Minimal-AIC fit; ties go to the larger lambda.
inline const FitResult& select_by_aic(const std::vector<FitResult>& path) {
  if (path.empty()) throw ConfigError("cannot select from an empty path");
  std::size_t best = 0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const bool better = path[i].aic < path[best].aic ||
                        (path[i].aic == path[best].aic && path[i].lambda > path[best].lambda);
    if (better) best = i;
  }
  return path[best];
}

/// Mean AIC per lambda over K folds: each fold's path is fitted on the other
/// K-1 folds. Returns the index of the minimising lambda (ties to larger lambda).
inline std::size_t select_by_mean_aic(const DiffFeatures& v, std::span<const int> labels, PenaltyKind kind,
                                      const LambdaGrid& grid, const FistaConfig& config, int folds,
                                      std::uint64_t seed) {
  if (folds < 2) throw ConfigError("mean-AIC selection needs at least 2 folds");
  const std::size_t n = v.n;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  shuffle_in_place(perm, rng);
  std::vector<double> mean_aic(grid.values.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<int>(i % static_cast<std::size_t>(folds)) != f) rows.push_back(perm[i]);
    }
    std::sort(rows.begin(), rows.end());
    DiffFeatures sub;
    sub.n = rows.size();
    sub.classes = v.classes;
    sub.tuple_ids = v.tuple_ids;
    std::vector<int> sub_labels;
    for (auto i : rows) sub_labels.push_back(labels[i]);
    for (const auto& m : v.v) {
      Eigen::MatrixXd s(static_cast<Eigen::Index>(rows.size()), m.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) s.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
      sub.v.push_back(std::move(s));
    }
    const auto path = fit_path(sub, sub_labels, kind, grid, config);
    for (std::size_t j = 0; j < path.fits.size(); ++j) mean_aic[j] += path.fits[j].aic / folds;
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < mean_aic.size(); ++j) {
    if (mean_aic[j] < mean_aic[best]) best = j;
  }
  return best;
}

struct Prediction {
  Eigen::MatrixXd probabilities;  ///< n_new x G
  std::vector<int> labels;        ///< argmax, ties to the smaller class index
};

inline std::vector<int> argmax_labels(const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < probs.cols(); ++g) {
      if (probs(i, g) > probs(i, best)) best = g;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
  }
  return out;
}

/// Featurizes new observations against the learning set with the (filtered)
/// ensemble used in fitting, then applies the fitted model.
inline Prediction predict(const FitResult& fit, const EnsembleSpec& spec, const Dataset& learn,
                          const Dataset& new_obs, int jobs = 1) {
  if (spec.size() != static_cast<std::size_t>(fit.coefficients.values.cols())) {
    throw DataError("ensemble does not match the fitted coefficients");
  }
  const auto w = posteriors_new(spec, learn, new_obs, jobs);
  const auto v = differences(w);
  Prediction out;
  out.probabilities = probabilities(v, fit.coefficients);
  out.labels = argmax_labels(out.probabilities);
  return out;
}

}  // namespace fknne
