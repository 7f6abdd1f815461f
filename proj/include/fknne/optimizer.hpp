#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fknne/error.hpp"

namespace fknne {

enum class CoefLayout { Global, ClassSpecific };

/// Nonnegative ensemble weights: one row (global) or G-1 rows (class-specific),
/// one column per tuple.
struct CoefMatrix {
  CoefLayout layout = CoefLayout::Global;
  Eigen::MatrixXd values;

  static CoefMatrix zeros(CoefLayout layout, int classes, Eigen::Index p) {
    const Eigen::Index rows = layout == CoefLayout::Global ? 1 : classes - 1;
    return {layout, Eigen::MatrixXd::Zero(rows, p)};
  }

  Eigen::Index tuples() const noexcept { return values.cols(); }
  int nonzeros() const { return static_cast<int>((values.array() > 0.0).count()); }
};

enum class PenaltyKind { GlobalLasso, ClassLasso, CatsLasso };

inline constexpr std::string_view penalty_name(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::GlobalLasso: return "lasso";
    case PenaltyKind::ClassLasso: return "cs_lasso";
    case PenaltyKind::CatsLasso: return "cs_cats_lasso";
  }
  return "";
}

inline PenaltyKind parse_penalty(std::string_view s) {
  if (s == "lasso" || s == "global_lasso") return PenaltyKind::GlobalLasso;
  if (s == "cs_lasso" || s == "class_lasso") return PenaltyKind::ClassLasso;
  if (s == "cs_cats_lasso" || s == "cats_lasso" || s == "cats") return PenaltyKind::CatsLasso;
  throw ConfigError("unknown penalty kind '" + std::string(s) + "'");
}

inline CoefLayout layout_for(PenaltyKind k) noexcept {
  return k == PenaltyKind::GlobalLasso ? CoefLayout::Global : CoefLayout::ClassSpecific;
}

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::GlobalLasso;
  double lambda = 0.0;

  void validate(CoefLayout layout) const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    if (layout != layout_for(kind)) {
      throw ConfigError(std::string(penalty_name(kind)) + " does not match the coefficient layout");
    }
  }
};

struct FistaConfig {
  int max_iters = 5000;
  double tol = 1e-8;
  double step = 1.0;
  double backtrack = 0.5;
  bool record_trace = false;

  void validate() const {
    if (max_iters < 1) throw ConfigError("solver max_iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("solver tol must be > 0");
    if (!(step > 0.0)) throw ConfigError("solver step must be > 0");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw ConfigError("solver backtrack must lie in (0, 1)");
  }
};

// -- proximal operators ------------------------------------------------------------

/// argmin_{c >= 0} 1/2 ||c - u||^2 + t * sum |c_l|, i.e. max(max(u, 0) - t, 0).
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> prox_lasso_nonneg(
    const Eigen::MatrixBase<Derived>& u, double threshold) {
  return (u.array().max(0.0) - threshold).max(0.0).matrix();
}

/// argmin_{c >= 0} 1/2 ||c - u||^2 + t * ||c||_2 for one feature group;
/// `threshold` already includes the sqrt(G-1) factor.
inline Eigen::VectorXd prox_cats_nonneg(const Eigen::Ref<const Eigen::VectorXd>& u, double threshold) {
  Eigen::VectorXd plus = u.array().max(0.0).matrix();
  const double norm = plus.norm();
  if (norm <= threshold || norm == 0.0) return Eigen::VectorXd::Zero(u.size());
  return (1.0 - threshold / norm) * plus;
}

inline double penalty_value(PenaltyKind kind, const Eigen::MatrixXd& c, double lambda) {
  if (kind == PenaltyKind::CatsLasso) {
    return lambda * std::sqrt(static_cast<double>(c.rows())) * c.colwise().norm().sum();
  }
  return lambda * c.cwiseAbs().sum();
}

inline Eigen::MatrixXd prox_penalty(PenaltyKind kind, const Eigen::MatrixXd& u, double step_lambda) {
  if (kind != PenaltyKind::CatsLasso) return prox_lasso_nonneg(u, step_lambda);
  Eigen::MatrixXd out(u.rows(), u.cols());
  const double thr = step_lambda * std::sqrt(static_cast<double>(u.rows()));
  for (Eigen::Index l = 0; l < u.cols(); ++l) out.col(l) = prox_cats_nonneg(u.col(l), thr);
  return out;
}

// -- FISTA ----------------------------------------------------------------------------

/// Smooth part of the objective (to be minimised), e.g. a negative log-likelihood.
template <class F>
concept SmoothObjective = requires(const F& f, const Eigen::MatrixXd& c, Eigen::MatrixXd& grad) {
  { f.value(c) } -> std::convertible_to<double>;
  { f.value_and_gradient(c, grad) } -> std::convertible_to<double>;
};

struct FistaTraceRow {
  int iteration = 0;
  double objective = 0.0;
  double step = 0.0;
};

struct FistaResult {
  CoefMatrix coef;
  double objective = 0.0;  ///< smooth part + penalty at coef
  int iterations = 0;
  bool converged = false;
  double step = 0.0;  ///< last accepted step size
  std::vector<FistaTraceRow> trace;
};

/// Accelerated proximal gradient with backtracking and momentum restart
/// whenever the penalised objective would increase. Iterates stay in c >= 0.
template <SmoothObjective F>
FistaResult fista_solve(const F& smooth, const PenaltySpec& penalty, CoefLayout layout, int classes,
                        Eigen::Index tuples, const FistaConfig& config,
                        const std::optional<CoefMatrix>& warm_start = std::nullopt) {
  config.validate();
  penalty.validate(layout);
  const double lambda = penalty.lambda;

  CoefMatrix x = CoefMatrix::zeros(layout, classes, tuples);
  if (warm_start) {
    if (warm_start->values.rows() != x.values.rows() || warm_start->values.cols() != x.values.cols()) {
      throw ConfigError("warm start has the wrong shape");
    }
    x.values = warm_start->values.cwiseMax(0.0);
  }

  auto total = [&](const Eigen::MatrixXd& c, double smooth_value) {
    return smooth_value + penalty_value(penalty.kind, c, lambda);
  };

  FistaResult result;
  double fx = total(x.values, smooth.value(x.values));
  if (!std::isfinite(fx)) throw NumericError("non-finite objective at the starting point (iteration 0)");

  Eigen::MatrixXd y = x.values;
  Eigen::MatrixXd grad(y.rows(), y.cols());
  Eigen::MatrixXd x_prev;
  double momentum = 1.0;
  double step = config.step;
  bool at_restart = true;  // y == x

  int it = 0;
  for (; it < config.max_iters; ++it) {
    const double fy = smooth.value_and_gradient(y, grad);
    if (!std::isfinite(fy) || !grad.allFinite()) {
      throw NumericError("non-finite objective or gradient at iteration " + std::to_string(it + 1));
    }
    Eigen::MatrixXd z;
    double fz = 0.0;
    for (;;) {
      z = prox_penalty(penalty.kind, y - step * grad, step * lambda);
      fz = smooth.value(z);
      const Eigen::MatrixXd diff = z - y;
      const double model = fy + (grad.array() * diff.array()).sum() + diff.squaredNorm() / (2.0 * step);
      if (std::isfinite(fz) && fz <= model + 1e-12 * std::max(1.0, std::abs(fy))) break;
      step *= config.backtrack;
      if (step < 1e-300) {
        throw NumericError("line search failed to find a step at iteration " + std::to_string(it + 1));
      }
    }
    const double f_new = total(z, fz);
    if (config.record_trace) result.trace.push_back({it + 1, std::min(f_new, fx), step});

    if (f_new > fx) {
      if (at_restart) {
        // A plain proximal step from x cannot increase the objective beyond
        // round-off; nothing left to gain.
        result.converged = true;
        ++it;
        break;
      }
      momentum = 1.0;
      y = x.values;
      at_restart = true;
      continue;
    }

    x_prev = x.values;
    x.values = z;
    const double rel = std::abs(fx - f_new) / std::max(1.0, std::abs(fx));
    fx = f_new;
    const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = x.values + ((momentum - 1.0) / next) * (x.values - x_prev);
    momentum = next;
    at_restart = false;
    if (rel < config.tol) {
      result.converged = true;
      ++it;
      break;
    }
  }

  result.coef = std::move(x);
  result.objective = fx;
  result.iterations = it;
  result.step = step;
  return result;
}

}  // namespace fknne
