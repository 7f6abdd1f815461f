#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fknne/curves.hpp"
#include "fknne/ensemble.hpp"
#include "fknne/model.hpp"
#include "fknne/optimizer.hpp"

namespace fknne::testing {

// -- fixtures ---------------------------------------------------------------------------------

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

inline Curve curve_from(const GridPtr& g, const std::function<double(double)>& f) {
  std::vector<double> v;
  for (double t : g->points()) v.push_back(f(t));
  return Curve(g, std::move(v));
}

/// Noisy bump curves whose bump position depends on the class; every class
/// gets `per_class` curves. Optional second covariate type.
inline Dataset bump_dataset(int classes, int per_class, std::size_t q, std::uint64_t seed, int types = 1,
                            double noise = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto grid = make_grid(linspace(0.0, 1.0, q));
  Dataset d;
  d.class_count = classes;
  for (int r = 0; r < types; ++r) d.covariates.push_back({"x" + std::to_string(r + 1), grid, {}});
  for (int g = 1; g <= classes; ++g) {
    for (int i = 0; i < per_class; ++i) {
      d.labels.push_back(g);
      for (int r = 0; r < types; ++r) {
        const double center = (g + 0.5 * r) / (classes + 1.0) + 0.04 * n01(rng);
        const double amp = 1.0 + 0.2 * n01(rng);
        std::vector<double> v;
        for (double t : grid->points()) {
          v.push_back(amp * std::exp(-std::pow((t - center) / 0.12, 2)) + noise * n01(rng));
        }
        d.covariates[static_cast<std::size_t>(r)].curves.emplace_back(grid, std::move(v));
      }
    }
  }
  d.validate();
  return d;
}

/// Random difference features with entries that are genuine posterior
/// differences (multiples of 1/k).
inline DiffFeatures random_features(std::size_t n, std::size_t p, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::uniform_int_distribution<int> kpick(1, 7);
  FeatureTensor w;
  w.n = n;
  w.classes = classes;
  for (std::size_t l = 0; l < p; ++l) w.tuple_ids.push_back(static_cast<int>(l) + 1);
  w.w.assign(static_cast<std::size_t>(classes), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p)));
  for (std::size_t l = 0; l < p; ++l) {
    const int k = kpick(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (int m = 0; m < k; ++m) {
        w.w[static_cast<std::size_t>(pick(rng))](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) += 1.0 / k;
      }
    }
  }
  return differences(w);
}

inline std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(1, classes);
  std::vector<int> y(n);
  for (auto& v : y) v = pick(rng);
  for (int g = 1; g <= classes && static_cast<std::size_t>(g) <= n; ++g) y[static_cast<std::size_t>(g - 1)] = g;
  return y;
}

/// Largest deviation of any probability row from the simplex.
inline double simplex_violation(const Eigen::MatrixXd& p) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    worst = std::max(worst, std::abs(p.row(i).sum() - 1.0));
    worst = std::max(worst, std::max(0.0, -p.row(i).minCoeff()));
    worst = std::max(worst, std::max(0.0, p.row(i).maxCoeff() - 1.0));
    if (!p.row(i).allFinite()) return INFINITY;
  }
  return worst;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("fknne_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// -- oracles ----------------------------------------------------------------------------------

/// Golden-section minimiser of a unimodal function on [a, b].
inline double golden_section(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Nonnegative Lasso prox by coordinate-wise golden-section search.
inline Eigen::VectorXd brute_prox_lasso(const Eigen::VectorXd& u, double t) {
  Eigen::VectorXd c(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double ui = u(i);
    c(i) = golden_section([&](double x) { return 0.5 * (x - ui) * (x - ui) + t * x; }, 0.0,
                          std::max(0.0, ui) + 1.0);
  }
  return c;
}

/// Nonnegative group prox argmin_{c>=0} 1/2||c-u||^2 + t||c|| by a zooming
/// grid search (9 points per axis, window halved each round).
inline Eigen::VectorXd brute_prox_group(const Eigen::VectorXd& u, double t) {
  const auto d = static_cast<int>(u.size());
  auto f = [&](const Eigen::VectorXd& c) { return 0.5 * (c - u).squaredNorm() + t * c.norm(); };
  Eigen::VectorXd center = u.cwiseMax(0.0);
  double half = std::max(1.0, u.cwiseAbs().maxCoeff());
  Eigen::VectorXd best = center;
  double fbest = f(best);
  const int steps = 9;
  std::vector<int> idx(static_cast<std::size_t>(d));
  Eigen::VectorXd c(d);
  while (half > 1e-10) {
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      for (int j = 0; j < d; ++j) {
        c(j) = std::max(0.0, center(j) + half * (2.0 * idx[static_cast<std::size_t>(j)] / (steps - 1) - 1.0));
      }
      const double fc = f(c);
      if (fc < fbest) {
        fbest = fc;
        best = c;
      }
      int j = 0;
      while (j < d && ++idx[static_cast<std::size_t>(j)] == steps) idx[static_cast<std::size_t>(j++)] = 0;
      if (j == d) break;
    }
    center = best;
    half *= 0.5;
  }
  return best;
}

/// Penalized objective -loglik + J(c) for the constrained MLM.
inline double penalized_objective(const DiffFeatures& v, const std::vector<int>& y, const CoefMatrix& c,
                                  PenaltyKind kind, double lambda) {
  return -log_likelihood(v, y, c) + penalty_value(kind, c.values, lambda);
}

/// Projected gradient with Armijo backtracking for problems whose penalty is
/// linear on the feasible set (both Lasso kinds): minimises
/// -loglik(c) + lambda * sum(c) over c >= 0 restricted to `free` entries.
inline CoefMatrix projected_gradient(const DiffFeatures& v, const std::vector<int>& y, CoefMatrix c,
                                     const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& penalty_grad,
                                     const std::function<double(const Eigen::MatrixXd&)>& objective,
                                     const Eigen::MatrixXd& free_mask, int iters) {
  double step = 1.0;
  double f = objective(c.values);
  for (int it = 0; it < iters; ++it) {
    const Eigen::MatrixXd g =
        (-log_likelihood_gradient(v, y, c) + penalty_grad(c.values)).cwiseProduct(free_mask);
    step *= 2.0;
    for (;;) {
      Eigen::MatrixXd trial = (c.values - step * g).cwiseMax(0.0);
      const double ft = objective(trial);
      const double decrease = (g.array() * (c.values - trial).array()).sum();
      if (ft <= f - 0.5 * decrease || step < 1e-16) {
        const double change = f - ft;
        c.values = trial;
        if (ft <= f) f = ft;
        if (change >= 0 && change < 1e-16 * std::max(1.0, std::abs(f))) return c;
        break;
      }
      step *= 0.5;
    }
  }
  return c;
}

/// Reference minimiser of the penalized constrained MLM.
///
/// Lasso kinds: the penalty is linear on c >= 0, so projected gradient on the
/// smooth sum is exact. CATS: a long projected-subgradient run identifies the
/// active feature groups, projected gradient then solves the problem
/// restricted to them (smooth there) and the KKT conditions of the dropped
/// groups are verified. `certified` reports whether that check passed.
struct OracleResult {
  CoefMatrix coef;
  double objective = 0.0;
  bool certified = true;
};

inline OracleResult oracle_minimize(const DiffFeatures& v, const std::vector<int>& y, PenaltyKind kind,
                                    double lambda, int iters = 200000) {
  const auto layout = layout_for(kind);
  const auto p = static_cast<Eigen::Index>(v.tuples());
  auto zero = CoefMatrix::zeros(layout, v.classes, p);
  const Eigen::Index rows = zero.values.rows();
  auto obj = [&](const Eigen::MatrixXd& c) {
    return penalized_objective(v, y, CoefMatrix{layout, c}, kind, lambda);
  };
  OracleResult out;
  if (kind != PenaltyKind::CatsLasso) {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(rows, p);
    out.coef = projected_gradient(
        v, y, zero, [&](const Eigen::MatrixXd&) -> Eigen::MatrixXd { return lambda * ones; }, obj, ones, iters);
    out.objective = obj(out.coef.values);
    return out;
  }

  const double scale = std::sqrt(static_cast<double>(rows));
  // Projected subgradient with diminishing steps; keeps the best iterate.
  CoefMatrix c = zero, best = zero;
  double fbest = obj(c.values);
  for (int it = 1; it <= iters / 4; ++it) {
    Eigen::MatrixXd g = -log_likelihood_gradient(v, y, c);
    for (Eigen::Index l = 0; l < p; ++l) {
      const double nrm = c.values.col(l).norm();
      if (nrm > 0) g.col(l) += lambda * scale * c.values.col(l) / nrm;
    }
    const double gn = g.norm();
    if (gn == 0) break;
    c.values = (c.values - (0.5 / std::sqrt(static_cast<double>(it))) * g / gn).cwiseMax(0.0);
    const double fc = obj(c.values);
    if (fc < fbest) {
      fbest = fc;
      best = c;
    }
  }
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(rows, p);
  for (Eigen::Index l = 0; l < p; ++l) {
    if (best.values.col(l).norm() > 1e-3) mask.col(l).setOnes();
  }
  CoefMatrix start = best;
  start.values = start.values.cwiseProduct(mask);
  for (Eigen::Index l = 0; l < p; ++l) {
    if (mask(0, l) > 0 && start.values.col(l).norm() == 0) start.values.col(l).setConstant(1e-3);
  }
  auto group_grad = [&](const Eigen::MatrixXd& cv) -> Eigen::MatrixXd {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(rows, p);
    for (Eigen::Index l = 0; l < p; ++l) {
      const double nrm = cv.col(l).norm();
      if (nrm > 0) g.col(l) = lambda * scale * cv.col(l) / nrm;
    }
    return g;
  };
  out.coef = projected_gradient(v, y, start, group_grad, obj, mask, iters);
  out.objective = obj(out.coef.values);
  // Dropped groups must satisfy ||[-grad_l]_+|| <= lambda * sqrt(G-1); active
  // groups must not have collapsed to zero.
  const Eigen::MatrixXd grad = -log_likelihood_gradient(v, y, out.coef);
  for (Eigen::Index l = 0; l < p; ++l) {
    const double nrm = out.coef.values.col(l).norm();
    if (mask(0, l) == 0) {
      if ((-grad.col(l)).cwiseMax(0.0).norm() > lambda * scale * (1 + 1e-6) + 1e-8) out.certified = false;
    } else if (nrm < 1e-10) {
      out.certified = false;
    }
  }
  return out;
}

/// Central finite-difference gradient of the log-likelihood.
inline Eigen::MatrixXd fd_gradient(const DiffFeatures& v, const std::vector<int>& y, const CoefMatrix& c,
                                   double h = 1e-5) {
  Eigen::MatrixXd g(c.values.rows(), c.values.cols());
  for (Eigen::Index r = 0; r < c.values.rows(); ++r) {
    for (Eigen::Index l = 0; l < c.values.cols(); ++l) {
      CoefMatrix plus = c, minus = c;
      plus.values(r, l) += h;
      minus.values(r, l) -= h;
      g(r, l) = (log_likelihood(v, y, plus) - log_likelihood(v, y, minus)) / (2 * h);
    }
  }
  return g;
}

}  // namespace fknne::testing
