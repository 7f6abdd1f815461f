#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fknne/model.hpp"
#include "fknne/optimizer.hpp"
#include "support.hpp"

using namespace fknne;
using Catch::Approx;

namespace {

// 1/2 ||c - u||^2, for checking that one solver step reproduces the prox.
struct Quadratic {
  Eigen::MatrixXd u;
  double value(const Eigen::MatrixXd& c) const { return 0.5 * (c - u).squaredNorm(); }
  double value_and_gradient(const Eigen::MatrixXd& c, Eigen::MatrixXd& g) const {
    g = c - u;
    return value(c);
  }
};

Eigen::VectorXd random_vector(std::mt19937_64& rng, int d, double scale = 2.0) {
  std::normal_distribution<double> n01;
  Eigen::VectorXd u(d);
  for (int i = 0; i < d; ++i) u(i) = scale * n01(rng);
  return u;
}

}  // namespace

TEST_CASE("lasso prox examples") {
  Eigen::VectorXd u(2);
  u << 0.5, -0.3;
  const Eigen::VectorXd c = prox_lasso_nonneg(u, 0.2);
  CHECK(c(0) == Approx(0.3));
  CHECK(c(1) == 0.0);
  const Eigen::VectorXd c0 = prox_lasso_nonneg(u, 0.0);
  CHECK(c0(0) == 0.5);
  CHECK(c0(1) == 0.0);
  CHECK(prox_lasso_nonneg(u, 0.5).isZero());
}

TEST_CASE("cats prox examples") {
  Eigen::VectorXd u(2);
  u << 3, 4;
  Eigen::VectorXd c = prox_cats_nonneg(u, 2.5);
  CHECK(c(0) == Approx(1.5));
  CHECK(c(1) == Approx(2.0));
  u << -1, -2;
  CHECK(prox_cats_nonneg(u, 0.1).isZero());
  u << 3, -4;
  c = prox_cats_nonneg(u, 1.0);
  CHECK(c(0) == Approx(2.0));
  CHECK(c(1) == 0.0);
  u << 3, 4;
  CHECK(prox_cats_nonneg(u, 5.0).isZero());
}

TEST_CASE("prox operators match brute-force minimisers") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int d = 1 + trial % 3;
    const Eigen::VectorXd u = random_vector(rng, d);
    const double t = unif(rng);
    CHECK((prox_lasso_nonneg(u, t) - testing::brute_prox_lasso(u, t)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((prox_cats_nonneg(u, t) - testing::brute_prox_group(u, t)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("prox operators are non-expansive") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> unif(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + trial % 5;
    const Eigen::VectorXd u = random_vector(rng, d), v = random_vector(rng, d);
    const double t = unif(rng);
    const double gap = (u - v).norm() + 1e-12;
    CHECK((prox_lasso_nonneg(u, t) - prox_lasso_nonneg(v, t)).norm() <= gap);
    CHECK((prox_cats_nonneg(u, t) - prox_cats_nonneg(v, t)).norm() <= gap);
  }
}

TEST_CASE("cats prox keeps entries that arrive nonpositive at zero") {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd u = random_vector(rng, 4);
    const Eigen::VectorXd c = prox_cats_nonneg(u, 0.5);
    for (int i = 0; i < 4; ++i) {
      if (u(i) <= 0) CHECK(c(i) == 0.0);
    }
    // Either the whole group is zero or it is a positive multiple of [u]_+.
    const Eigen::VectorXd plus = u.cwiseMax(0.0);
    if (!c.isZero()) {
      const double factor = c.norm() / plus.norm();
      CHECK(factor > 0.0);
      CHECK((c - factor * plus).norm() < 1e-12);
    }
  }
}

TEST_CASE("penalty spec and config validation") {
  CHECK_THROWS_AS((PenaltySpec{PenaltyKind::GlobalLasso, -1}.validate(CoefLayout::Global)), ConfigError);
  CHECK_THROWS_AS((PenaltySpec{PenaltyKind::CatsLasso, 1}.validate(CoefLayout::Global)), ConfigError);
  CHECK_THROWS_AS((PenaltySpec{PenaltyKind::GlobalLasso, 1}.validate(CoefLayout::ClassSpecific)), ConfigError);
  CHECK_NOTHROW((PenaltySpec{PenaltyKind::ClassLasso, 0}.validate(CoefLayout::ClassSpecific)));
  FistaConfig cfg;
  cfg.backtrack = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tol = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_penalty("cats") == PenaltyKind::CatsLasso);
  CHECK_THROWS_AS(parse_penalty("ridge"), ConfigError);
}

TEST_CASE("solver on a separable quadratic returns the prox") {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd u = random_vector(rng, 6);
    Quadratic q{u.transpose()};
    FistaConfig cfg;
    cfg.tol = 1e-14;
    const auto res = fista_solve(q, {PenaltyKind::GlobalLasso, 0.7}, CoefLayout::Global, 2, 6, cfg);
    const Eigen::RowVectorXd expect = prox_lasso_nonneg(u, 0.7).transpose();
    CHECK((res.coef.values.row(0) - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("solver matches the projected-gradient oracle on small MLM instances") {
  std::mt19937_64 rng(89);
  for (auto kind : {PenaltyKind::GlobalLasso, PenaltyKind::ClassLasso, PenaltyKind::CatsLasso}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto v = testing::random_features(30, 5, 3, rng);
      const auto y = testing::random_labels(30, 3, rng);
      const double lambda = 0.1 * lambda_max(v, y, kind) + 0.05;
      FistaConfig cfg;
      cfg.tol = 1e-13;
      cfg.max_iters = 20000;
      const MlmObjective f(v, y, layout_for(kind));
      const auto res = fista_solve(f, {kind, lambda}, layout_for(kind), 3, 5, cfg);
      const auto oracle = testing::oracle_minimize(v, y, kind, lambda, 60000);
      INFO(penalty_name(kind) << " trial " << trial);
      CHECK(oracle.certified);
      CHECK(res.objective <= oracle.objective + 1e-6);
      CHECK(std::abs(res.objective - oracle.objective) < 1e-6);
      CHECK(res.coef.values.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("solver objective trace is non-increasing") {
  std::mt19937_64 rng(97);
  const auto v = testing::random_features(40, 6, 4, rng);
  const auto y = testing::random_labels(40, 4, rng);
  for (auto kind : {PenaltyKind::GlobalLasso, PenaltyKind::ClassLasso, PenaltyKind::CatsLasso}) {
    FistaConfig cfg;
    cfg.record_trace = true;
    cfg.tol = 1e-12;
    const MlmObjective f(v, y, layout_for(kind));
    const auto res = fista_solve(f, {kind, 0.05 * lambda_max(v, y, kind)}, layout_for(kind), 4, 6, cfg);
    REQUIRE(!res.trace.empty());
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i].objective <= res.trace[i - 1].objective);
    CHECK(res.converged);
  }
}

TEST_CASE("solver returns zero at or above lambda_max") {
  std::mt19937_64 rng(101);
  for (auto kind : {PenaltyKind::GlobalLasso, PenaltyKind::ClassLasso, PenaltyKind::CatsLasso}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto v = testing::random_features(25, 4, 3, rng);
      const auto y = testing::random_labels(25, 3, rng);
      const double lmax = lambda_max(v, y, kind);
      const MlmObjective f(v, y, layout_for(kind));
      for (double factor : {1.0, 1.5, 10.0}) {
        const auto res = fista_solve(f, {kind, lmax * factor}, layout_for(kind), 3, 4, FistaConfig{});
        CHECK(res.coef.nonzeros() == 0);
      }
      const auto below = fista_solve(f, {kind, lmax * 0.5}, layout_for(kind), 3, 4, FistaConfig{});
      if (lmax > 0) CHECK(below.coef.nonzeros() > 0);
    }
  }
}

TEST_CASE("solver reports non-finite objectives with the iteration") {
  struct Broken {
    double value(const Eigen::MatrixXd& c) const { return -c.sum(); }
    double value_and_gradient(const Eigen::MatrixXd& c, Eigen::MatrixXd& g) const {
      g = Eigen::MatrixXd::Constant(c.rows(), c.cols(), -1.0);
      if (c.sum() > 0.2) g(0, 0) = NAN;
      return value(c);
    }
  };
  FistaConfig cfg;
  cfg.step = 0.3;
  try {
    fista_solve(Broken{}, {PenaltyKind::GlobalLasso, 0.0}, CoefLayout::Global, 2, 1, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("warm start shape is checked") {
  Quadratic q{Eigen::MatrixXd::Ones(1, 3)};
  const auto warm = CoefMatrix::zeros(CoefLayout::Global, 2, 4);
  CHECK_THROWS_AS(fista_solve(q, {PenaltyKind::GlobalLasso, 0.1}, CoefLayout::Global, 2, 3, FistaConfig{}, warm),
                  ConfigError);
}
