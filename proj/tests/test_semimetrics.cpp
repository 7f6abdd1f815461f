#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fknne/semimetrics.hpp"
#include "support.hpp"

using namespace fknne;
using Catch::Approx;

namespace {

std::vector<SemiMetricSpec> all_kinds(bool centered) {
  std::vector<SemiMetricSpec> out{
      {metric::Eucl{}, centered},
      {metric::Scan{{0.5, 0.2, 3.0}}, centered},
      {metric::ShortEucl{{0.2, 0.6}}, centered},
      {metric::Mean{}, centered},
      {metric::RelAreas{{0.0, 0.4}, {0.5, 1.0}}, centered},
      {metric::Jump{0.1, 0.8}, centered},
      {metric::Max{}, centered},
      {metric::Min{}, centered},
      {metric::Points{{0.0, 0.33, 0.71, 1.0}}, centered},
  };
  return out;
}

Curve random_curve(const GridPtr& g, std::mt19937_64& rng, double offset = 2.0) {
  std::normal_distribution<double> n01;
  std::vector<double> v;
  for (std::size_t q = 0; q < g->size(); ++q) v.push_back(offset + n01(rng));
  return Curve(g, std::move(v));
}

}  // namespace

TEST_CASE("self-distance, symmetry and nonnegativity for every kind") {
  std::mt19937_64 rng(17);
  auto g = make_grid(testing::linspace(0, 1, 23));
  for (bool centered : {false, true}) {
    for (const auto& spec : all_kinds(centered)) {
      if (centered && spec.kind() == SemiMetricKind::RelAreas) continue;  // centred areas can vanish
      for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_curve(g, rng), y = random_curve(g, rng);
        INFO(kind_name(spec.kind()) << " centered=" << centered);
        CHECK(distance(spec, x, x) == 0.0);
        const double dxy = distance(spec, x, y);
        CHECK(dxy >= 0.0);
        CHECK(dxy == distance(spec, y, x));
      }
    }
  }
}

TEST_CASE("Eucl of constant 1 against constant 0 on a unit interval is 1") {
  auto g = make_grid({0, 0.5, 1});
  const Curve one(g, {1, 1, 1}), zero(g, {0, 0, 0});
  CHECK(distance({metric::Eucl{}}, one, zero) == Approx(1.0));
}

TEST_CASE("Mean compares trapezoid integrals") {
  auto g = make_grid({0, 0.5, 1});
  const Curve x(g, {0, 0.5, 1}), zero(g, {0, 0, 0});
  CHECK(distance({metric::Mean{}}, x, zero) == Approx(0.5));
}

TEST_CASE("Mean has a nontrivial null space") {
  auto g = make_grid({0, 0.5, 1});
  const Curve x(g, {0, 0.5, 1}), y(g, {0.5, 0.5, 0.5});
  CHECK(distance({metric::Mean{}}, x, y) == Approx(0.0).margin(1e-15));
}

TEST_CASE("Max and Min compare extreme values") {
  auto g = make_grid({0, 1, 2});
  const Curve x(g, {3, 0, -1}), y(g, {1, 0.5, 0});
  CHECK(distance({metric::Max{}}, x, y) == Approx(2.0));
  CHECK(distance({metric::Min{}}, x, y) == Approx(1.0));
}

TEST_CASE("Jump compares the rise between two snapped points") {
  auto g = make_grid({0, 1, 2, 3});
  const Curve x(g, {0, 5, 1, 2}), y(g, {1, 1, 1, 1});
  // t_b=0.9 snaps to 1, t_o=2.6 snaps to 3: (5-2) - 0.
  CHECK(distance({metric::Jump{0.9, 2.6}}, x, y) == Approx(3.0));
}

TEST_CASE("Points averages absolute differences at snapped impact points") {
  auto g = make_grid({0, 1, 2, 3});
  const Curve x(g, {0, 4, 1, 2}), y(g, {1, 1, 1, 1});
  CHECK(distance({metric::Points{{0.0, 1.2, 3.0}}}, x, y) == Approx((1.0 + 3.0 + 1.0) / 3.0));
}

TEST_CASE("ShortEucl integrates over the subinterval only") {
  auto g = make_grid({0, 1, 2, 3, 4});
  const Curve x(g, {9, 1, 1, 1, 9}), zero(g, {0, 0, 0, 0, 0});
  CHECK(distance({metric::ShortEucl{{1, 3}}}, x, zero) == Approx(std::sqrt(2.0)));
}

TEST_CASE("RelAreas compares area ratios") {
  auto g = make_grid({0, 1, 2});
  const Curve x(g, {1, 1, 3}), y(g, {1, 1, 1});
  // x: int_0^1 = 1, int_0^2 = 1 + 2 = 3 -> 1/3;  y: 1/2.
  CHECK(distance({metric::RelAreas{{0, 1}, {0, 2}}}, x, y) == Approx(1.0 / 6.0));
}

TEST_CASE("RelAreas with a zero denominator is degenerate") {
  auto g = make_grid({0, 1, 2});
  const Curve x(g, {1, -1, 1}), y(g, {1, 1, 1});
  CHECK_THROWS_AS(distance({metric::RelAreas{{0, 1}, {0, 2}}}, x, y), DegenerateInputError);
}

TEST_CASE("Eucl is translation invariant") {
  std::mt19937_64 rng(23);
  auto g = make_grid({0, 0.1, 0.3, 0.35, 0.8, 1.0});
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_curve(g, rng), y = random_curve(g, rng), c = random_curve(g, rng);
    std::vector<double> xs(x.values), ys(y.values);
    for (std::size_t q = 0; q < xs.size(); ++q) {
      xs[q] += c.values[q];
      ys[q] += c.values[q];
    }
    CHECK(distance({metric::Eucl{}}, Curve(g, xs), Curve(g, ys)) ==
          Approx(distance({metric::Eucl{}}, x, y)).epsilon(1e-12));
  }
}

TEST_CASE("Scan with a unit weight profile reproduces Eucl") {
  std::mt19937_64 rng(29);
  auto g = make_grid({0, 0.1, 0.3, 0.35, 0.8, 1.0});
  // A very wide bump is flat to machine precision on the grid.
  const SemiMetricSpec scan{metric::Scan{{0.5, 1e9, 1.0}}};
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_curve(g, rng), y = random_curve(g, rng);
    CHECK(distance(scan, x, y) == Approx(distance({metric::Eucl{}}, x, y)).epsilon(1e-12));
  }
}

TEST_CASE("weight profile peaks at scale and is symmetric") {
  Grid g(testing::linspace(-2, 2, 41));
  const auto w = weight_profile({0.0, 0.7, 300.0}, g);
  CHECK(w[20] == 300.0);
  for (std::size_t q = 0; q < 41; ++q) CHECK(w[q] == Approx(w[40 - q]));
  CHECK(*std::max_element(w.begin(), w.end()) == 300.0);
  CHECK_THROWS_AS(weight_profile({0.0, 0.0, 1.0}, g), ConfigError);
  CHECK_THROWS_AS(weight_profile({0.0, 1.0, -1.0}, g), ConfigError);
}

TEST_CASE("weight profile off-grid centre still peaks at scale") {
  Grid g({0, 1, 2, 3});
  const auto w = weight_profile({1.3, 0.5, 300.0}, g);
  CHECK(*std::max_element(w.begin(), w.end()) == Approx(300.0));
  CHECK(w[1] == Approx(300.0));
}

TEST_CASE("weight profile on the cell-chip style grid") {
  // 89 points, spacing 6, with the small drifts seen in the reported centres.
  std::vector<double> t;
  for (int i = 1; i <= 89; ++i) t.push_back(3.12 + 6.0 * (i - 1) + (i >= 37 ? 0.009 : 0.0) + (i >= 67 ? 0.011 : 0.0));
  Grid g(t);
  const auto w = weight_profile({219.129, 10.0, 300.0}, g);
  CHECK(w[36] == Approx(300.0));
  CHECK(w[35] == Approx(w[37]).epsilon(1e-3));
  CHECK(w[36 + 8] < 0.01);
}

TEST_CASE("mismatched grids are rejected") {
  auto g1 = make_grid({0, 1, 2}), g2 = make_grid({0, 1, 3});
  CHECK_THROWS_AS(distance({metric::Eucl{}}, Curve(g1, {0, 0, 0}), Curve(g2, {0, 0, 0})), DataError);
}

TEST_CASE("equal grids held by different pointers are accepted") {
  auto g1 = make_grid({0, 1, 2}), g2 = make_grid({0, 1, 2});
  CHECK(distance({metric::Eucl{}}, Curve(g1, {0, 0, 0}), Curve(g2, {0, 0, 0})) == 0.0);
}

TEST_CASE("parameters outside the grid span are rejected") {
  auto g = make_grid({0, 1, 2});
  CHECK_THROWS_AS(SemiMetricKernel({metric::ShortEucl{{0.5, 3}}}, g), ConfigError);
  CHECK_THROWS_AS(SemiMetricKernel({metric::ShortEucl{{1.2, 1.8}}}, g), ConfigError);
  CHECK_THROWS_AS(SemiMetricKernel({metric::Jump{-1, 1}}, g), ConfigError);
  CHECK_THROWS_AS(SemiMetricKernel({metric::Points{{}}}, g), ConfigError);
  CHECK_THROWS_AS(SemiMetricKernel({metric::Scan{{5, 1, 1}}}, g), ConfigError);
}

TEST_CASE("centered variants ignore level shifts") {
  std::mt19937_64 rng(31);
  auto g = make_grid(testing::linspace(0, 2, 15));
  const auto x = random_curve(g, rng);
  std::vector<double> shifted(x.values);
  for (auto& v : shifted) v += 7.5;
  for (const auto& spec : all_kinds(true)) {
    if (spec.kind() == SemiMetricKind::RelAreas) continue;
    INFO(kind_name(spec.kind()));
    CHECK(distance(spec, x, Curve(g, shifted)) == Approx(0.0).margin(1e-9));
  }
}
