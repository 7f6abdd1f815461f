#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fknne/curves.hpp"
#include "fknne/error.hpp"

namespace fknne {

/// Closed interval of the curve domain, in grid units.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Gaussian bump centred at tau, rescaled so that its maximum over the grid
/// equals `scale`.
struct WeightFunction {
  double tau = 0.0;
  double sigma = 1.0;
  double scale = 1.0;
  friend bool operator==(const WeightFunction&, const WeightFunction&) = default;
};

namespace metric {
struct Eucl {
  friend bool operator==(const Eucl&, const Eucl&) = default;
};
struct Scan {
  WeightFunction weight;
  friend bool operator==(const Scan&, const Scan&) = default;
};
struct ShortEucl {
  Interval range;
  friend bool operator==(const ShortEucl&, const ShortEucl&) = default;
};
struct Mean {
  friend bool operator==(const Mean&, const Mean&) = default;
};
struct RelAreas {
  Interval numerator;
  Interval denominator;
  friend bool operator==(const RelAreas&, const RelAreas&) = default;
};
struct Jump {
  double t_b = 0.0;
  double t_o = 0.0;
  friend bool operator==(const Jump&, const Jump&) = default;
};
struct Max {
  friend bool operator==(const Max&, const Max&) = default;
};
struct Min {
  friend bool operator==(const Min&, const Min&) = default;
};
struct Points {
  std::vector<double> at;
  friend bool operator==(const Points&, const Points&) = default;
};
}  // namespace metric

using SemiMetricParams = std::variant<metric::Eucl, metric::Scan, metric::ShortEucl, metric::Mean,
                                      metric::RelAreas, metric::Jump, metric::Max, metric::Min,
                                      metric::Points>;

enum class SemiMetricKind { Eucl, Scan, ShortEucl, Mean, RelAreas, Jump, Max, Min, Points };

inline constexpr std::string_view kind_name(SemiMetricKind k) {
  constexpr std::string_view names[] = {"eucl", "scan", "short_eucl", "mean", "rel_areas",
                                        "jump", "max",  "min",        "points"};
  return names[static_cast<int>(k)];
}

struct SemiMetricSpec {
  SemiMetricParams params;
  bool centered = false;

  SemiMetricKind kind() const noexcept { return static_cast<SemiMetricKind>(params.index()); }
  friend bool operator==(const SemiMetricSpec&, const SemiMetricSpec&) = default;
};

/// Gaussian profile on the grid, rescaled so that max over the grid is w.scale.
inline std::vector<double> weight_profile(const WeightFunction& w, const Grid& grid) {
  if (!(w.sigma > 0.0) || !(w.scale > 0.0)) {
    throw ConfigError("weight function needs sigma > 0 and scale > 0");
  }
  // The Gaussian normalising constant cancels under the rescaling, so work
  // with exponents relative to the grid point closest to tau.
  std::vector<double> z2(grid.size());
  for (std::size_t q = 0; q < grid.size(); ++q) {
    const double z = (grid[q] - w.tau) / w.sigma;
    z2[q] = z * z;
  }
  const double z2min = *std::min_element(z2.begin(), z2.end());
  std::vector<double> out(grid.size());
  for (std::size_t q = 0; q < grid.size(); ++q) out[q] = w.scale * std::exp(-0.5 * (z2[q] - z2min));
  return out;
}

/// A semi-metric bound to one grid. Curves are mapped once to an embedding;
/// the distance is then a cheap function of two embeddings.
class SemiMetricKernel {
 public:
  enum class Reduction { L2, AbsDiff, MeanAbs };

  SemiMetricKernel(const SemiMetricSpec& spec, GridPtr grid) : spec_(spec), grid_(std::move(grid)) {
    if (!grid_) throw DataError("semi-metric bound to a null grid");
    std::visit([this](const auto& p) { this->setup(p); }, spec_.params);
  }

  const SemiMetricSpec& spec() const noexcept { return spec_; }
  const GridPtr& grid() const noexcept { return grid_; }
  Reduction reduction() const noexcept { return reduction_; }

  /// Embedding of already derived (and, if flagged, centred) curve values.
  std::vector<double> embed(std::span<const double> x) const {
    switch (spec_.kind()) {
      case SemiMetricKind::Eucl:
      case SemiMetricKind::Scan:
      case SemiMetricKind::ShortEucl: {
        std::vector<double> e(support_.size());
        for (std::size_t s = 0; s < support_.size(); ++s) e[s] = root_weight_[s] * x[support_[s]];
        return e;
      }
      case SemiMetricKind::Mean:
        return {integrate(weights_, x)};
      case SemiMetricKind::RelAreas: {
        const double den = integrate(weights2_, x);
        if (den == 0.0) throw DegenerateInputError("rel_areas: denominator integral is zero");
        return {std::abs(integrate(weights_, x) / den)};
      }
      case SemiMetricKind::Jump:
        return {x[support_[0]] - x[support_[1]]};
      case SemiMetricKind::Max:
        return {*std::max_element(x.begin(), x.end())};
      case SemiMetricKind::Min:
        return {*std::min_element(x.begin(), x.end())};
      case SemiMetricKind::Points: {
        std::vector<double> e(support_.size());
        for (std::size_t s = 0; s < support_.size(); ++s) e[s] = x[support_[s]];
        return e;
      }
    }
    return {};
  }

  double between(std::span<const double> a, std::span<const double> b) const noexcept {
    switch (reduction_) {
      case Reduction::L2: {
        double s = 0.0;
        for (std::size_t q = 0; q < a.size(); ++q) {
          const double d = a[q] - b[q];
          s += d * d;
        }
        return std::sqrt(s);
      }
      case Reduction::AbsDiff:
        return std::abs(a[0] - b[0]);
      case Reduction::MeanAbs: {
        double s = 0.0;
        for (std::size_t q = 0; q < a.size(); ++q) s += std::abs(a[q] - b[q]);
        return s / static_cast<double>(a.size());
      }
    }
    return 0.0;
  }

 private:
  void check_point(double t, std::string_view what) const {
    const double eps = 1e-9 * (grid_->back() - grid_->front());
    if (!(t >= grid_->front() - eps && t <= grid_->back() + eps)) {
      throw ConfigError(std::string(kind_name(spec_.kind())) + ": " + std::string(what) + " " +
                        std::to_string(t) + " lies outside the grid span");
    }
  }

  // Grid positions covered by the interval; at least two are required.
  std::pair<std::size_t, std::size_t> resolve(const Interval& iv) const {
    check_point(iv.lo, "interval bound");
    check_point(iv.hi, "interval bound");
    if (!(iv.lo < iv.hi)) throw ConfigError("interval must satisfy lo < hi");
    const double eps = 1e-9 * (grid_->back() - grid_->front());
    const auto pts = grid_->points();
    const auto first = static_cast<std::size_t>(
        std::lower_bound(pts.begin(), pts.end(), iv.lo - eps) - pts.begin());
    const auto past = static_cast<std::size_t>(
        std::upper_bound(pts.begin(), pts.end(), iv.hi + eps) - pts.begin());
    if (past < first + 2) {
      throw ConfigError("interval [" + std::to_string(iv.lo) + ", " + std::to_string(iv.hi) +
                        "] covers fewer than two grid points");
    }
    return {first, past - 1};
  }

  void set_weighted_l2(const std::vector<double>& w) {
    reduction_ = Reduction::L2;
    for (std::size_t q = 0; q < w.size(); ++q) {
      if (w[q] > 0.0) {
        support_.push_back(q);
        root_weight_.push_back(std::sqrt(w[q]));
      }
    }
  }

  void setup(const metric::Eucl&) { set_weighted_l2(trapezoid_weights(*grid_)); }

  void setup(const metric::Scan& p) {
    check_point(p.weight.tau, "tau");
    const auto phi = weight_profile(p.weight, *grid_);
    auto w = trapezoid_weights(*grid_);
    for (std::size_t q = 0; q < w.size(); ++q) w[q] *= phi[q] * phi[q];
    set_weighted_l2(w);
  }

  void setup(const metric::ShortEucl& p) {
    const auto [a, b] = resolve(p.range);
    set_weighted_l2(trapezoid_weights(*grid_, a, b));
  }

  void setup(const metric::Mean&) {
    reduction_ = Reduction::AbsDiff;
    weights_ = trapezoid_weights(*grid_);
  }

  void setup(const metric::RelAreas& p) {
    reduction_ = Reduction::AbsDiff;
    const auto [a1, b1] = resolve(p.numerator);
    const auto [a2, b2] = resolve(p.denominator);
    weights_ = trapezoid_weights(*grid_, a1, b1);
    weights2_ = trapezoid_weights(*grid_, a2, b2);
  }

  void setup(const metric::Jump& p) {
    reduction_ = Reduction::AbsDiff;
    check_point(p.t_b, "t_b");
    check_point(p.t_o, "t_o");
    support_ = {grid_->nearest(p.t_b), grid_->nearest(p.t_o)};
  }

  void setup(const metric::Max&) { reduction_ = Reduction::AbsDiff; }
  void setup(const metric::Min&) { reduction_ = Reduction::AbsDiff; }

  void setup(const metric::Points& p) {
    if (p.at.empty()) throw ConfigError("points: needs at least one impact point");
    reduction_ = Reduction::MeanAbs;
    for (double t : p.at) {
      check_point(t, "impact point");
      support_.push_back(grid_->nearest(t));
    }
  }

  SemiMetricSpec spec_;
  GridPtr grid_;
  Reduction reduction_ = Reduction::L2;
  std::vector<std::size_t> support_;
  std::vector<double> root_weight_;
  std::vector<double> weights_;
  std::vector<double> weights2_;
};

/// Curve values as seen by the kernel: derived, then centred when flagged.
inline std::vector<double> prepare_values(const Grid& grid, std::span<const double> values, int order,
                                          bool centered) {
  auto v = derive_values(grid, values, order);
  if (centered) v = center_values(grid, v);
  return v;
}

/// Semi-metric between two curves on the same grid. Derivatives are taken by
/// the caller; centring is applied here when the spec asks for it.
inline double distance(const SemiMetricSpec& spec, const Curve& x, const Curve& y) {
  if (!same_grid(x.grid, y.grid)) throw DataError("distance between curves on different grids");
  const SemiMetricKernel kernel(spec, x.grid);
  if (spec.centered) {
    const auto xc = center_values(*x.grid, x.values);
    const auto yc = center_values(*y.grid, y.values);
    return kernel.between(kernel.embed(xc), kernel.embed(yc));
  }
  return kernel.between(kernel.embed(x.values), kernel.embed(y.values));
}

}  // namespace fknne
