#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fknne/error.hpp"

namespace fknne {

/// Ordered observation points of a functional covariate.
class Grid {
 public:
  explicit Grid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 3) {
      throw DataError("grid needs at least 3 points, got " + std::to_string(points_.size()));
    }
    for (std::size_t q = 0; q < points_.size(); ++q) {
      if (!std::isfinite(points_[q])) {
        throw DataError("grid point " + std::to_string(q) + " is not finite");
      }
      if (q > 0 && !(points_[q] > points_[q - 1])) {
        throw DataError("grid is not strictly increasing at position " + std::to_string(q));
      }
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  double operator[](std::size_t q) const noexcept { return points_[q]; }
  std::span<const double> points() const noexcept { return points_; }
  double front() const noexcept { return points_.front(); }
  double back() const noexcept { return points_.back(); }

  /// Index of the grid point closest to t; ties go to the earlier point.
  std::size_t nearest(double t) const {
    auto it = std::lower_bound(points_.begin(), points_.end(), t);
    if (it == points_.begin()) return 0;
    if (it == points_.end()) return points_.size() - 1;
    const auto hi = static_cast<std::size_t>(it - points_.begin());
    const auto lo = hi - 1;
    return (t - points_[lo] <= points_[hi] - t) ? lo : hi;
  }

  friend bool operator==(const Grid& a, const Grid& b) { return a.points_ == b.points_; }

 private:
  std::vector<double> points_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(std::vector<double> points) {
  return std::make_shared<const Grid>(std::move(points));
}

inline bool same_grid(const GridPtr& a, const GridPtr& b) {
  return a == b || (a && b && *a == *b);
}

/// One functional observation sampled on a grid.
struct Curve {
  GridPtr grid;
  std::vector<double> values;

  Curve() = default;
  Curve(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (!grid) throw DataError("curve without grid");
    if (values.size() != grid->size()) {
      throw DataError("curve has " + std::to_string(values.size()) + " values but grid has " +
                      std::to_string(grid->size()) + " points");
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw DataError("curve contains a non-finite value");
    }
  }

  std::size_t size() const noexcept { return values.size(); }
};

/// All curves of one covariate type; they share a single grid.
struct Covariate {
  std::string name;
  GridPtr grid;
  std::vector<Curve> curves;
};

/// Aligned curves per covariate type plus 1-based class labels.
struct Dataset {
  std::vector<Covariate> covariates;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t type_count() const noexcept { return covariates.size(); }

  /// Structural checks. Learning sets additionally need every class present.
  void validate(bool require_all_classes = true) const {
    if (class_count < 1) throw DataError("class count must be positive");
    if (covariates.empty()) throw DataError("dataset has no covariate types");
    for (const auto& cov : covariates) {
      if (cov.curves.size() != labels.size()) {
        throw DataError("covariate '" + cov.name + "' has " + std::to_string(cov.curves.size()) +
                        " curves but there are " + std::to_string(labels.size()) + " labels");
      }
      for (const auto& c : cov.curves) {
        if (!same_grid(c.grid, cov.grid)) {
          throw DataError("covariate '" + cov.name + "' mixes curves on different grids");
        }
      }
    }
    std::vector<int> seen(static_cast<std::size_t>(class_count), 0);
    for (int y : labels) {
      if (y < 1 || y > class_count) {
        throw DataError("label " + std::to_string(y) + " outside 1.." + std::to_string(class_count));
      }
      ++seen[static_cast<std::size_t>(y - 1)];
    }
    if (require_all_classes) {
      for (int g = 0; g < class_count; ++g) {
        if (seen[static_cast<std::size_t>(g)] == 0) {
          throw DataError("class " + std::to_string(g + 1) + " does not occur");
        }
      }
    }
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.class_count = class_count;
    out.labels.reserve(rows.size());
    for (auto i : rows) out.labels.push_back(labels.at(i));
    for (const auto& cov : covariates) {
      Covariate c{cov.name, cov.grid, {}};
      c.curves.reserve(rows.size());
      for (auto i : rows) c.curves.push_back(cov.curves.at(i));
      out.covariates.push_back(std::move(c));
    }
    return out;
  }
};

/// Trapezoid quadrature weights on grid positions [first, last] (inclusive).
inline std::vector<double> trapezoid_weights(const Grid& grid, std::size_t first, std::size_t last) {
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t q = first; q < last; ++q) {
    const double half = 0.5 * (grid[q + 1] - grid[q]);
    w[q] += half;
    w[q + 1] += half;
  }
  return w;
}

inline std::vector<double> trapezoid_weights(const Grid& grid) {
  return trapezoid_weights(grid, 0, grid.size() - 1);
}

inline double integrate(std::span<const double> weights, std::span<const double> values) {
  double s = 0.0;
  for (std::size_t q = 0; q < values.size(); ++q) s += weights[q] * values[q];
  return s;
}

// -- derivatives --------------------------------------------------------------

enum class DerivativeScheme { FiniteDifference };

namespace detail {

// Second-order three-point first derivative on a possibly non-uniform grid.
// Interior points use the central stencil, the two ends one-sided stencils;
// all three are exact for quadratics.
inline std::vector<double> first_derivative(const Grid& grid, std::span<const double> f) {
  const std::size_t m = f.size();
  std::vector<double> d(m);
  {
    const double h1 = grid[1] - grid[0];
    const double h2 = grid[2] - grid[1];
    d[0] = -(2 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1] -
           h1 / (h2 * (h1 + h2)) * f[2];
  }
  for (std::size_t q = 1; q + 1 < m; ++q) {
    const double h1 = grid[q] - grid[q - 1];
    const double h2 = grid[q + 1] - grid[q];
    d[q] = -h2 / (h1 * (h1 + h2)) * f[q - 1] + (h2 - h1) / (h1 * h2) * f[q] +
           h1 / (h2 * (h1 + h2)) * f[q + 1];
  }
  {
    const double h1 = grid[m - 2] - grid[m - 3];
    const double h2 = grid[m - 1] - grid[m - 2];
    d[m - 1] = h2 / (h1 * (h1 + h2)) * f[m - 3] - (h1 + h2) / (h1 * h2) * f[m - 2] +
               (2 * h2 + h1) / (h2 * (h1 + h2)) * f[m - 1];
  }
  return d;
}

}  // namespace detail

/// Values of the order-th derivative on the same grid (order-fold application
/// of the three-point stencil).
inline std::vector<double> derive_values(const Grid& grid, std::span<const double> values, int order,
                                         DerivativeScheme = DerivativeScheme::FiniteDifference) {
  if (order < 0) throw ConfigError("derivative order must be nonnegative");
  if (static_cast<std::size_t>(order) > grid.size() - 1) {
    throw DegenerateInputError("derivative order " + std::to_string(order) + " too high for a grid of " +
                    std::to_string(grid.size()) + " points");
  }
  std::vector<double> out(values.begin(), values.end());
  for (int a = 0; a < order; ++a) out = detail::first_derivative(grid, out);
  return out;
}

inline Curve derive(const Curve& curve, int order) {
  if (order == 0) return curve;
  return Curve(curve.grid, derive_values(*curve.grid, curve.values, order));
}

// -- centering ------------------------------------------------------------------

/// Trapezoid-weighted mean of the curve over its grid.
inline double curve_mean(const Grid& grid, std::span<const double> values) {
  const auto w = trapezoid_weights(grid);
  return integrate(w, values) / (grid.back() - grid.front());
}

inline std::vector<double> center_values(const Grid& grid, std::span<const double> values) {
  const double m = curve_mean(grid, values);
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [m](double v) { return v - m; });
  return out;
}

inline Curve center(const Curve& curve) {
  return Curve(curve.grid, center_values(*curve.grid, curve.values));
}

// -- standardization --------------------------------------------------------------

struct Standardized {
  Dataset learn;
  Dataset test;
  std::vector<double> scale;  ///< one divisor per covariate type
};

/// Pooled standard deviation (population form) of every value of every curve.
inline double pooled_sd(const Covariate& cov) {
  double n = 0, mean = 0, m2 = 0;
  for (const auto& c : cov.curves) {
    for (double v : c.values) {
      n += 1;
      const double delta = v - mean;
      mean += delta / n;
      m2 += delta * (v - mean);
    }
  }
  if (n == 0) return 0.0;
  return std::sqrt(m2 / n);
}

inline Dataset apply_scale(Dataset data, std::span<const double> scale) {
  if (scale.size() != data.covariates.size()) {
    throw DataError("scale vector has " + std::to_string(scale.size()) + " entries for " +
                    std::to_string(data.covariates.size()) + " covariate types");
  }
  for (std::size_t r = 0; r < data.covariates.size(); ++r) {
    for (auto& c : data.covariates[r].curves) {
      for (double& v : c.values) v /= scale[r];
    }
  }
  return data;
}

/// Divides learn and test curves by the learning set's per-type pooled sd.
inline Standardized standardize(const Dataset& learn, const Dataset& test) {
  if (learn.size() == 0) throw DataError("cannot standardize an empty learning set");
  if (learn.covariates.size() != test.covariates.size()) {
    throw DataError("learning and test sets have different covariate types");
  }
  std::vector<double> scale;
  for (const auto& cov : learn.covariates) {
    const double sd = pooled_sd(cov);
    if (!(sd > 0.0)) throw DataError("covariate '" + cov.name + "' is constant on the learning set");
    scale.push_back(sd);
  }
  return {apply_scale(learn, scale), apply_scale(test, scale), scale};
}

}  // namespace fknne
