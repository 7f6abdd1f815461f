#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fknne/error.hpp"
#include "fknne/optimizer.hpp"

namespace fknne {

/// One-hot coding z[i][g] = 1(y_i = g).
struct CodedResponse {
  Eigen::MatrixXd z;

  static CodedResponse from_labels(std::span<const int> labels, int classes) {
    CodedResponse out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), classes)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 1 || labels[i] > classes) {
        throw DataError("label " + std::to_string(labels[i]) + " outside 1.." + std::to_string(classes));
      }
      out.z(static_cast<Eigen::Index>(i), labels[i] - 1) = 1.0;
    }
    return out;
  }
};

struct ScoreReport {
  double brier = 0.0;
  double mcr = 0.0;
  std::size_t n_test = 0;
};

/// Brier score normalised by the number of observations and classes.
inline double brier(const CodedResponse& coded, const Eigen::MatrixXd& probs) {
  if (coded.z.rows() != probs.rows() || coded.z.cols() != probs.cols()) {
    throw DataError("brier: coded response is " + std::to_string(coded.z.rows()) + "x" +
                    std::to_string(coded.z.cols()) + ", probabilities are " + std::to_string(probs.rows()) +
                    "x" + std::to_string(probs.cols()));
  }
  if (probs.rows() == 0) throw DataError("brier: no observations");
  return (coded.z - probs).squaredNorm() / static_cast<double>(probs.rows() * probs.cols());
}

/// Misclassification (error) rate.
inline double mcr(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw DataError("mcr: label vectors differ in length");
  if (truth.empty()) throw DataError("mcr: no observations");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += truth[i] != predicted[i];
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

inline ScoreReport score(std::span<const int> truth, const Eigen::MatrixXd& probs, std::span<const int> predicted) {
  const auto coded = CodedResponse::from_labels(truth, static_cast<int>(probs.cols()));
  return {brier(coded, probs), mcr(truth, predicted), truth.size()};
}

/// Relative feature importance in percent: column sums over the total mass.
inline std::vector<double> rfi(const CoefMatrix& coef) {
  const double total = coef.values.sum();
  if (!(total > 0.0)) throw DataError("relative feature importance is undefined for all-zero coefficients");
  const Eigen::RowVectorXd per_feature = coef.values.colwise().sum();
  std::vector<double> out(static_cast<std::size_t>(per_feature.size()));
  for (Eigen::Index l = 0; l < per_feature.size(); ++l) out[static_cast<std::size_t>(l)] = 100.0 * per_feature(l) / total;
  return out;
}

/// Five-number summary plus mean, for boxplot data.
struct BoxSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  std::size_t count = 0;
};

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> x, double prob) {
  if (x.empty()) throw DataError("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline BoxSummary summarize(const std::vector<double>& x) {
  BoxSummary s;
  s.count = x.size();
  s.min = quantile(x, 0.0);
  s.q1 = quantile(x, 0.25);
  s.median = quantile(x, 0.5);
  s.q3 = quantile(x, 0.75);
  s.max = quantile(x, 1.0);
  double sum = 0;
  for (double v : x) sum += v;
  s.mean = sum / static_cast<double>(x.size());
  return s;
}

}  // namespace fknne
