#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cto/errors.hpp"

namespace cto {

inline double mean(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw ArgumentError("mean: empty vector");
  return v.mean();
}

/// Sample variance with n-1 denominator.
inline double sample_variance(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) throw DataError("sample_variance: need at least 2 values");
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(n - 1);
}

inline double sample_sd(const Eigen::VectorXd& v) {
  return std::sqrt(sample_variance(v));
}

/// Sample covariance (n-1 denominator) of row-observations.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& rows) {
  const auto n = rows.rows();
  if (n < 2) throw DataError("sample_covariance: need at least 2 rows");
  const Eigen::RowVectorXd m = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - m;
  return centered.transpose() * centered / static_cast<double>(n - 1);
}

/// Linear-interpolation quantile (the common "type 7" estimator).
/// p in [0, 1]; p = 0.5 gives the median.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("quantile: empty sample");
  if (p < 0.0 || p > 1.0) throw ArgumentError("quantile: p outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double quantile(const Eigen::VectorXd& values, double p) {
  return quantile(std::vector<double>(values.data(), values.data() + values.size()), p);
}

/// Log density of N(x; mu, var).
inline double log_normal_pdf(double x, double mu, double var) {
  static constexpr double kLog2Pi = 1.8378770664093454836;
  const double r = x - mu;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
}

}  // namespace cto
