#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cto/design_space.hpp"
#include "cto/emulator.hpp"
#include "cto/errors.hpp"
#include "cto/models.hpp"
#include "cto/stats.hpp"

namespace cto {

inline constexpr double kNegativeInfinity = -std::numeric_limits<double>::infinity();

/// Artificial observations: one target value per output, treated as observed
/// at every point of a grid over the control inputs.
struct TargetSet {
  Eigen::MatrixXd control_grid;    // g x p, unit scale
  Eigen::VectorXd targets;         // m, standardized scale
  Eigen::VectorXd native_targets;  // m, native units

  int grid_size() const { return static_cast<int>(control_grid.rows()); }
  int m() const { return static_cast<int>(targets.size()); }

  /// Replicate native target values over an evenly spaced control grid.
  /// With no control inputs the grid degenerates to a single point; with
  /// several control inputs a space-filling design stands in for the grid.
  static TargetSet constant_over_grid(const Eigen::VectorXd& native_targets,
                                      const OutputTransform& transform, int grid_points,
                                      int p) {
    if (grid_points < 1) throw ArgumentError("target grid needs at least one point");
    if (native_targets.size() != transform.size())
      throw ShapeError("target length != output count");
    TargetSet t;
    t.native_targets = native_targets;
    t.targets = transform.standardize(native_targets);
    if (p == 0) {
      t.control_grid.resize(1, 0);
    } else if (p == 1) {
      t.control_grid.resize(grid_points, 1);
      if (grid_points == 1) {
        t.control_grid(0, 0) = 0.5;
      } else {
        for (int i = 0; i < grid_points; ++i)
          t.control_grid(i, 0) =
              static_cast<double>(i) / static_cast<double>(grid_points - 1);
      }
    } else {
      t.control_grid = latin_hypercube(grid_points, p, /*seed=*/0xC0C0ULL);
    }
    return t;
  }
};

/// Observation-error variance handling: each output's sigma^2 is either held
/// fixed or sampled under the Gamma(4, scale 1/8) prior.
class NoiseSpec {
 public:
  static constexpr double kPriorShape = 4.0;
  static constexpr double kPriorScale = 0.125;
  /// Effectively-flat value used for preliminary runs on standardized outputs.
  static constexpr double kPreliminarySigma2 = 5e7;

  static NoiseSpec fixed(const Eigen::VectorXd& sigma2) {
    std::vector<std::optional<double>> entries(static_cast<std::size_t>(sigma2.size()));
    for (Eigen::Index i = 0; i < sigma2.size(); ++i) {
      if (!(sigma2(i) > 0.0))
        throw ArgumentError("fixed noise variance must be positive");
      entries[static_cast<std::size_t>(i)] = sigma2(i);
    }
    return NoiseSpec(std::move(entries));
  }

  static NoiseSpec sampled(int m) {
    return NoiseSpec(std::vector<std::optional<double>>(static_cast<std::size_t>(m)));
  }

  /// Per-output mix: engaged entries are fixed, empty entries are sampled.
  static NoiseSpec mixed(std::vector<std::optional<double>> entries) {
    for (const auto& e : entries)
      if (e && !(*e > 0.0)) throw ArgumentError("fixed noise variance must be positive");
    return NoiseSpec(std::move(entries));
  }

  int m() const { return static_cast<int>(entries_.size()); }
  bool is_sampled(int i) const { return !entries_[static_cast<std::size_t>(i)].has_value(); }
  double fixed_value(int i) const { return *entries_[static_cast<std::size_t>(i)]; }

  std::vector<int> sampled_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < m(); ++i)
      if (is_sampled(i)) idx.push_back(i);
    return idx;
  }

  /// Full sigma^2 vector at chain start: fixed values where given, the prior
  /// mean (shape * scale = 0.5) where sampled.
  Eigen::VectorXd initial_sigma2() const {
    Eigen::VectorXd s(m());
    for (int i = 0; i < m(); ++i)
      s(i) = is_sampled(i) ? kPriorShape * kPriorScale : fixed_value(i);
    return s;
  }

 private:
  explicit NoiseSpec(std::vector<std::optional<double>> entries)
      : entries_(std::move(entries)) {
    if (entries_.empty()) throw ArgumentError("noise spec needs at least one output");
  }
  std::vector<std::optional<double>> entries_;
};

/// Everything the log-posterior needs: the response (an emulator or a
/// directly evaluable model), the targets, the prior box for the design
/// variables, and the noise handling.
struct PosteriorSpec {
  std::shared_ptr<const Emulator> emulator;    // set for the emulator path
  std::shared_ptr<const ComputerModel> model;  // set for the direct path
  TargetSet target;
  Eigen::MatrixXd theta_bounds;  // q x 2, unit scale
  NoiseSpec noise = NoiseSpec::sampled(1);
  OutputTransform transform;

  bool direct() const { return model != nullptr; }
  int q() const { return static_cast<int>(theta_bounds.rows()); }
  int m() const { return target.m(); }

  void validate() const {
    if ((emulator == nullptr) == (model == nullptr))
      throw ArgumentError("posterior spec: exactly one of emulator/model must be set");
    const int response_m = direct() ? model->m() : emulator->m();
    if (response_m != target.m() || noise.m() != target.m() ||
        transform.size() != target.m())
      throw ShapeError("posterior spec: output counts disagree");
    if (theta_bounds.cols() != 2) throw ShapeError("posterior spec: bounds must be q x 2");
    for (Eigen::Index i = 0; i < theta_bounds.rows(); ++i)
      if (!(theta_bounds(i, 0) < theta_bounds(i, 1)) || theta_bounds(i, 0) < 0.0 ||
          theta_bounds(i, 1) > 1.0)
        throw ArgumentError("posterior spec: bounds must be nondegenerate within [0,1]");
    const int p = direct() ? model->space.p() : emulator->input_dim() - q();
    if (target.control_grid.cols() != p)
      throw ShapeError("posterior spec: control grid width != p");
  }

  /// Assemble the g x (p+q) query matrix at design setting theta.
  Eigen::MatrixXd queries_at(const Eigen::VectorXd& theta) const {
    const int g = target.grid_size();
    const int p = static_cast<int>(target.control_grid.cols());
    Eigen::MatrixXd queries(g, p + q());
    for (int j = 0; j < g; ++j) {
      queries.row(j).head(p) = target.control_grid.row(j);
      queries.row(j).tail(q()) = theta.transpose();
    }
    return queries;
  }
};

/// Uniform prior over the closed bounds box: 0 inside, -inf outside
/// (unnormalized).
inline double log_prior_theta(const Eigen::VectorXd& theta,
                              const Eigen::MatrixXd& bounds) {
  if (theta.size() != bounds.rows())
    throw ShapeError("log_prior_theta: dimension mismatch");
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta(i))) return kNegativeInfinity;
    if (theta(i) < bounds(i, 0) || theta(i) > bounds(i, 1)) return kNegativeInfinity;
  }
  return 0.0;
}

/// Sum of independent Gamma(shape 4, scale 1/8) log densities; -inf off the
/// positive support. Maximized at sigma^2 = 0.375 per component.
inline double log_prior_sigma2(const Eigen::VectorXd& sigma2) {
  // log Gamma(4) = log 6.
  static const double kLogNorm =
      NoiseSpec::kPriorShape * std::log(1.0 / NoiseSpec::kPriorScale) - std::log(6.0);
  double total = 0.0;
  for (Eigen::Index i = 0; i < sigma2.size(); ++i) {
    const double s = sigma2(i);
    if (!(s > 0.0)) return kNegativeInfinity;
    total += (NoiseSpec::kPriorShape - 1.0) * std::log(s) - s / NoiseSpec::kPriorScale +
             kLogNorm;
  }
  return total;
}

/// Log likelihood of the target outcomes at design setting theta.
///
/// Emulator path: per output, the GP conditional at the g target points
/// (design coordinates set to theta) gives N(y_t 1; mu*, Sigma* + sigma^2 I);
/// this differs from the joint density of (training runs, targets) by a
/// constant free of (theta, sigma^2). Direct path: independent normals
/// around the standardized model output at each grid point.
inline double log_likelihood_targets(const PosteriorSpec& spec,
                                     const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& sigma2) {
  if (theta.size() != spec.q()) throw ShapeError("log_likelihood_targets: theta size != q");
  if (sigma2.size() != spec.m())
    throw ShapeError("log_likelihood_targets: sigma2 size != output count");

  const int g = spec.target.grid_size();
  double total = 0.0;
  if (spec.direct()) {
    const DesignSpace& space = spec.model->space;
    for (int j = 0; j < g; ++j) {
      Eigen::VectorXd unit(space.dim());
      unit.head(spec.target.control_grid.cols()) = spec.target.control_grid.row(j);
      unit.tail(spec.q()) = theta;
      const Eigen::VectorXd out = spec.model->evaluate(space.unscale_from_unit(unit));
      for (int i = 0; i < spec.m(); ++i) {
        const double standardized = spec.transform.standardize(i, out(i));
        total += log_normal_pdf(spec.target.targets(i), standardized, sigma2(i));
      }
    }
    return total;
  }

  const Eigen::MatrixXd queries = spec.queries_at(theta);
  for (int i = 0; i < spec.m(); ++i) {
    PredictResult pred = spec.emulator->predict(i, queries);
    Eigen::MatrixXd noisy = pred.cov;
    noisy.diagonal().array() += sigma2(i);
    const auto factor = detail::try_cholesky(noisy);
    if (!factor)
      throw NumericalError(
          "log_likelihood_targets: predictive covariance factorization failed");
    const Eigen::VectorXd residual =
        Eigen::VectorXd::Constant(g, spec.target.targets(i)) - pred.mean;
    total += detail::log_likelihood_from_factor(*factor, residual);
  }
  return total;
}

/// Unnormalized log posterior over (theta, sigma^2): target likelihood plus
/// the uniform theta prior, plus the Gamma prior over whichever sigma^2
/// components are sampled. Out-of-bounds theta short-circuits to -inf
/// without touching the likelihood.
inline double log_posterior(const PosteriorSpec& spec, const Eigen::VectorXd& theta,
                            const Eigen::VectorXd& sigma2) {
  const double prior_theta = log_prior_theta(theta, spec.theta_bounds);
  if (prior_theta == kNegativeInfinity) return kNegativeInfinity;

  double prior_sigma2 = 0.0;
  const auto sampled = spec.noise.sampled_indices();
  if (!sampled.empty()) {
    Eigen::VectorXd sampled_values(static_cast<Eigen::Index>(sampled.size()));
    for (std::size_t k = 0; k < sampled.size(); ++k)
      sampled_values(static_cast<Eigen::Index>(k)) = sigma2(sampled[k]);
    prior_sigma2 = log_prior_sigma2(sampled_values);
    if (prior_sigma2 == kNegativeInfinity) return kNegativeInfinity;
  }

  return log_likelihood_targets(spec, theta, sigma2) + prior_theta + prior_sigma2;
}

}  // namespace cto
