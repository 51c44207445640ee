#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cto/errors.hpp"
#include "cto/posterior.hpp"
#include "cto/rng.hpp"
#include "cto/stats.hpp"
#include "cto/util.hpp"

namespace cto {

/// Minimization dominance: a dominates b iff a is no worse everywhere and
/// strictly better somewhere.
inline bool dominates(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("dominates: dimension mismatch");
  bool strictly_better = false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) > b(i)) return false;
    if (a(i) < b(i)) strictly_better = true;
  }
  return strictly_better;
}

/// Indices of the non-dominated rows, in input order. Duplicates of a
/// retained point are all retained.
inline std::vector<int> pareto_filter(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  if (n < 1) throw ArgumentError("pareto_filter: empty point set");

  // Sweep in lexicographic order over all objectives: a strict dominator is
  // lexicographically smaller than its victim, so only earlier points in
  // this order can dominate a candidate.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
      if (points(a, k) < points(b, k)) return true;
      if (points(a, k) > points(b, k)) return false;
    }
    return false;
  });

  std::vector<int> retained;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const int candidate = order[pos];
    bool dominated = false;
    for (std::size_t earlier = 0; earlier < pos && !dominated; ++earlier) {
      dominated = dominates(points.row(order[earlier]).transpose(),
                            points.row(candidate).transpose());
    }
    if (!dominated) retained.push_back(candidate);
  }
  std::sort(retained.begin(), retained.end());
  return retained;
}

/// Componentwise minimum of the observed outputs.
inline Eigen::VectorXd estimate_utopia(const Eigen::MatrixXd& outputs) {
  if (outputs.rows() < 1) throw ArgumentError("estimate_utopia: empty output set");
  return outputs.colwise().minCoeff().transpose();
}

/// Non-dominated predictions with the design settings that produced them.
struct ParetoFront {
  Eigen::MatrixXd outputs_std;     // k x m, standardized
  Eigen::MatrixXd outputs_native;  // k x m
  Eigen::MatrixXd settings;        // k x q, unit scale

  int size() const { return static_cast<int>(outputs_std.rows()); }
};

/// Point on the segment from the front point nearest the utopia point
/// toward the utopia point, standoff standardized units away from the
/// front. standoff = 0 returns the nearest front point itself; if the
/// front touches the utopia point, the utopia point is returned.
inline Eigen::VectorXd select_target_on_ray(const ParetoFront& front,
                                            const Eigen::VectorXd& utopia_std,
                                            double standoff) {
  if (front.size() < 1) throw ArgumentError("select_target_on_ray: empty front");
  if (standoff < 0.0) throw ArgumentError("select_target_on_ray: standoff must be >= 0");
  if (front.outputs_std.cols() != utopia_std.size())
    throw ShapeError("select_target_on_ray: dimension mismatch");

  Eigen::Index nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < front.outputs_std.rows(); ++i) {
    const double dist = (front.outputs_std.row(i).transpose() - utopia_std).norm();
    if (dist < best) {
      best = dist;
      nearest = i;
    }
  }
  const Eigen::VectorXd f = front.outputs_std.row(nearest).transpose();
  const Eigen::VectorXd gap = utopia_std - f;
  const double len = gap.norm();
  if (len == 0.0) return utopia_std;
  return f + (standoff / len) * gap;
}

/// Per-grid-point posterior band of the free objective.
struct ParetoBand {
  Eigen::MatrixXd grid;     // G x (m-1), native values of the constrained outputs
  Eigen::VectorXd medians;  // native, free output
  Eigen::VectorXd lower;    // credible-interval bounds
  Eigen::VectorXd upper;
  Eigen::VectorXd max_rhat;     // worst design-variable R-hat of the sub-run
  std::vector<bool> reliable;   // false where the sub-run failed convergence

  int size() const { return static_cast<int>(grid.rows()); }
};

/// One grid point's calibration sub-run: posterior predictive draws of the
/// free output (native units) and the worst R-hat across design variables.
struct BandRunResult {
  Eigen::VectorXd free_predictive;
  double max_rhat = 0.0;
};

using BandRunner =
    std::function<BandRunResult(const TargetSet&, const NoiseSpec&, std::uint64_t seed)>;

/// Build a Pareto band by running one calibration per grid point: the
/// constrained outputs are pinned to the grid values with small fixed noise
/// (sigma^2 = 0.01 on the standardized scale) while the free output chases
/// an infeasibly good target with sampled noise. Sub-runs execute
/// concurrently with per-job seeds; sub-runs whose R-hat exceeds 1.1 are
/// flagged unreliable.
inline ParetoBand pareto_bands(const OutputTransform& transform,
                               const std::vector<int>& constrained_outputs,
                               const Eigen::MatrixXd& grid_native, int free_output,
                               double free_target_std, int control_grid_points, int p,
                               const BandRunner& runner, std::uint64_t master_seed,
                               double interval_lo = 0.05, double interval_hi = 0.95,
                               double rhat_limit = 1.1) {
  const int m = transform.size();
  if (static_cast<int>(constrained_outputs.size()) != m - 1)
    throw ShapeError("pareto_bands: need m-1 constrained outputs");
  if (grid_native.cols() != static_cast<Eigen::Index>(constrained_outputs.size()))
    throw ShapeError("pareto_bands: grid width != number of constrained outputs");
  if (free_output < 0 || free_output >= m)
    throw ArgumentError("pareto_bands: free output index out of range");
  for (const int c : constrained_outputs)
    if (c == free_output)
      throw ArgumentError("pareto_bands: free output cannot also be constrained");

  const int points = static_cast<int>(grid_native.rows());
  ParetoBand band;
  band.grid = grid_native;
  band.medians.resize(points);
  band.lower.resize(points);
  band.upper.resize(points);
  band.max_rhat.resize(points);
  band.reliable.assign(static_cast<std::size_t>(points), false);

  parallel_for(points, [&](int gidx) {
    Eigen::VectorXd native_target(m);
    native_target(free_output) = transform.destandardize(free_output, free_target_std);
    for (std::size_t k = 0; k < constrained_outputs.size(); ++k)
      native_target(constrained_outputs[k]) = grid_native(gidx, static_cast<Eigen::Index>(k));

    const TargetSet target =
        TargetSet::constant_over_grid(native_target, transform, control_grid_points, p);

    std::vector<std::optional<double>> noise_entries(static_cast<std::size_t>(m));
    for (const int c : constrained_outputs) noise_entries[static_cast<std::size_t>(c)] = 0.01;
    const NoiseSpec noise = NoiseSpec::mixed(std::move(noise_entries));

    const BandRunResult result = runner(
        target, noise, derive_seed(master_seed, Stream::band_job,
                                   static_cast<std::uint64_t>(gidx)));
    band.medians(gidx) = quantile(result.free_predictive, 0.5);
    band.lower(gidx) = quantile(result.free_predictive, interval_lo);
    band.upper(gidx) = quantile(result.free_predictive, interval_hi);
    band.max_rhat(gidx) = result.max_rhat;
    band.reliable[static_cast<std::size_t>(gidx)] = result.max_rhat <= rhat_limit;
  });
  return band;
}

}  // namespace cto
