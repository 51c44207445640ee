#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cto/errors.hpp"
#include "cto/rng.hpp"

namespace cto {

enum class VarKind { control, design };

/// One model input: its name, native-unit range, and whether it is a
/// control input or a design variable.
struct VariableSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  VarKind kind = VarKind::design;
};

/// Ordered collection of input variables, control inputs first, then design
/// variables. All scaling between native units and the unit hypercube goes
/// through here.
class DesignSpace {
 public:
  explicit DesignSpace(std::vector<VariableSpec> variables)
      : variables_(std::move(variables)) {
    std::unordered_set<std::string> names;
    bool seen_design = false;
    for (const auto& v : variables_) {
      if (v.name.empty()) throw ArgumentError("variable with empty name");
      if (!names.insert(v.name).second)
        throw ArgumentError("duplicate variable name '" + v.name + "'");
      if (!(v.lower < v.upper))
        throw ArgumentError("variable '" + v.name + "': lower bound must be below upper");
      if (v.kind == VarKind::design) {
        seen_design = true;
        ++q_;
      } else {
        if (seen_design)
          throw ArgumentError("variable '" + v.name +
                              "': control variables must precede design variables");
        ++p_;
      }
    }
    if (q_ < 1) throw ArgumentError("design space needs at least one design variable");
  }

  int p() const { return p_; }
  int q() const { return q_; }
  int dim() const { return p_ + q_; }
  const std::vector<VariableSpec>& variables() const { return variables_; }
  const VariableSpec& variable(int i) const { return variables_.at(static_cast<std::size_t>(i)); }

  /// Map a native-unit point onto [0,1]^(p+q).
  Eigen::VectorXd scale_to_unit(const Eigen::VectorXd& native) const {
    check_dim(native.size());
    Eigen::VectorXd unit(dim());
    for (int i = 0; i < dim(); ++i) {
      const auto& v = variables_[static_cast<std::size_t>(i)];
      const double x = native(i);
      if (!(x >= v.lower && x <= v.upper))
        throw RangeError("value " + std::to_string(x) + " for variable '" + v.name +
                         "' outside [" + std::to_string(v.lower) + ", " +
                         std::to_string(v.upper) + "]");
      unit(i) = (x - v.lower) / (v.upper - v.lower);
    }
    return unit;
  }

  /// Inverse of scale_to_unit.
  Eigen::VectorXd unscale_from_unit(const Eigen::VectorXd& unit) const {
    check_dim(unit.size());
    Eigen::VectorXd native(dim());
    for (int i = 0; i < dim(); ++i) {
      const auto& v = variables_[static_cast<std::size_t>(i)];
      native(i) = v.lower + unit(i) * (v.upper - v.lower);
    }
    return native;
  }

  /// Row-wise scaling of an n x (p+q) matrix of native points.
  Eigen::MatrixXd scale_rows_to_unit(const Eigen::MatrixXd& native) const {
    Eigen::MatrixXd unit(native.rows(), native.cols());
    for (Eigen::Index r = 0; r < native.rows(); ++r)
      unit.row(r) = scale_to_unit(native.row(r).transpose()).transpose();
    return unit;
  }

  Eigen::MatrixXd unscale_rows_from_unit(const Eigen::MatrixXd& unit) const {
    Eigen::MatrixXd native(unit.rows(), unit.cols());
    for (Eigen::Index r = 0; r < unit.rows(); ++r)
      native.row(r) = unscale_from_unit(unit.row(r).transpose()).transpose();
    return native;
  }

 private:
  void check_dim(Eigen::Index got) const {
    if (got != dim())
      throw ShapeError("point dimension " + std::to_string(got) + " != p+q = " +
                       std::to_string(dim()));
  }

  std::vector<VariableSpec> variables_;
  int p_ = 0;
  int q_ = 0;
};

/// Per-output location/scale pair recorded when outputs are standardized,
/// so results can be reported back in native units.
struct OutputTransform {
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  int size() const { return static_cast<int>(means.size()); }

  double standardize(int output, double native) const {
    return (native - means(output)) / sds(output);
  }
  double destandardize(int output, double standardized) const {
    return means(output) + sds(output) * standardized;
  }
  Eigen::VectorXd standardize(const Eigen::VectorXd& native) const {
    return (native - means).cwiseQuotient(sds);
  }
  Eigen::VectorXd destandardize(const Eigen::VectorXd& standardized) const {
    return means + sds.cwiseProduct(standardized);
  }
};

/// Center and scale each output column to mean 0 and sample (n-1)
/// standard deviation 1. Returns the standardized matrix and the transform
/// needed to undo it.
inline std::pair<Eigen::MatrixXd, OutputTransform> standardize_outputs(
    const Eigen::MatrixXd& raw) {
  const Eigen::Index n = raw.rows();
  const Eigen::Index m = raw.cols();
  if (n < 2) throw DataError("standardize_outputs: need at least 2 rows");
  OutputTransform t;
  t.means.resize(m);
  t.sds.resize(m);
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double mean = raw.col(j).mean();
    const double var =
        (raw.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    if (!(var > 0.0))
      throw DataError("standardize_outputs: column " + std::to_string(j) +
                      " is constant (zero sample variance)");
    const double sd = std::sqrt(var);
    t.means(j) = mean;
    t.sds(j) = sd;
    out.col(j) = (raw.col(j).array() - mean) / sd;
  }
  return {out, t};
}

/// Latin hypercube design on [0,1]^d: per dimension, each of the n strata
/// [k/n, (k+1)/n) receives exactly one point, placed uniformly within the
/// stratum. Identical seeds reproduce the design bit-exactly.
inline Eigen::MatrixXd latin_hypercube(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 1)
    throw ArgumentError("latin_hypercube: n and d must be positive (got n=" +
                        std::to_string(n) + ", d=" + std::to_string(d) + ")");
  Rng rng(seed);
  Eigen::MatrixXd design(n, d);
  for (int j = 0; j < d; ++j) {
    const std::vector<int> strata = rng.permutation(n);
    for (int i = 0; i < n; ++i) {
      const double jitter = rng.uniform();
      design(i, j) = (static_cast<double>(strata[static_cast<std::size_t>(i)]) + jitter) /
                     static_cast<double>(n);
    }
  }
  return design;
}

/// A set of completed simulator runs: unit-scaled inputs together with the
/// outputs both in native units and on the standardized scale used by all
/// downstream computation.
struct SimulationDataset {
  Eigen::MatrixXd inputs;       // n x (p+q), unit hypercube
  Eigen::MatrixXd outputs;      // n x m, standardized
  Eigen::MatrixXd raw_outputs;  // n x m, native units
  std::vector<std::string> output_names;
  OutputTransform transform;

  int n() const { return static_cast<int>(inputs.rows()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  int m() const { return static_cast<int>(outputs.cols()); }

  /// Build from unit inputs and native outputs; standardizes and validates.
  static SimulationDataset from_runs(Eigen::MatrixXd unit_inputs,
                                     Eigen::MatrixXd native_outputs,
                                     std::vector<std::string> names) {
    if (unit_inputs.rows() != native_outputs.rows())
      throw ShapeError("dataset: input row count != output row count");
    if (static_cast<Eigen::Index>(names.size()) != native_outputs.cols())
      throw ShapeError("dataset: output name count != output column count");
    if (!unit_inputs.allFinite() || !native_outputs.allFinite())
      throw DataError("dataset: non-finite entry");
    if ((unit_inputs.array() < 0.0).any() || (unit_inputs.array() > 1.0).any())
      throw RangeError("dataset: unit-scaled input outside [0,1]");
    auto [standardized, transform] = standardize_outputs(native_outputs);
    SimulationDataset d;
    d.inputs = std::move(unit_inputs);
    d.outputs = std::move(standardized);
    d.raw_outputs = std::move(native_outputs);
    d.output_names = std::move(names);
    d.transform = std::move(transform);
    return d;
  }
};

}  // namespace cto
