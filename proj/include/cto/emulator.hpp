#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "cto/design_space.hpp"
#include "cto/errors.hpp"
#include "cto/optim.hpp"
#include "cto/rng.hpp"
#include "cto/util.hpp"

namespace cto {

/// Covariance hyperparameters of one zero-mean output GP. The correlation
/// is parameterized per input dimension as rho_k = exp(-beta_k / 4), with
/// fixed smoothness exponent 2 and constant mean 0.
struct Hyperparameters {
  Eigen::VectorXd rho;      // per-dimension correlation, each in (0,1)
  double precision = 1.0;   // marginal precision lambda (> 0)
  double nugget = 1e-8;     // diagonal jitter on the correlation scale (>= 0)

  static constexpr double kSmoothness = 2.0;
  static constexpr double kMeanConstant = 0.0;
  static constexpr double kDefaultNugget = 1e-8;

  void validate() const {
    if ((rho.array() <= 0.0).any() || (rho.array() >= 1.0).any())
      throw ArgumentError("hyperparameters: every rho must lie strictly in (0,1)");
    if (!(precision > 0.0)) throw ArgumentError("hyperparameters: precision must be positive");
    if (!(nugget >= 0.0)) throw ArgumentError("hyperparameters: nugget must be nonnegative");
  }

  /// beta_k = -4 log(rho_k); the dependence-strength form of the correlation.
  Eigen::VectorXd beta() const { return -4.0 * rho.array().log(); }
};

/// Product power-exponential covariance between two unit-scale points.
/// When same_index is set the points are the same row of a training set and
/// the nugget is added.
inline double covariance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         const Hyperparameters& h, bool same_index = false) {
  if (a.size() != b.size() || a.size() != h.rho.size())
    throw ShapeError("covariance: point dimension mismatch (a=" + std::to_string(a.size()) +
                     ", b=" + std::to_string(b.size()) + ", rho=" +
                     std::to_string(h.rho.size()) + ")");
  // exp(-beta_k d_k^2) with beta_k = -4 log rho_k, i.e. exp(4 log(rho_k) d_k^2).
  const double exponent = (4.0 * h.rho.array().log() * (a - b).array().square()).sum();
  double value = std::exp(exponent) / h.precision;
  if (same_index) value += h.nugget / h.precision;
  return value;
}

/// n x n training covariance of a point set against itself (nugget on the
/// diagonal).
inline Eigen::MatrixXd covariance_matrix(const Eigen::MatrixXd& points,
                                         const Hyperparameters& h) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i, i) = (1.0 + h.nugget) / h.precision;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v =
          covariance(points.row(i).transpose(), points.row(j).transpose(), h);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

/// Cross covariance between two point sets (no nugget; rows never share an
/// index).
inline Eigen::MatrixXd cross_covariance(const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& b,
                                        const Hyperparameters& h) {
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      c(i, j) = covariance(a.row(i).transpose(), b.row(j).transpose(), h);
  return c;
}

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454836;

/// Cholesky of a covariance matrix; empty on failure instead of throwing so
/// optimizer search can treat failures as rejected points.
inline std::optional<Eigen::MatrixXd> try_cholesky(const Eigen::MatrixXd& c) {
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return Eigen::MatrixXd(llt.matrixL());
}

inline double log_likelihood_from_factor(const Eigen::MatrixXd& chol_lower,
                                         const Eigen::VectorXd& y) {
  const Eigen::VectorXd whitened =
      chol_lower.triangularView<Eigen::Lower>().solve(y);
  return -0.5 * whitened.squaredNorm() -
         chol_lower.diagonal().array().log().sum() -
         0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

}  // namespace detail

/// Log marginal likelihood of outputs under the zero-mean GP with the given
/// hyperparameters: log N(y; 0, C) evaluated through a triangular factor.
inline double log_marginal_likelihood(const Hyperparameters& h,
                                      const Eigen::MatrixXd& inputs,
                                      const Eigen::VectorXd& outputs) {
  if (inputs.rows() != outputs.size())
    throw ShapeError("log_marginal_likelihood: input rows != output length");
  const auto factor = detail::try_cholesky(covariance_matrix(inputs, h));
  if (!factor)
    throw NumericalError(
        "log_marginal_likelihood: covariance factorization failed; consider a larger nugget");
  return detail::log_likelihood_from_factor(*factor, outputs);
}

namespace detail {

/// Unconstrained search coordinates: logit(rho_1..rho_d), log(lambda).
inline Hyperparameters unpack_search_point(const Eigen::VectorXd& u, double nugget) {
  const int d = static_cast<int>(u.size()) - 1;
  Hyperparameters h;
  h.rho = (1.0 / (1.0 + (-u.head(d).array()).exp())).matrix();
  h.precision = std::exp(u(d));
  h.nugget = nugget;
  return h;
}

}  // namespace detail

/// Maximum-likelihood hyperparameters for one output column, found by
/// multi-start Nelder-Mead over (logit rho, log lambda). The returned fit
/// attains the best likelihood seen across all starts.
inline Hyperparameters fit_mle(const SimulationDataset& data, int output_index,
                               int starts = 8,
                               std::uint64_t seed = 0,
                               double nugget = Hyperparameters::kDefaultNugget) {
  if (starts < 1) throw ArgumentError("fit_mle: starts must be >= 1");
  if (output_index < 0 || output_index >= data.m())
    throw ArgumentError("fit_mle: output index out of range");
  const int d = data.input_dim() + 1;
  const Eigen::VectorXd y = data.outputs.col(output_index);

  auto negative_log_likelihood = [&](const Eigen::VectorXd& u) {
    // Cap the unconstrained coordinates: beyond +-15 the sigmoid saturates
    // to 1.0 in double precision and the correlation degenerates.
    if ((u.array().abs() > 15.0).any()) return std::numeric_limits<double>::infinity();
    const Hyperparameters h = detail::unpack_search_point(u, nugget);
    const auto factor = detail::try_cholesky(covariance_matrix(data.inputs, h));
    if (!factor) return std::numeric_limits<double>::infinity();
    return -detail::log_likelihood_from_factor(*factor, y);
  };

  // Start 0 is a fixed center (rho = 0.5, lambda = 1); the rest come from a
  // Latin hypercube over the unconstrained box.
  std::vector<Eigen::VectorXd> start_points;
  start_points.emplace_back(Eigen::VectorXd::Zero(d));
  if (starts > 1) {
    const Eigen::MatrixXd lhs = latin_hypercube(starts - 1, d, seed);
    const double logit_lo = -2.0, logit_hi = 6.0;   // rho in (0.12, 0.998)
    const double loglam_lo = -3.0, loglam_hi = 3.0; // lambda in (0.05, 20)
    for (int s = 0; s < starts - 1; ++s) {
      Eigen::VectorXd u(d);
      for (int k = 0; k < d - 1; ++k)
        u(k) = logit_lo + (logit_hi - logit_lo) * lhs(s, k);
      u(d - 1) = loglam_lo + (loglam_hi - loglam_lo) * lhs(s, d - 1);
      start_points.push_back(std::move(u));
    }
  }

  std::vector<NelderMeadResult> results(start_points.size());
  parallel_for(static_cast<int>(start_points.size()), [&](int s) {
    results[static_cast<std::size_t>(s)] =
        nelder_mead(negative_log_likelihood, start_points[static_cast<std::size_t>(s)],
                    0.5, 150 + 120 * d, 1e-9);
  });

  const auto best = std::min_element(
      results.begin(), results.end(),
      [](const NelderMeadResult& a, const NelderMeadResult& b) { return a.value < b.value; });
  if (!std::isfinite(best->value))
    throw FitError("fit_mle: covariance factorization failed at every start; "
                   "consider a larger nugget");
  return detail::unpack_search_point(best->x, nugget);
}

struct PredictResult {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Per-output Gaussian-process emulator with shared training inputs. Each
/// output keeps its hyperparameters, the lower Cholesky factor of its
/// training covariance, and the whitened training outputs, so prediction
/// and likelihood evaluation reuse one factorization.
class Emulator {
 public:
  struct OutputGp {
    std::string name;
    Hyperparameters hyper;
    Eigen::VectorXd train_outputs;   // standardized
    Eigen::MatrixXd chol_lower;      // L with L L^T = training covariance
    Eigen::VectorXd whitened;        // L^{-1} train_outputs
  };

  static Emulator fit(const SimulationDataset& data, int starts = 8,
                      std::uint64_t seed = 0,
                      double nugget = Hyperparameters::kDefaultNugget) {
    std::vector<Hyperparameters> hypers(static_cast<std::size_t>(data.m()));
    parallel_for(data.m(), [&](int i) {
      hypers[static_cast<std::size_t>(i)] =
          fit_mle(data, i, starts, derive_seed(seed, Stream::mle_starts,
                                               static_cast<std::uint64_t>(i)),
                  nugget);
    });
    return with_hyperparameters(data, hypers);
  }

  static Emulator with_hyperparameters(const SimulationDataset& data,
                                       const std::vector<Hyperparameters>& hypers) {
    if (static_cast<int>(hypers.size()) != data.m())
      throw ShapeError("emulator: one hyperparameter set per output required");
    Emulator em;
    em.train_inputs_ = data.inputs;
    em.outputs_.reserve(hypers.size());
    for (int i = 0; i < data.m(); ++i) {
      const Hyperparameters& h = hypers[static_cast<std::size_t>(i)];
      h.validate();
      auto factor = detail::try_cholesky(covariance_matrix(data.inputs, h));
      if (!factor)
        throw NumericalError("emulator: training covariance for output '" +
                             data.output_names[static_cast<std::size_t>(i)] +
                             "' is not positive definite; consider a larger nugget");
      OutputGp gp;
      gp.name = data.output_names[static_cast<std::size_t>(i)];
      gp.hyper = h;
      gp.train_outputs = data.outputs.col(i);
      gp.chol_lower = std::move(*factor);
      gp.whitened = gp.chol_lower.triangularView<Eigen::Lower>().solve(gp.train_outputs);
      em.outputs_.push_back(std::move(gp));
    }
    return em;
  }

  int m() const { return static_cast<int>(outputs_.size()); }
  int n() const { return static_cast<int>(train_inputs_.rows()); }
  int input_dim() const { return static_cast<int>(train_inputs_.cols()); }
  const Eigen::MatrixXd& train_inputs() const { return train_inputs_; }
  const OutputGp& output(int i) const { return outputs_.at(static_cast<std::size_t>(i)); }

  /// Zero-mean GP conditional at the query points: mean K_qt C^{-1} y and
  /// covariance K_qq - K_qt C^{-1} K_tq. The covariance is symmetrized and
  /// its diagonal clamped at zero; it includes the nugget jitter so the
  /// conditional matches the joint covariance construction exactly.
  PredictResult predict(int output_index, const Eigen::MatrixXd& queries) const {
    if (outputs_.empty()) throw StateError("emulator: not fitted");
    if (output_index < 0 || output_index >= m())
      throw ArgumentError("predict: output index out of range");
    if (queries.cols() != input_dim())
      throw ShapeError("predict: query width " + std::to_string(queries.cols()) +
                       " != input dimension " + std::to_string(input_dim()));
    const OutputGp& gp = outputs_[static_cast<std::size_t>(output_index)];
    const Eigen::MatrixXd cross = cross_covariance(train_inputs_, queries, gp.hyper);
    const Eigen::MatrixXd v = gp.chol_lower.triangularView<Eigen::Lower>().solve(cross);
    PredictResult r;
    r.mean = v.transpose() * gp.whitened;
    Eigen::MatrixXd cov = covariance_matrix(queries, gp.hyper) - v.transpose() * v;
    cov = 0.5 * (cov + cov.transpose()).eval();
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
      if (cov(i, i) < 0.0) cov(i, i) = 0.0;
    r.cov = std::move(cov);
    return r;
  }

  /// Serialize hyperparameters plus a reference to the training dataset
  /// file (path and content hash); the training matrices themselves are
  /// rebuilt on load.
  nlohmann::json to_json(const std::string& dataset_path,
                         const std::string& dataset_hash) const {
    nlohmann::json doc;
    doc["format"] = "cto-emulator/1";
    doc["dataset"] = {{"path", dataset_path}, {"hash", dataset_hash}};
    for (const auto& gp : outputs_) {
      doc["outputs"].push_back(
          {{"name", gp.name},
           {"rho", std::vector<double>(gp.hyper.rho.data(),
                                       gp.hyper.rho.data() + gp.hyper.rho.size())},
           {"precision", gp.hyper.precision},
           {"nugget", gp.hyper.nugget}});
    }
    return doc;
  }

  static Emulator from_json(const nlohmann::json& doc, const SimulationDataset& data) {
    if (!doc.contains("outputs"))
      throw IngestError("emulator document: missing 'outputs'");
    std::vector<Hyperparameters> hypers;
    for (const auto& o : doc.at("outputs")) {
      Hyperparameters h;
      const auto rho = o.at("rho").get<std::vector<double>>();
      h.rho = Eigen::Map<const Eigen::VectorXd>(rho.data(),
                                                static_cast<Eigen::Index>(rho.size()));
      h.precision = o.at("precision").get<double>();
      h.nugget = o.at("nugget").get<double>();
      hypers.push_back(std::move(h));
    }
    return with_hyperparameters(data, hypers);
  }

 private:
  Eigen::MatrixXd train_inputs_;
  std::vector<OutputGp> outputs_;
};

}  // namespace cto
