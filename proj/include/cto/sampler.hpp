#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cto/errors.hpp"
#include "cto/posterior.hpp"
#include "cto/rng.hpp"
#include "cto/stats.hpp"
#include "cto/util.hpp"

namespace cto {

/// Chain settings. Defaults mirror the reference run configuration: 6,000
/// iterations per chain with the first 3,000 discarded, three chains, and
/// acceptance-rate targets of 23% for the multivariate design block and 44%
/// for each scalar noise variance.
struct ChainConfig {
  int iterations = 6000;
  int burn_in = 3000;
  int n_chains = 3;
  int adapt_interval = 100;
  double target_accept_theta = 0.23;
  double target_accept_sigma2 = 0.44;
  std::uint64_t master_seed = 0;

  void validate() const {
    if (iterations <= 0) throw ArgumentError("chain config: iterations must be positive");
    if (burn_in < 0 || burn_in >= iterations)
      throw ArgumentError("chain config: burn_in must lie in [0, iterations)");
    if (n_chains < 1) throw ArgumentError("chain config: need at least one chain");
    if (adapt_interval < 1) throw ArgumentError("chain config: adapt_interval must be positive");
    if (!(target_accept_theta > 0.0 && target_accept_theta < 1.0) ||
        !(target_accept_sigma2 > 0.0 && target_accept_sigma2 < 1.0))
      throw ArgumentError("chain config: target acceptance rates must lie in (0,1)");
  }
};

struct ChainOutput {
  Eigen::MatrixXd theta_draws;   // kept x q, unit scale
  Eigen::MatrixXd sigma2_draws;  // kept x (#sampled components); empty if none
  Eigen::VectorXd log_post;      // kept
  double accept_rate_theta = 0.0;         // post-burn-in
  Eigen::VectorXd accept_rate_sigma2;     // per sampled component, post-burn-in
  Eigen::MatrixXd final_proposal_cov;     // q x q, frozen at end of burn-in
  std::vector<int> sampled_noise_indices;
};

/// Scaled sample covariance of past draws for a random-walk proposal:
/// 2.38^2/d times the sample covariance for multivariate blocks, 2.4^2 for
/// scalars, plus a 1e-10 jitter ridge. Returns nothing when the history is
/// too short (caller keeps its previous proposal). The target rate is part
/// of the tuning contract (0.23 multivariate, 0.44 scalar) but the scaling
/// depends only on the block dimension.
inline std::optional<Eigen::MatrixXd> adapt_proposal(const Eigen::MatrixXd& history,
                                                     double target_rate) {
  (void)target_rate;
  const int d = static_cast<int>(history.cols());
  if (d < 1) throw ArgumentError("adapt_proposal: empty history");
  if (history.rows() < d + 2) return std::nullopt;
  const double scale = d == 1 ? 2.4 * 2.4 : 2.38 * 2.38 / static_cast<double>(d);
  Eigen::MatrixXd proposal = scale * sample_covariance(history);
  proposal.diagonal().array() += 1e-10;
  return proposal;
}

/// Gelman-Rubin statistic per parameter from two or more equal-length
/// chains: sqrt(V_hat / W) with V_hat = (n-1)/n W + B/n.
inline Eigen::VectorXd gelman_rubin(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.size() < 2)
    throw DiagnosticError("gelman_rubin: need at least two chains");
  const Eigen::Index n = chains.front().rows();
  const Eigen::Index d = chains.front().cols();
  if (n < 2) throw DiagnosticError("gelman_rubin: chains too short");
  for (const auto& c : chains)
    if (c.rows() != n || c.cols() != d)
      throw DiagnosticError("gelman_rubin: chains must have equal shape");

  const auto m_chains = static_cast<double>(chains.size());
  Eigen::VectorXd rhat(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double w = 0.0;
    Eigen::VectorXd means(static_cast<Eigen::Index>(chains.size()));
    for (std::size_t c = 0; c < chains.size(); ++c) {
      const Eigen::VectorXd col = chains[c].col(j);
      means(static_cast<Eigen::Index>(c)) = col.mean();
      w += sample_variance(col);
    }
    w /= m_chains;
    const double b = static_cast<double>(n) * sample_variance(means);
    const double v_hat =
        (static_cast<double>(n - 1) / static_cast<double>(n)) * w + b / static_cast<double>(n);
    if (w <= 0.0) {
      rhat(j) = b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    } else {
      rhat(j) = std::sqrt(v_hat / w);
    }
  }
  return rhat;
}

/// One adaptive Metropolis-within-Gibbs chain. The design block moves as a
/// single multivariate Gaussian random walk; each sampled noise variance
/// moves as a scalar Gaussian walk on the log scale with the Jacobian
/// correction. Proposals adapt from the accumulated draws every
/// adapt_interval iterations during burn-in and are frozen afterwards.
/// Deterministic given (spec, cfg, chain_index).
inline ChainOutput run_chain(const PosteriorSpec& spec, const ChainConfig& cfg,
                             int chain_index) {
  cfg.validate();
  spec.validate();
  const int q = spec.q();
  const auto sampled = spec.noise.sampled_indices();
  const int n_sampled = static_cast<int>(sampled.size());
  Rng rng(derive_seed(cfg.master_seed, Stream::chain,
                      static_cast<std::uint64_t>(chain_index)));

  // Start: theta uniform in bounds, rejection-sampled to a finite posterior;
  // sampled noise variances start at the prior mean.
  Eigen::VectorXd sigma2 = spec.noise.initial_sigma2();
  Eigen::VectorXd theta(q);
  double lp = kNegativeInfinity;
  for (int attempt = 0; attempt < 200 && !std::isfinite(lp); ++attempt) {
    for (int i = 0; i < q; ++i)
      theta(i) = rng.uniform(spec.theta_bounds(i, 0), spec.theta_bounds(i, 1));
    lp = log_posterior(spec, theta, sigma2);
  }
  if (!std::isfinite(lp))
    throw InitializationError("run_chain: no finite log-posterior start found in bounds");

  Eigen::MatrixXd proposal_cov = 0.0025 * Eigen::MatrixXd::Identity(q, q);
  Eigen::MatrixXd proposal_chol =
      Eigen::LLT<Eigen::MatrixXd>(proposal_cov).matrixL();
  Eigen::VectorXd log_sigma_step = Eigen::VectorXd::Constant(n_sampled, 0.5);

  const int kept = cfg.iterations - cfg.burn_in;
  ChainOutput out;
  out.theta_draws.resize(kept, q);
  out.sigma2_draws.resize(kept, n_sampled);
  out.log_post.resize(kept);
  out.sampled_noise_indices = sampled;

  Eigen::MatrixXd theta_history(cfg.burn_in, q);
  Eigen::MatrixXd log_sigma_history(cfg.burn_in, n_sampled);

  long accept_theta_kept = 0;
  Eigen::VectorXi accept_sigma_kept = Eigen::VectorXi::Zero(n_sampled);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const bool in_burn_in = iter < cfg.burn_in;

    // Design-variable block.
    const Eigen::VectorXd proposal =
        theta + proposal_chol * rng.normal_vector(q);
    bool accepted = false;
    if (log_prior_theta(proposal, spec.theta_bounds) > kNegativeInfinity) {
      const double lp_prop = log_posterior(spec, proposal, sigma2);
      if (std::isfinite(lp_prop) && std::log(rng.uniform()) < lp_prop - lp) {
        theta = proposal;
        lp = lp_prop;
        accepted = true;
      }
    }
    if (!in_burn_in && accepted) ++accept_theta_kept;

    // Scalar noise-variance blocks on the log scale.
    for (int k = 0; k < n_sampled; ++k) {
      const int i = sampled[static_cast<std::size_t>(k)];
      const double log_current = std::log(sigma2(i));
      const double log_proposed = log_current + log_sigma_step(k) * rng.normal();
      Eigen::VectorXd sigma2_prop = sigma2;
      sigma2_prop(i) = std::exp(log_proposed);
      const double lp_prop = log_posterior(spec, theta, sigma2_prop);
      // Jacobian of the log-scale walk: + log sigma^2 on each side.
      if (std::isfinite(lp_prop) &&
          std::log(rng.uniform()) < (lp_prop + log_proposed) - (lp + log_current)) {
        sigma2 = sigma2_prop;
        lp = lp_prop;
        if (!in_burn_in) ++accept_sigma_kept(k);
      }
    }

    if (in_burn_in) {
      theta_history.row(iter) = theta.transpose();
      for (int k = 0; k < n_sampled; ++k)
        log_sigma_history(iter, k) = std::log(sigma2(sampled[static_cast<std::size_t>(k)]));

      if ((iter + 1) % cfg.adapt_interval == 0) {
        const auto tuned = adapt_proposal(theta_history.topRows(iter + 1),
                                          cfg.target_accept_theta);
        if (tuned) {
          proposal_cov = *tuned;
          proposal_chol = Eigen::LLT<Eigen::MatrixXd>(proposal_cov).matrixL();
        }
        for (int k = 0; k < n_sampled; ++k) {
          const auto tuned_scalar = adapt_proposal(
              log_sigma_history.block(0, k, iter + 1, 1), cfg.target_accept_sigma2);
          if (tuned_scalar) log_sigma_step(k) = std::sqrt((*tuned_scalar)(0, 0));
        }
      }
    } else {
      const int row = iter - cfg.burn_in;
      out.theta_draws.row(row) = theta.transpose();
      for (int k = 0; k < n_sampled; ++k)
        out.sigma2_draws(row, k) = sigma2(sampled[static_cast<std::size_t>(k)]);
      out.log_post(row) = lp;
    }
  }

  out.accept_rate_theta = static_cast<double>(accept_theta_kept) / static_cast<double>(kept);
  out.accept_rate_sigma2 = accept_sigma_kept.cast<double>() / static_cast<double>(kept);
  out.final_proposal_cov = proposal_cov;
  return out;
}

/// All chains of a configuration, run concurrently; chain i is seeded from
/// (master_seed, i) so the result is independent of scheduling.
inline std::vector<ChainOutput> run_chains(const PosteriorSpec& spec,
                                           const ChainConfig& cfg) {
  cfg.validate();
  std::vector<ChainOutput> outputs(static_cast<std::size_t>(cfg.n_chains));
  parallel_for(cfg.n_chains, [&](int c) {
    outputs[static_cast<std::size_t>(c)] = run_chain(spec, cfg, c);
  });
  return outputs;
}

enum class PredictiveMode {
  mean,    // emulator: predictive mean; direct model: exact evaluation
  sample,  // emulator: draw from the predictive normal
};

/// Posterior predictive of the response at the target grid for each design
/// draw, destandardized to native units. Row r holds the grid-major values
/// for draw r: columns j*m + i give output i at grid point j.
inline Eigen::MatrixXd posterior_predictive(const PosteriorSpec& spec,
                                            const Eigen::MatrixXd& theta_draws,
                                            PredictiveMode mode = PredictiveMode::mean,
                                            std::uint64_t seed = 0) {
  spec.validate();
  const int g = spec.target.grid_size();
  const int m = spec.m();
  Eigen::MatrixXd result(theta_draws.rows(), g * m);

  parallel_for(static_cast<int>(theta_draws.rows()), [&](int r) {
    const Eigen::VectorXd theta = theta_draws.row(r).transpose();
    if (spec.direct()) {
      const DesignSpace& space = spec.model->space;
      for (int j = 0; j < g; ++j) {
        Eigen::VectorXd unit(space.dim());
        unit.head(spec.target.control_grid.cols()) = spec.target.control_grid.row(j);
        unit.tail(spec.q()) = theta;
        const Eigen::VectorXd out = spec.model->evaluate(space.unscale_from_unit(unit));
        for (int i = 0; i < m; ++i) result(r, j * m + i) = out(i);
      }
      return;
    }
    Rng rng(derive_seed(seed, Stream::predictive, static_cast<std::uint64_t>(r)));
    const Eigen::MatrixXd queries = spec.queries_at(theta);
    for (int i = 0; i < m; ++i) {
      const PredictResult pred = spec.emulator->predict(i, queries);
      Eigen::VectorXd values;
      if (mode == PredictiveMode::mean) {
        values = pred.mean;
      } else {
        Eigen::MatrixXd cov = pred.cov;
        cov.diagonal().array() += 1e-10;
        const auto factor = detail::try_cholesky(cov);
        if (!factor)
          throw NumericalError("posterior_predictive: covariance factorization failed");
        values = pred.mean + *factor * rng.normal_vector(g);
      }
      for (int j = 0; j < g; ++j)
        result(r, j * m + i) = spec.transform.destandardize(i, values(j));
    }
  });
  return result;
}

/// Average the grid-major predictive matrix over the control grid, giving
/// one m-vector per draw.
inline Eigen::MatrixXd average_over_grid(const Eigen::MatrixXd& predictive, int m) {
  const int g = static_cast<int>(predictive.cols()) / m;
  Eigen::MatrixXd averaged = Eigen::MatrixXd::Zero(predictive.rows(), m);
  for (int j = 0; j < g; ++j)
    averaged += predictive.middleCols(j * m, m);
  return averaged / static_cast<double>(g);
}

}  // namespace cto
