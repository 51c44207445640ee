#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace cto {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Derivative-free simplex minimizer. The objective may return +inf to
/// reject a point (e.g. failed factorizations); such vertices sort last.
inline NelderMeadResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& start, double initial_step, int max_evaluations,
    double f_tolerance) {
  const int d = static_cast<int>(start.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(d) + 1, start);
  std::vector<double> fs(static_cast<std::size_t>(d) + 1);
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double f = objective(x);
    return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
  };

  fs[0] = eval(xs[0]);
  for (int i = 0; i < d; ++i) {
    xs[static_cast<std::size_t>(i) + 1](i) += initial_step;
    fs[static_cast<std::size_t>(i) + 1] = eval(xs[static_cast<std::size_t>(i) + 1]);
  }

  std::vector<std::size_t> order(xs.size());
  auto sort_simplex = [&] {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
  };

  while (evals < max_evaluations) {
    sort_simplex();
    const std::size_t best = order.front(), worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];
    if (std::isfinite(fs[best]) && std::isfinite(fs[worst]) &&
        fs[worst] - fs[best] < f_tolerance)
      break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (const std::size_t i : order)
      if (i != worst) centroid += xs[i];
    centroid /= static_cast<double>(d);

    const Eigen::VectorXd reflected = centroid + alpha * (centroid - xs[worst]);
    const double f_reflected = eval(reflected);
    if (f_reflected < fs[best]) {
      const Eigen::VectorXd expanded = centroid + gamma * (reflected - centroid);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        xs[worst] = expanded;
        fs[worst] = f_expanded;
      } else {
        xs[worst] = reflected;
        fs[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < fs[second_worst]) {
      xs[worst] = reflected;
      fs[worst] = f_reflected;
      continue;
    }
    const Eigen::VectorXd contracted = centroid + rho * (xs[worst] - centroid);
    const double f_contracted = eval(contracted);
    if (f_contracted < fs[worst]) {
      xs[worst] = contracted;
      fs[worst] = f_contracted;
      continue;
    }
    for (const std::size_t i : order) {
      if (i == best) continue;
      xs[i] = xs[best] + sigma * (xs[i] - xs[best]);
      fs[i] = eval(xs[i]);
    }
  }

  sort_simplex();
  return {xs[order.front()], fs[order.front()], evals};
}

}  // namespace cto
