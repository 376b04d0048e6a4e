#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace km::optim {

struct Bounds {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  [[nodiscard]] int dim() const { return static_cast<int>(lo.size()); }
};

struct Result {
  Eigen::VectorXd x;
  double value = 0.0;
  int evals = 0;
  int best_restart = -1;  // set by multi_start_minimize
};

/// Derivative-free Nelder–Mead restricted to a box (candidates are projected
/// onto the box). Deterministic: the trajectory depends only on x0 and f.
/// Objective evaluations are capped at max_evals; non-finite objective values
/// are treated as +inf.
Result nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                   const Bounds& bounds, const Eigen::VectorXd& x0, int max_evals,
                   double ftol = 1e-12);

/// Multi-start minimization: `starts` rows are initial points; each start runs
/// Nelder–Mead with its own evaluation cap. Ties (exact value equality) are
/// broken toward the lowest start index, so the result is independent of any
/// evaluation interleaving.
Result multi_start_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Bounds& bounds, const Eigen::MatrixXd& starts,
                            int max_evals_per_start, double ftol = 1e-12);

/// R scrambled low-discrepancy starting points inside the box.
Eigen::MatrixXd sobol_starts(const Bounds& bounds, int restarts, std::uint64_t seed);

}  // namespace km::optim
