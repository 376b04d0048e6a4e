#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "km/dataset.hpp"
#include "km/grammar.hpp"

namespace km::gp {

/// Hyperparameter search budget: `restarts` local searches, each capped at
/// `max_evals` objective evaluations.
struct FitBudget {
  int restarts = 8;
  int max_evals = 200;
};

/// Bounds applied during fitting, besides the expression's own schema:
/// a single global output scale and an observation-noise variance.
inline constexpr double kScaleLow = 1e-3;
inline constexpr double kScaleHigh = 1e3;
inline constexpr double kNoiseLow = 1e-6;
inline constexpr double kNoiseHigh = 1.0;

/// A fitted GP: kernel hyperparameters plus cached Cholesky factors of
/// C = scale * K + noise * I (with any jitter that was needed).
struct FittedGP {
  grammar::KernelExpr expr = grammar::KernelExpr::leaf(grammar::BaseKind::SE);
  Eigen::VectorXd theta;
  double scale = 1.0;
  double noise = 1e-6;
  double lml = 0.0;
  double jitter = 0.0;  // diagonal jitter that was required (0 when none)

  // Cached factors for prediction: C = L L^T, alpha = C^{-1} y.
  Eigen::MatrixXd L;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd X_train;
  Eigen::VectorXd y_train;

  /// Recomputes the log marginal likelihood from the stored factors.
  [[nodiscard]] double recompute_lml() const;

  [[nodiscard]] std::string to_json() const;
  static FittedGP from_json(const std::string& text);
};

struct PredictResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  int clamped = 0;  // variances clipped up to zero
};

/// Cholesky of C with the jitter ladder 1e-6 -> 1e-4 -> 1e-2 (applied only
/// after a plain factorization fails). Throws NumericalError when the ladder
/// is exhausted. On success *jitter_used reports the jitter that was added.
Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& C, double* jitter_used,
                                                 const std::string& context);

/// Log marginal likelihood of the data under C = scale*K(theta) + noise*I:
///   -1/2 y^T C^{-1} y - 1/2 log det C - n/2 log(2 pi),
/// solved via Cholesky only. Throws NumericalError (naming the expression)
/// when factorization fails after the jitter ladder.
[[nodiscard]] double log_marginal_likelihood(const grammar::KernelExpr& expr,
                                             const Eigen::VectorXd& theta, double scale,
                                             double noise, const Dataset& data);

/// Maximum-likelihood fit by multi-start derivative-free search in log space
/// over (theta, scale, noise). Deterministic for a fixed seed: restarts come
/// from a scrambled low-discrepancy design plus the box midpoint, and ties are
/// broken by the lowest restart index. Throws FitError when every restart
/// fails numerically.
[[nodiscard]] FittedGP fit_gp(const grammar::KernelExpr& expr, const Dataset& data,
                              const FitBudget& budget, std::uint64_t seed);

/// Posterior mean and latent-function variance at query rows Xstar
/// (normalized space). Variances are clamped at zero; `clamped` counts how
/// often the subtraction went negative.
[[nodiscard]] PredictResult posterior_predict(const FittedGP& model, const Eigen::MatrixXd& Xstar);

}  // namespace km::gp
