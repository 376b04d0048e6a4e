#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "km/grammar.hpp"

namespace km::divergence {

/// Shared 1-D reference grid on [0,1]; every prior is evaluated on the same
/// grid so divergences compare like with like.
struct ReferenceGrid {
  Eigen::VectorXd points;
  [[nodiscard]] int n_ref() const { return static_cast<int>(points.size()); }
  /// Grid points as an n x 1 row-point matrix for covariance evaluation.
  [[nodiscard]] Eigen::MatrixXd as_matrix() const { return points; }
};

/// n_ref uniformly spaced points with endpoints exactly 0 and 1.
[[nodiscard]] ReferenceGrid make_reference_grid(int n_ref = 50);

/// Zero-mean Gaussian prior induced by a kernel on the reference grid:
/// covariance K(theta) + jitter*I with cached Cholesky and log-determinant.
struct GaussianPrior {
  Eigen::MatrixXd cov;
  Eigen::MatrixXd L;      // lower Cholesky factor of cov
  double log_det = 0.0;   // log det cov
  double jitter = 0.0;    // diagonal jitter actually applied
  [[nodiscard]] int dim() const { return static_cast<int>(cov.rows()); }
};

/// Builds the prior with base jitter 1e-6, escalating 1e-4 -> 1e-2 when the
/// factorization fails; throws NumericalError when the ladder is exhausted.
[[nodiscard]] GaussianPrior make_prior(const grammar::KernelExpr& expr,
                                       const Eigen::VectorXd& theta, const ReferenceGrid& grid);

/// Squared Hellinger distance between zero-mean Gaussians, in [0,1].
[[nodiscard]] double hellinger_sq(const GaussianPrior& p, const GaussianPrior& q);

/// KL(p || q) for zero-mean Gaussians (asymmetric), >= 0.
[[nodiscard]] double kl(const GaussianPrior& p, const GaussianPrior& q);

struct JsEstimate {
  double value = 0.0;     // clamped to [0, log 2]
  double std_error = 0.0; // Monte Carlo standard error of the mean
  int unique_draws = 0;   // antithetic pairs evaluated
};

/// Jensen–Shannon divergence estimated by Monte Carlo with antithetic
/// pairing; deterministic given the seed and exactly symmetric in (p, q) by
/// common random numbers. Result lies in [0, log 2].
[[nodiscard]] double js(const GaussianPrior& p, const GaussianPrior& q, int mc_samples,
                        std::uint64_t seed);
[[nodiscard]] JsEstimate js_estimate(const GaussianPrior& p, const GaussianPrior& q,
                                     int mc_samples, std::uint64_t seed);

enum class Kind { hellinger_sq, kl_sym, js, sqrt_js_sq };
enum class Transform { none, log1p, log_eps, chordal };

[[nodiscard]] const char* kind_name(Kind k);
[[nodiscard]] Kind kind_from_name(const std::string& name);
[[nodiscard]] const char* transform_name(Transform t);
[[nodiscard]] Transform transform_from_name(const std::string& name);

/// Symmetric matrix of expected squared dissimilarities between library
/// kernels, with the provenance needed to reproduce it bit for bit.
struct DistanceMatrix {
  Eigen::MatrixXd D;
  Kind kind = Kind::hellinger_sq;
  Transform transform = Transform::none;
  double eps = 0.0;     // log_eps parameter when that transform was applied
  double radius = 0.0;  // chordal radius when that transform was applied
  int samples = 0;      // QMC hyperparameter draws per pair
  std::uint64_t seed = 0;
  int n_ref = 0;
  std::string library_hash;
  // Range clamps beyond a 1e-9 noise tolerance across all pair evaluations;
  // sub-tolerance rounding excursions are snapped into range without being
  // counted.
  int clamp_count = 0;

  [[nodiscard]] int size() const { return static_cast<int>(D.rows()); }
};

/// Expected-divergence matrix over the library. Hyperparameters are drawn
/// from a scrambled low-discrepancy sequence over each kernel's bounds box
/// (uniform marginals); the per-kernel draw streams are keyed by (seed,
/// kernel index) and shared across every pair the kernel participates in, so
/// the finite-sample matrix is an average of per-draw divergence matrices and
/// inherits their exact geometry. Per-draw squared entries by kind:
///   hellinger_sq -> H^2,  kl_sym -> (sym. KL)^2,  js -> JS^2,
///   sqrt_js_sq   -> (sqrt(JS))^2 = JS.
/// JS here is evaluated by deterministic quadrature (see quadform.hpp), not
/// Monte Carlo, so entries carry no sampling noise beyond ~1e-8.
/// Each unordered pair is computed once (exact symmetry); the diagonal is
/// exactly zero; the build is bitwise deterministic given (library, grid,
/// kind, S, seed). Pairs failing numerically after jitter escalation abort
/// the build with every offending pair listed.
[[nodiscard]] DistanceMatrix build_distance_matrix(const grammar::KernelLibrary& library,
                                                   const ReferenceGrid& grid, Kind kind, int S,
                                                   std::uint64_t seed);

/// Elementwise monotone warps of the stored squared dissimilarities. Each
/// expects an untransformed matrix and records what was applied.
[[nodiscard]] DistanceMatrix transform_log1p(const DistanceMatrix& dm);
[[nodiscard]] DistanceMatrix transform_log_eps(const DistanceMatrix& dm, double eps);
/// Interprets entries as geodesic distances on a sphere of the given radius
/// and stores squared chord lengths; entries with delta/radius > pi + 1e-9
/// raise invalid_argument.
[[nodiscard]] DistanceMatrix transform_chordal(const DistanceMatrix& dm, double radius);

struct GramSpectrum {
  Eigen::VectorXd eigenvalues;  // sorted descending
  double min_eigenvalue = 0.0;
  double negative_mass = 0.0;  // sum |negative| / sum |all|
};

/// -1/2 J D J double centering shared by the spectrum diagnosis and MDS.
[[nodiscard]] Eigen::MatrixXd double_center(const Eigen::MatrixXd& D);

/// Eigenvalue diagnosis of the double-centered Gram matrix.
[[nodiscard]] GramSpectrum gram_spectrum(const Eigen::MatrixXd& D);

/// CSV persistence (17 significant digits) with a JSON sidecar carrying
/// {kind, transform, S, seed, N_ref, library hash, ...} at <csv>.meta.json.
void save_distance_matrix(const DistanceMatrix& dm, const std::string& csv_path);
[[nodiscard]] DistanceMatrix load_distance_matrix(const std::string& csv_path);

}  // namespace km::divergence
