#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace km::surrogate {

enum class Kind { rbf, multiscale };

[[nodiscard]] const char* kind_name(Kind k);
[[nodiscard]] Kind kind_from_name(const std::string& name);

/// Proposal mode for the acquisition step (see search.hpp).
enum class ProposeMode { continuous_snap, discrete_argmax };

/// Surrogate family and fitting bounds. rbf is the single-component special
/// case of the multiscale mixture k(z, z') = sigma^2 sum_m w_m
/// exp(-||z-z'||^2 / (2 l_m^2)); weights come from a softmax over
/// unconstrained logits, so they stay on the simplex by construction.
struct Config {
  Kind kind = Kind::multiscale;
  int components = 3;  // M; forced to 1 for kind == rbf
  double sigma_sq_low = 1e-2;
  double sigma_sq_high = 1e2;
  double lengthscale_low = 1e-2;
  double lengthscale_high = 1e1;
  double logit_low = -8.0;
  double logit_high = 8.0;
  double noise_low = 1e-6;
  double noise_high = 1e-1;
  ProposeMode mode = ProposeMode::continuous_snap;

  [[nodiscard]] int effective_components() const { return kind == Kind::rbf ? 1 : components; }
};

/// Fitted kernel-of-kernels surrogate over embedding coordinates. Observed
/// values are z-scored internally; predictions stay on the standardized
/// scale, as does the incumbent passed to expected_improvement.
struct Model {
  Config config;
  Eigen::MatrixXd coords;  // n x p evaluated coordinates
  Eigen::VectorXd y_std;   // standardized observations
  double y_mean = 0.0;
  double y_sd = 1.0;

  double sigma_sq = 1.0;
  Eigen::VectorXd weights;       // M, nonnegative, sums to 1
  Eigen::VectorXd lengthscales;  // M
  double noise = 1e-6;
  double lml = 0.0;  // surrogate log marginal likelihood at the optimum

  // True when all observations were equal and the model fell back to the
  // prior-variance surrogate (no data conditioning).
  bool degenerate = false;

  Eigen::MatrixXd L;
  Eigen::VectorXd alpha;

  [[nodiscard]] int n_obs() const { return static_cast<int>(coords.rows()); }
  [[nodiscard]] int dim() const { return static_cast<int>(coords.cols()); }
  /// Highest standardized observation (the EI incumbent).
  [[nodiscard]] double best_observed() const;
  /// Coordinate row of the best observation.
  [[nodiscard]] Eigen::VectorXd best_coordinate() const;
};

struct Prediction {
  double mean = 0.0;   // standardized scale
  double sigma = 0.0;  // posterior standard deviation (latent, no noise)
};

/// Maximum-likelihood surrogate fit with the same seeded multi-start
/// derivative-free regime as the GP fits; bit-identical for identical data
/// and seed. Degenerate all-equal observations trigger the prior-variance
/// fallback instead of an error.
[[nodiscard]] Model fit_surrogate(const Config& config, const Eigen::MatrixXd& coords,
                                  const Eigen::VectorXd& lmls, std::uint64_t seed);

[[nodiscard]] Prediction predict(const Model& model, const Eigen::VectorXd& z);

/// Expected improvement for maximization at standardized incumbent `best`:
/// EI = (mu - best) Phi(u) + sigma phi(u), u = (mu - best)/sigma, and
/// max(mu - best, 0) once sigma <= 1e-12. Always >= 0.
[[nodiscard]] double expected_improvement(const Model& model, const Eigen::VectorXd& z,
                                          double best);

}  // namespace km::surrogate
