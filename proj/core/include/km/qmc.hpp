#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace km::qmc {

/// Maximum supported dimension of the Sobol generator (size of the embedded
/// direction-number table). Hyperparameter boxes in this project are at most
/// ~8-dimensional, so the headroom is generous.
constexpr int kMaxDim = 24;

/// Scrambled Sobol sequence. The base sequence uses classic direction numbers;
/// each dimension is then passed through hash-based Owen-style scrambling keyed
/// by (seed, dimension), which preserves the net structure while decorrelating
/// runs with different seeds. Points are addressable by index, so parallel
/// consumers stay deterministic.
class SobolSequence {
 public:
  SobolSequence(int dim, std::uint64_t seed);

  /// i-th point of the sequence, each coordinate in (0, 1).
  [[nodiscard]] Eigen::VectorXd point(std::uint64_t i) const;

  /// First n points as rows of an n x dim matrix.
  [[nodiscard]] Eigen::MatrixXd points(int n) const;

  [[nodiscard]] int dim() const noexcept { return dim_; }

 private:
  int dim_;
  std::uint64_t seed_;
  std::vector<std::uint32_t> dir_;  // dim_ * 32 direction words
};

}  // namespace km::qmc
