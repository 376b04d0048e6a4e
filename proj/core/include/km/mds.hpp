#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "km/divergence.hpp"

namespace km::mds {

/// Classical-MDS coordinates of a squared-distance matrix.
struct Embedding {
  Eigen::MatrixXd Z;            // N x p coordinates, columns ordered by eigenvalue
  Eigen::VectorXd eigenvalues;  // retained positive eigenvalues, descending
  double dropped_negative_mass = 0.0;  // sum |negative| / sum |all| eigenvalues
  std::string source_hash;             // hash of the source matrix CSV bytes
  int requested_p = 0;  // Z has fewer columns when positive eigenvalues ran out

  [[nodiscard]] int n() const { return static_cast<int>(Z.rows()); }
  [[nodiscard]] int p() const { return static_cast<int>(Z.cols()); }
};

/// Z = V_p Lambda_p^{1/2} over the top-p positive eigenvalues of the
/// double-centered Gram matrix (the same centering as gram_spectrum). When
/// fewer than p positive eigenvalues exist the width shrinks accordingly
/// (requested_p records the ask). Column signs are fixed by making each
/// column's largest-magnitude entry positive. Throws DegenerateGeometryError
/// when no positive eigenvalue exists.
[[nodiscard]] Embedding classical_mds(const divergence::DistanceMatrix& dm, int p);

/// Mean absolute error between embedded pairwise distances and sqrt(D)
/// off-diagonals, for every dimension k = 1..p_max.
struct ReconstructionCurve {
  std::vector<int> dims;
  std::vector<double> mae;
  double median_offdiag = 0.0;  // median off-diagonal of sqrt(D)
};

[[nodiscard]] ReconstructionCurve reconstruction_curve(const divergence::DistanceMatrix& dm,
                                                       int p_max);

struct DimensionSelection {
  int dim = 0;
  bool converged = false;  // false: tolerance never reached, dim = p_max
};

/// Smallest k whose MAE is at most tolerance * median off-diagonal sqrt(D).
[[nodiscard]] DimensionSelection select_dimension(const ReconstructionCurve& curve,
                                                  double tolerance);

struct ClusterReport {
  int k = 0;
  std::vector<int> assignments;
  std::vector<double> intra;  // sqrt(D_original) over co-clustered pairs
  std::vector<double> inter;  // sqrt(D_original) over cross-cluster pairs
  double intra_median = 0.0;
  double inter_median = 0.0;
  int iterations = 0;
};

/// k-means on the embedding coordinates (k++-style seeding, Lloyd iterations
/// capped at 100 or centroid shift < 1e-9, empty clusters reseeded from the
/// farthest point), validated against the original distance matrix: the
/// intra/inter samples read sqrt(D_original), not embedding distances.
[[nodiscard]] ClusterReport kmeans_validate(const Embedding& emb,
                                            const divergence::DistanceMatrix& D_original, int k,
                                            std::uint64_t seed);

/// CSV persistence (N rows x p columns, 17 significant digits) with a JSON
/// sidecar {p, eigenvalues, dropped mass, source hash} at <csv>.meta.json.
void save_embedding(const Embedding& emb, const std::string& csv_path);
[[nodiscard]] Embedding load_embedding(const std::string& csv_path);

/// Reconstruction curve persistence as "k,mae" CSV rows.
void save_curve(const ReconstructionCurve& curve, const std::string& csv_path);

}  // namespace km::mds
