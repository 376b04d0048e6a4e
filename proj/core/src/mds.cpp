#include "km/mds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/hash.hpp"
#include "km/io.hpp"
#include "km/rng.hpp"

namespace km::mds {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

Embedding classical_mds(const divergence::DistanceMatrix& dm, int p) {
  if (p < 1) throw std::invalid_argument("classical_mds: p must be >= 1");
  const Eigen::MatrixXd& D = dm.D;
  if (D.rows() != D.cols()) throw std::invalid_argument("classical_mds: matrix must be square");
  const Eigen::Index n = D.rows();

  const Eigen::MatrixXd B = divergence::double_center(D);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(B);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("classical_mds: eigendecomposition failed");
  }
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd evecs = solver.eigenvectors();

  const double max_eval = evals[n - 1];
  if (!(max_eval > 0.0)) {
    throw DegenerateGeometryError("classical_mds: no positive eigenvalue in the Gram spectrum");
  }
  // Numerically-zero eigenvalues don't carry coordinates.
  const double positive_floor = 1e-12 * max_eval;

  int positive = 0;
  double neg_mass = 0.0;
  double total_mass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total_mass += std::abs(evals[i]);
    if (evals[i] < 0.0) neg_mass += -evals[i];
    if (evals[i] > positive_floor) ++positive;
  }

  const int width = std::min(p, positive);
  Embedding emb;
  emb.requested_p = p;
  emb.dropped_negative_mass = total_mass > 0.0 ? neg_mass / total_mass : 0.0;
  emb.source_hash = hash_hex(io::matrix_csv_string(D));
  emb.eigenvalues.resize(width);
  emb.Z.resize(n, width);
  for (int c = 0; c < width; ++c) {
    const Eigen::Index src = n - 1 - c;  // descending order
    const double lambda = evals[src];
    emb.eigenvalues[c] = lambda;
    Eigen::VectorXd col = evecs.col(src) * std::sqrt(lambda);
    // Deterministic sign: the entry of largest magnitude is positive (first
    // such entry wins ties).
    Eigen::Index arg_max = 0;
    col.cwiseAbs().maxCoeff(&arg_max);
    if (col[arg_max] < 0.0) col = -col;
    emb.Z.col(c) = col;
  }
  return emb;
}

ReconstructionCurve reconstruction_curve(const divergence::DistanceMatrix& dm, int p_max) {
  const Eigen::Index n = dm.D.rows();
  if (p_max < 1 || p_max > n - 1) {
    throw std::invalid_argument("reconstruction_curve: p_max must be in [1, N-1]");
  }
  const Embedding emb = classical_mds(dm, p_max);
  const int avail = emb.p();

  std::vector<double> target;  // sqrt(D) off-diagonals, unordered pairs
  target.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) target.push_back(std::sqrt(dm.D(i, j)));

  ReconstructionCurve curve;
  curve.median_offdiag = median_of(target);
  curve.dims.reserve(static_cast<std::size_t>(p_max));
  curve.mae.reserve(static_cast<std::size_t>(p_max));

  // Squared embedded distances grow one coordinate at a time.
  std::vector<double> dist_sq(target.size(), 0.0);
  double mae = 0.0;
  for (int k = 1; k <= p_max; ++k) {
    if (k <= avail) {
      std::size_t idx = 0;
      mae = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j, ++idx) {
          const double diff = emb.Z(i, k - 1) - emb.Z(j, k - 1);
          dist_sq[idx] += diff * diff;
          mae += std::abs(std::sqrt(dist_sq[idx]) - target[idx]);
        }
      }
      mae /= target.empty() ? 1.0 : static_cast<double>(target.size());
    }
    // Beyond the available coordinates the curve stays flat.
    curve.dims.push_back(k);
    curve.mae.push_back(mae);
  }
  return curve;
}

DimensionSelection select_dimension(const ReconstructionCurve& curve, double tolerance) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("select_dimension: tolerance must be > 0");
  if (curve.dims.empty()) throw std::invalid_argument("select_dimension: empty curve");
  const double threshold = tolerance * curve.median_offdiag;
  for (std::size_t i = 0; i < curve.dims.size(); ++i) {
    if (curve.mae[i] <= threshold) return {curve.dims[i], true};
  }
  return {curve.dims.back(), false};
}

ClusterReport kmeans_validate(const Embedding& emb, const divergence::DistanceMatrix& D_original,
                              int k, std::uint64_t seed) {
  const int n = emb.n();
  if (k < 2) throw std::invalid_argument("kmeans_validate: k must be >= 2");
  if (k > n) throw std::invalid_argument("kmeans_validate: k exceeds the number of points");
  if (D_original.D.rows() != n) {
    throw std::invalid_argument("kmeans_validate: embedding and matrix size mismatch");
  }
  const Eigen::MatrixXd& Z = emb.Z;
  const int p = emb.p();
  Rng rng(derive_seed(seed, "kmeans"));

  // k-means++-style seeding: first centroid uniform, then proportional to
  // squared distance from the nearest chosen centroid.
  Eigen::MatrixXd centroids(k, p);
  std::vector<double> nearest_sq(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());
  {
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    centroids.row(0) = Z.row(first);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = (Z.row(i) - centroids.row(c - 1)).squaredNorm();
        nearest_sq[static_cast<std::size_t>(i)] =
            std::min(nearest_sq[static_cast<std::size_t>(i)], d);
        total += nearest_sq[static_cast<std::size_t>(i)];
      }
      int chosen = n - 1;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += nearest_sq[static_cast<std::size_t>(i)];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      }
      centroids.row(c) = Z.row(chosen);
    }
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  int iterations = 0;
  for (int iter = 0; iter < 100; ++iter) {
    iterations = iter + 1;
    // Assignment step; ties go to the lowest cluster index.
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (Z.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (Z.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assignment[static_cast<std::size_t>(i)] = best;
    }

    // Update step with empty-cluster reseeding from the globally farthest
    // point (by distance to its own centroid).
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, p);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += Z.row(i);
      counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])]++;
    }
    Eigen::MatrixXd next(k, p);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        int farthest = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d =
              (Z.row(i) - centroids.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            farthest = i;
          }
        }
        next.row(c) = Z.row(farthest);
        assignment[static_cast<std::size_t>(farthest)] = c;
        counts[static_cast<std::size_t>(c)] = 1;
      }
    }

    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = next;
    if (shift < 1e-9) break;
  }

  ClusterReport report;
  report.k = k;
  report.assignments = assignment;
  report.iterations = iterations;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = std::sqrt(D_original.D(i, j));
      if (assignment[static_cast<std::size_t>(i)] == assignment[static_cast<std::size_t>(j)]) {
        report.intra.push_back(d);
      } else {
        report.inter.push_back(d);
      }
    }
  }
  report.intra_median = median_of(report.intra);
  report.inter_median = median_of(report.inter);
  return report;
}

void save_embedding(const Embedding& emb, const std::string& csv_path) {
  io::write_matrix_csv(emb.Z, csv_path);
  nlohmann::json j;
  j["p"] = emb.p();
  j["requested_p"] = emb.requested_p;
  j["eigenvalues"] =
      std::vector<double>(emb.eigenvalues.data(), emb.eigenvalues.data() + emb.eigenvalues.size());
  j["dropped_negative_mass"] = emb.dropped_negative_mass;
  j["source_hash"] = emb.source_hash;
  io::write_file(csv_path + ".meta.json", j.dump(2) + "\n");
}

Embedding load_embedding(const std::string& csv_path) {
  Embedding emb;
  emb.Z = io::read_matrix_csv(csv_path);
  const std::string meta_path = csv_path + ".meta.json";
  if (io::file_exists(meta_path)) {
    const nlohmann::json j = nlohmann::json::parse(io::read_file(meta_path));
    emb.requested_p = j.value("requested_p", static_cast<int>(emb.Z.cols()));
    const auto ev = j.at("eigenvalues").get<std::vector<double>>();
    emb.eigenvalues =
        Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    emb.dropped_negative_mass = j.value("dropped_negative_mass", 0.0);
    emb.source_hash = j.value("source_hash", std::string());
  }
  return emb;
}

void save_curve(const ReconstructionCurve& curve, const std::string& csv_path) {
  std::string text = "k,mae\n";
  for (std::size_t i = 0; i < curve.dims.size(); ++i) {
    text += std::to_string(curve.dims[i]) + "," + io::format_double(curve.mae[i]) + "\n";
  }
  io::write_file(csv_path, text);
}

}  // namespace km::mds
