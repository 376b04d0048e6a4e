#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "km/divergence.hpp"
#include "km/errors.hpp"
#include "km/mds.hpp"
#include "km/rng.hpp"

using namespace km;

namespace {

divergence::DistanceMatrix squared_matrix(const Eigen::MatrixXd& pts) {
  divergence::DistanceMatrix dm;
  const int n = static_cast<int>(pts.rows());
  dm.D.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dm.D(i, j) = (pts.row(i) - pts.row(j)).squaredNorm();
  return dm;
}

// 40 seeded points on the unit sphere plus their geodesic distances.
Eigen::MatrixXd sphere_points(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d v;
    do {
      v << rng.normal(), rng.normal(), rng.normal();
    } while (v.norm() < 1e-6);
    pts.row(i) = v.normalized();
  }
  return pts;
}

Eigen::MatrixXd geodesics(const Eigen::MatrixXd& pts) {
  const int n = static_cast<int>(pts.rows());
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dot = std::clamp(pts.row(i).dot(pts.row(j)), -1.0, 1.0);
      G(i, j) = std::acos(dot);
    }
  }
  G.diagonal().setZero();
  return G;
}

}  // namespace

TEST_CASE("an equilateral triangle embeds exactly in two dimensions") {
  divergence::DistanceMatrix dm;
  dm.D.resize(3, 3);
  dm.D << 0, 1, 1, 1, 0, 1, 1, 1, 0;  // squared distances of side-1 triangle
  const mds::Embedding emb = mds::classical_mds(dm, 2);
  REQUIRE(emb.p() == 2);
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      CHECK((emb.Z.row(i) - emb.Z.row(j)).norm() == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  CHECK(emb.dropped_negative_mass < 1e-12);
}

TEST_CASE("collinear points recover their line in one dimension") {
  Eigen::MatrixXd pts(5, 2);
  for (int i = 0; i < 5; ++i) pts.row(i) << 2.0 * i, 3.0 * i;  // along a line
  const auto dm = squared_matrix(pts);
  const mds::Embedding emb = mds::classical_mds(dm, 3);
  // Only one positive eigenvalue: width shrinks to 1, requested_p recorded.
  CHECK(emb.p() == 1);
  CHECK(emb.requested_p == 3);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(std::abs(emb.Z(i, 0) - emb.Z(j, 0)) ==
            doctest::Approx(std::sqrt(dm.D(i, j))).epsilon(1e-9));
    }
  }
}

TEST_CASE("column signs are fixed deterministically") {
  Eigen::MatrixXd pts(8, 2);
  Rng rng(3);
  for (int i = 0; i < 8; ++i) pts.row(i) << rng.normal(), rng.normal();
  const auto dm = squared_matrix(pts);
  const mds::Embedding a = mds::classical_mds(dm, 2);
  const mds::Embedding b = mds::classical_mds(dm, 2);
  CHECK((a.Z - b.Z).cwiseAbs().maxCoeff() == 0.0);
  for (int c = 0; c < a.p(); ++c) {
    Eigen::Index at;
    a.Z.col(c).cwiseAbs().maxCoeff(&at);
    CHECK(a.Z(at, c) > 0.0);
  }
}

TEST_CASE("degenerate geometry raises an error") {
  divergence::DistanceMatrix dm;
  dm.D = Eigen::MatrixXd::Zero(4, 4);  // all points coincide
  CHECK_THROWS_AS((void)mds::classical_mds(dm, 2), DegenerateGeometryError);
}

TEST_CASE("sphere geodesics are non-euclidean until the chordal map") {
  const Eigen::MatrixXd pts = sphere_points(40, 2027);
  const Eigen::MatrixXd G = geodesics(pts);

  divergence::DistanceMatrix geo_sq;
  geo_sq.D = G.array().square();
  const auto spec = divergence::gram_spectrum(geo_sq.D);
  CHECK(spec.negative_mass > 1e-3);

  // Raw geodesics never reconstruct well.
  const auto raw_curve = mds::reconstruction_curve(geo_sq, 8);
  for (const double mae : raw_curve.mae) CHECK(mae >= 1e-3);

  // Chordal mapping flattens the sphere exactly into R^3.
  divergence::DistanceMatrix geo;
  geo.D = G;
  const auto chord = divergence::transform_chordal(geo, 1.0);
  const auto chord_spec = divergence::gram_spectrum(chord.D);
  CHECK(chord_spec.min_eigenvalue >= -1e-8 * chord_spec.eigenvalues.maxCoeff());
  const auto chord_curve = mds::reconstruction_curve(chord, 5);
  CHECK(chord_curve.mae[2] <= 1e-8);  // k = 3
}

TEST_CASE("reconstruction curve is monotone and drives dimension selection") {
  const Eigen::MatrixXd pts = sphere_points(25, 7);
  divergence::DistanceMatrix geo;
  geo.D = geodesics(pts);
  const auto dm = divergence::transform_chordal(geo, 1.0);
  const auto curve = mds::reconstruction_curve(dm, 10);
  REQUIRE(curve.dims.size() == 10);
  CHECK(curve.median_offdiag > 0.0);
  for (std::size_t i = 1; i < curve.mae.size(); ++i) {
    CHECK(curve.mae[i] <= curve.mae[i - 1] + 1e-12);
  }
  const auto sel = mds::select_dimension(curve, 1e-6);
  CHECK(sel.converged);
  CHECK(sel.dim == 3);

  // A tolerance too small to ever meet falls back to p_max with the flag off.
  const auto impossible = mds::select_dimension(curve, 1e-300);
  CHECK_FALSE(impossible.converged);
  CHECK(impossible.dim == 10);
  // Non-positive tolerances violate the precondition.
  CHECK_THROWS_AS((void)mds::select_dimension(curve, 0.0), std::invalid_argument);
}

TEST_CASE("kmeans validation separates well-separated blobs") {
  Rng rng(15);
  Eigen::MatrixXd pts(30, 2);
  for (int i = 0; i < 30; ++i) {
    const int blob = i / 10;
    pts.row(i) << 12.0 * blob + 0.3 * rng.normal(), 0.3 * rng.normal();
  }
  const auto dm = squared_matrix(pts);
  const mds::Embedding emb = mds::classical_mds(dm, 2);
  const mds::ClusterReport report = mds::kmeans_validate(emb, dm, 3, 4);
  CHECK(report.k == 3);
  REQUIRE(report.assignments.size() == 30);
  CHECK(report.intra_median < report.inter_median);
  // Points in the same blob share a cluster.
  for (int i = 0; i < 30; ++i) {
    CHECK(report.assignments[static_cast<std::size_t>(i)] ==
          report.assignments[static_cast<std::size_t>(10 * (i / 10))]);
  }
  // Deterministic given the seed.
  const mds::ClusterReport again = mds::kmeans_validate(emb, dm, 3, 4);
  CHECK(again.assignments == report.assignments);
}

TEST_CASE("embeddings and curves persist with metadata") {
  const Eigen::MatrixXd pts = sphere_points(10, 42);
  divergence::DistanceMatrix geo;
  geo.D = geodesics(pts);
  const auto dm = divergence::transform_chordal(geo, 1.0);
  const mds::Embedding emb = mds::classical_mds(dm, 3);

  const auto dir = std::filesystem::temp_directory_path() / "km_mds_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "Z.csv").string();
  mds::save_embedding(emb, path);
  const mds::Embedding back = mds::load_embedding(path);
  CHECK((back.Z - emb.Z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.eigenvalues - emb.eigenvalues).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.dropped_negative_mass == emb.dropped_negative_mass);
  CHECK(back.requested_p == emb.requested_p);

  const auto curve = mds::reconstruction_curve(dm, 5);
  mds::save_curve(curve, (dir / "curve.csv").string());
  CHECK(std::filesystem::exists(dir / "curve.csv"));
  std::filesystem::remove_all(dir);
}
