#include <cmath>

#include <doctest.h>

#include "km/optim.hpp"
#include "km/qmc.hpp"
#include "km/rng.hpp"

using namespace km;

TEST_CASE("rng streams are deterministic and tag-separated") {
  Rng a(42), b(42), c(43);
  CHECK(a.uniform() == b.uniform());
  CHECK(a.uniform() != c.uniform());
  CHECK(derive_seed(1, "alpha") != derive_seed(1, "beta"));
  CHECK(derive_seed(1, "alpha", 0) != derive_seed(1, "alpha", 1));
  CHECK(derive_seed(1, "alpha", 2) == derive_seed(1, "alpha", 2));
}

TEST_CASE("rng helpers stay in range") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(10) < 10);
  }
  // Box-Muller normals have roughly the right spread.
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("sobol points live in the open unit cube and are addressable") {
  const qmc::SobolSequence seq(3, 99);
  const Eigen::MatrixXd pts = seq.points(128);
  REQUIRE(pts.rows() == 128);
  REQUIRE(pts.cols() == 3);
  for (int i = 0; i < pts.rows(); ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(pts(i, j) > 0.0);
      CHECK(pts(i, j) < 1.0);
    }
    CHECK((seq.point(static_cast<std::uint64_t>(i)) - pts.row(i).transpose()).norm() == 0.0);
  }
  // Balanced: each coordinate of the first 128 points averages near 1/2.
  for (int j = 0; j < 3; ++j) CHECK(pts.col(j).mean() == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("sobol scrambling is seed-keyed but structure-preserving") {
  const qmc::SobolSequence a(2, 1), b(2, 1), c(2, 2);
  CHECK((a.points(32) - b.points(32)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.points(32) - c.points(32)).cwiseAbs().maxCoeff() > 0.0);

  // Low-discrepancy balance survives scrambling: quadrant counts of the
  // first 64 points stay near 16 each.
  const Eigen::MatrixXd pts = c.points(64);
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < 64; ++i) {
    const int qx = pts(i, 0) < 0.5 ? 0 : 1;
    const int qy = pts(i, 1) < 0.5 ? 0 : 1;
    ++counts[2 * qx + qy];
  }
  for (const int count : counts) {
    CHECK(count >= 12);
    CHECK(count <= 20);
  }
}

TEST_CASE("sobol rejects unsupported dimensions") {
  CHECK_THROWS_AS(qmc::SobolSequence(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(qmc::SobolSequence(qmc::kMaxDim + 1, 1), std::invalid_argument);
}

TEST_CASE("nelder-mead minimizes a quadratic inside the box") {
  optim::Bounds box;
  box.lo = Eigen::VectorXd::Constant(2, -5.0);
  box.hi = Eigen::VectorXd::Constant(2, 5.0);
  const auto f = [](const Eigen::VectorXd& x) {
    return (x[0] - 1.0) * (x[0] - 1.0) + 2.0 * (x[1] + 2.0) * (x[1] + 2.0);
  };
  Eigen::VectorXd x0(2);
  x0 << 4.0, 4.0;
  const optim::Result r = optim::nelder_mead(f, box, x0, 400);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x[1] == doctest::Approx(-2.0).epsilon(1e-4));
  CHECK(r.evals <= 400);
}

TEST_CASE("nelder-mead respects the box when the minimum lies outside") {
  optim::Bounds box;
  box.lo = Eigen::VectorXd::Constant(1, 0.0);
  box.hi = Eigen::VectorXd::Constant(1, 1.0);
  const auto f = [](const Eigen::VectorXd& x) { return (x[0] - 3.0) * (x[0] - 3.0); };
  Eigen::VectorXd x0(1);
  x0 << 0.5;
  const optim::Result r = optim::nelder_mead(f, box, x0, 200);
  CHECK(r.x[0] >= 0.0);
  CHECK(r.x[0] <= 1.0);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("multi-start minimization breaks ties toward the lowest start index") {
  optim::Bounds box;
  box.lo = Eigen::VectorXd::Constant(1, -1.0);
  box.hi = Eigen::VectorXd::Constant(1, 1.0);
  const auto f = [](const Eigen::VectorXd&) { return 1.0; };  // flat objective
  Eigen::MatrixXd starts(3, 1);
  starts << -0.5, 0.0, 0.5;
  const optim::Result r = optim::multi_start_minimize(f, box, starts, 50);
  CHECK(r.best_restart == 0);
  CHECK(r.value == 1.0);
}

TEST_CASE("non-finite objective values are treated as +inf") {
  optim::Bounds box;
  box.lo = Eigen::VectorXd::Constant(1, -2.0);
  box.hi = Eigen::VectorXd::Constant(1, 2.0);
  const auto f = [](const Eigen::VectorXd& x) {
    if (x[0] < 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (x[0] - 1.0) * (x[0] - 1.0);
  };
  Eigen::VectorXd x0(1);
  x0 << 1.5;
  const optim::Result r = optim::nelder_mead(f, box, x0, 200);
  CHECK(std::isfinite(r.value));
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
}
