#include "km/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "km/qmc.hpp"

namespace km::optim {
namespace {

Eigen::VectorXd clamp_to(const Bounds& b, Eigen::VectorXd x) {
  for (int i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], b.lo[i], b.hi[i]);
  return x;
}

}  // namespace

Result nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                   const Bounds& bounds, const Eigen::VectorXd& x0, int max_evals,
                   double ftol) {
  const int n = bounds.dim();
  if (x0.size() != n) throw std::invalid_argument("nelder_mead: x0/bounds dimension mismatch");
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  // Initial simplex: x0 plus per-coordinate offsets of 5% of the box range,
  // flipped inward when the step would leave the box.
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> fs;
  xs.push_back(clamp_to(bounds, x0));
  fs.push_back(eval(xs[0]));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd xi = xs[0];
    double step = 0.05 * (bounds.hi[i] - bounds.lo[i]);
    if (step <= 0.0) step = 0.05;
    if (xi[i] + step > bounds.hi[i]) step = -step;
    xi[i] = std::clamp(xi[i] + step, bounds.lo[i], bounds.hi[i]);
    xs.push_back(xi);
    if (evals >= max_evals) {
      fs.push_back(std::numeric_limits<double>::infinity());
    } else {
      fs.push_back(eval(xi));
    }
  }

  std::vector<int> order(xs.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
  };
  sort_simplex();

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  while (evals < max_evals) {
    const int best = order[0], worst = order[n], second_worst = order[n - 1];
    if (std::isfinite(fs[best]) && std::isfinite(fs[worst]) &&
        std::abs(fs[worst] - fs[best]) < ftol * (std::abs(fs[best]) + 1e-30) + ftol) {
      // Function values alone can tie while the simplex still straddles a
      // minimum symmetrically; require geometric collapse as well.
      bool collapsed = true;
      for (int i = 0; i <= n && collapsed; ++i) {
        if (i == best) continue;
        for (int d = 0; d < n; ++d) {
          const double range = std::max(bounds.hi[d] - bounds.lo[d], 1e-30);
          if (std::abs(xs[static_cast<std::size_t>(i)][d] -
                       xs[static_cast<std::size_t>(best)][d]) > 1e-9 * range) {
            collapsed = false;
            break;
          }
        }
      }
      if (collapsed) break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i) {
      if (i != worst) centroid += xs[static_cast<std::size_t>(i)];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = clamp_to(bounds, centroid + alpha * (centroid - xs[static_cast<std::size_t>(worst)]));
    const double fr = eval(xr);
    if (fr < fs[best]) {
      if (evals < max_evals) {
        const Eigen::VectorXd xe = clamp_to(bounds, centroid + gamma * (xr - centroid));
        const double fe = eval(xe);
        if (fe < fr) {
          xs[static_cast<std::size_t>(worst)] = xe;
          fs[worst] = fe;
        } else {
          xs[static_cast<std::size_t>(worst)] = xr;
          fs[worst] = fr;
        }
      } else {
        xs[static_cast<std::size_t>(worst)] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second_worst]) {
      xs[static_cast<std::size_t>(worst)] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const Eigen::VectorXd base = outside ? xr : xs[static_cast<std::size_t>(worst)];
      const Eigen::VectorXd xc = clamp_to(bounds, centroid + rho * (base - centroid));
      const double fc = evals < max_evals ? eval(xc) : std::numeric_limits<double>::infinity();
      if (fc < std::min(fr, fs[worst])) {
        xs[static_cast<std::size_t>(worst)] = xc;
        fs[worst] = fc;
      } else {
        // Shrink toward the best vertex.
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[static_cast<std::size_t>(i)] =
              clamp_to(bounds, xs[static_cast<std::size_t>(best)] +
                                   sigma * (xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(best)]));
          fs[i] = evals < max_evals ? eval(xs[static_cast<std::size_t>(i)])
                                    : std::numeric_limits<double>::infinity();
        }
      }
    }
    sort_simplex();
  }

  sort_simplex();
  Result res;
  res.x = xs[static_cast<std::size_t>(order[0])];
  res.value = fs[order[0]];
  res.evals = evals;
  return res;
}

Result multi_start_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Bounds& bounds, const Eigen::MatrixXd& starts,
                            int max_evals_per_start, double ftol) {
  if (starts.rows() < 1) throw std::invalid_argument("multi_start_minimize: no starting points");
  Result best;
  best.value = std::numeric_limits<double>::infinity();
  int total_evals = 0;
  for (int r = 0; r < starts.rows(); ++r) {
    Result cur = nelder_mead(f, bounds, starts.row(r).transpose(), max_evals_per_start, ftol);
    total_evals += cur.evals;
    if (cur.value < best.value) {  // strict: ties keep the lowest restart index
      best = cur;
      best.best_restart = r;
    }
  }
  best.evals = total_evals;
  return best;
}

Eigen::MatrixXd sobol_starts(const Bounds& bounds, int restarts, std::uint64_t seed) {
  const int n = bounds.dim();
  qmc::SobolSequence seq(n, seed);
  Eigen::MatrixXd pts = seq.points(restarts);
  for (int r = 0; r < restarts; ++r) {
    for (int i = 0; i < n; ++i) {
      pts(r, i) = bounds.lo[i] + pts(r, i) * (bounds.hi[i] - bounds.lo[i]);
    }
  }
  return pts;
}

}  // namespace km::optim
