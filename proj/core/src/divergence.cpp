#include "km/divergence.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/io.hpp"
#include "km/qmc.hpp"
#include "km/quadform.hpp"
#include "km/rng.hpp"

namespace km::divergence {

namespace {

constexpr double kLog2 = 0.69314718055994530942;
constexpr double kLog2Pi = 1.8378770664093454836;

const double kPriorJitterLadder[] = {1e-6, 1e-4, 1e-2};

double softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

GaussianPrior prior_from_cov(Eigen::MatrixXd K, const std::string& context) {
  // Exact symmetry before factorizing; eval paths are symmetric only to
  // rounding because of the order of the norm additions.
  K = ((K + K.transpose()) * 0.5).eval();
  for (double jitter : kPriorJitterLadder) {
    Eigen::MatrixXd C = K;
    C.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() == Eigen::Success && llt.matrixLLT().allFinite() &&
        llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      GaussianPrior prior;
      prior.cov = std::move(C);
      prior.L = llt.matrixL();
      prior.log_det = 2.0 * prior.L.diagonal().array().log().sum();
      prior.jitter = jitter;
      return prior;
    }
  }
  throw NumericalError("prior covariance for " + context +
                       " is not positive definite after jitter ladder 1e-6, 1e-4, 1e-2");
}

double log_density(const GaussianPrior& g, const Eigen::VectorXd& x) {
  const Eigen::VectorXd v = g.L.triangularView<Eigen::Lower>().solve(x);
  return -0.5 * (static_cast<double>(g.dim()) * kLog2Pi + g.log_det + v.squaredNorm());
}

}  // namespace

ReferenceGrid make_reference_grid(int n_ref) {
  if (n_ref < 2) throw std::invalid_argument("reference grid needs at least 2 points");
  ReferenceGrid grid;
  grid.points = Eigen::VectorXd::LinSpaced(n_ref, 0.0, 1.0);
  return grid;
}

GaussianPrior make_prior(const grammar::KernelExpr& expr, const Eigen::VectorXd& theta,
                         const ReferenceGrid& grid) {
  return prior_from_cov(grammar::eval_covariance(expr, theta, grid.as_matrix()),
                        expr.canonical_string());
}

double hellinger_sq(const GaussianPrior& p, const GaussianPrior& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("hellinger_sq: dimension mismatch");
  const Eigen::MatrixXd avg = 0.5 * (p.cov + q.cov);
  Eigen::LLT<Eigen::MatrixXd> llt(avg);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw NumericalError("hellinger_sq: Cholesky failed on the average covariance");
  }
  const double log_det_avg =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  const double log_bc = 0.25 * p.log_det + 0.25 * q.log_det - 0.5 * log_det_avg;
  return -std::expm1(log_bc);
}

double kl(const GaussianPrior& p, const GaussianPrior& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("kl: dimension mismatch");
  // tr(Sigma_q^{-1} Sigma_p) = || L_q^{-1} L_p ||_F^2.
  const Eigen::MatrixXd C = q.L.triangularView<Eigen::Lower>().solve(p.L);
  const double trace = C.squaredNorm();
  const double k = static_cast<double>(p.dim());
  return 0.5 * (trace - k + q.log_det - p.log_det);
}

JsEstimate js_estimate(const GaussianPrior& p, const GaussianPrior& q, int mc_samples,
                       std::uint64_t seed) {
  if (p.dim() != q.dim()) throw std::invalid_argument("js: dimension mismatch");
  if (mc_samples < 1) throw std::invalid_argument("js: mc_samples must be >= 1");

  // Antithetic pairing: the estimate at -z is bit-identical to the one at +z
  // for zero-mean Gaussians, so each unique draw stands for the pair.
  const int unique = (mc_samples + 1) / 2;
  const int k = p.dim();
  Rng rng(derive_seed(seed, "js-mc"));

  // Common random numbers: the same z drives both mixture sides, which makes
  // the estimator exactly symmetric under swapping (p, q).
  double mean = 0.0;
  double m2 = 0.0;
  Eigen::VectorXd z(k);
  for (int s = 0; s < unique; ++s) {
    for (int d = 0; d < k; ++d) z[d] = rng.normal();
    const Eigen::VectorXd x = p.L.triangularView<Eigen::Lower>() * z;
    const Eigen::VectorXd y = q.L.triangularView<Eigen::Lower>() * z;
    const double sp_p = softplus(log_density(q, x) - log_density(p, x));
    const double sp_q = softplus(log_density(p, y) - log_density(q, y));
    const double e = kLog2 - 0.5 * (sp_p + sp_q);
    const double delta = e - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (e - mean);
  }

  JsEstimate out;
  out.unique_draws = unique;
  out.value = std::clamp(mean, 0.0, kLog2);
  out.std_error =
      unique > 1 ? std::sqrt(m2 / static_cast<double>(unique - 1) / static_cast<double>(unique))
                 : 0.0;
  return out;
}

double js(const GaussianPrior& p, const GaussianPrior& q, int mc_samples, std::uint64_t seed) {
  return js_estimate(p, q, mc_samples, seed).value;
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::hellinger_sq: return "hellinger_sq";
    case Kind::kl_sym: return "kl_sym";
    case Kind::js: return "js";
    case Kind::sqrt_js_sq: return "sqrt_js_sq";
  }
  throw std::logic_error("unreachable kind");
}

Kind kind_from_name(const std::string& name) {
  if (name == "hellinger_sq") return Kind::hellinger_sq;
  if (name == "kl_sym") return Kind::kl_sym;
  if (name == "js") return Kind::js;
  if (name == "sqrt_js_sq") return Kind::sqrt_js_sq;
  throw std::invalid_argument("unknown divergence kind '" + name +
                              "' (expected hellinger_sq, kl_sym, js or sqrt_js_sq)");
}

const char* transform_name(Transform t) {
  switch (t) {
    case Transform::none: return "none";
    case Transform::log1p: return "log1p";
    case Transform::log_eps: return "log_eps";
    case Transform::chordal: return "chordal";
  }
  throw std::logic_error("unreachable transform");
}

Transform transform_from_name(const std::string& name) {
  if (name == "none") return Transform::none;
  if (name == "log1p") return Transform::log1p;
  if (name == "log_eps") return Transform::log_eps;
  if (name == "chordal") return Transform::chordal;
  throw std::invalid_argument("unknown transform '" + name + "'");
}

namespace {

struct PriorCache {
  Eigen::MatrixXd cov;  // only kept when the kind needs it
  Eigen::MatrixXd L;
  double log_det = 0.0;
};

}  // namespace

DistanceMatrix build_distance_matrix(const grammar::KernelLibrary& library,
                                     const ReferenceGrid& grid, Kind kind, int S,
                                     std::uint64_t seed) {
  if (S < 1) throw std::invalid_argument("build_distance_matrix: S must be >= 1");
  const int N = library.size();
  if (N < 1) throw std::invalid_argument("build_distance_matrix: empty library");

  const bool need_cov = kind == Kind::hellinger_sq;
  const Eigen::MatrixXd grid_dist = grammar::pairwise_distances(grid.as_matrix());

  // Per-kernel hyperparameter draws from a scrambled low-discrepancy stream
  // keyed by (seed, kernel index). Draw s of kernel i is reused by every pair
  // (i, *), so the matrix is an average over s of per-draw divergence
  // matrices; the scrambles of different kernels are independent, keeping the
  // marginals uniform over each bounds box.
  std::vector<std::vector<PriorCache>> priors(static_cast<std::size_t>(N));
  std::vector<std::string> prior_failures;
  for (int i = 0; i < N; ++i) {
    const auto& entry = library.entries[static_cast<std::size_t>(i)];
    const auto& schema = entry.schema;
    const int dim = static_cast<int>(schema.size());
    const qmc::SobolSequence sobol(dim, derive_seed(seed, "pair-draws", static_cast<std::uint64_t>(i)));
    const Eigen::MatrixXd u = sobol.points(S);
    auto& row = priors[static_cast<std::size_t>(i)];
    row.reserve(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
      Eigen::VectorXd theta(dim);
      for (int d = 0; d < dim; ++d) {
        const auto& hp = schema[static_cast<std::size_t>(d)];
        theta[d] = hp.low + u(s, d) * (hp.high - hp.low);
      }
      try {
        Eigen::MatrixXd K = grammar::eval_covariance_from_dist(entry.expr, theta, grid_dist);
        GaussianPrior prior = prior_from_cov(std::move(K), entry.expr.canonical_string());
        PriorCache cache;
        if (need_cov) cache.cov = std::move(prior.cov);
        cache.L = std::move(prior.L);
        cache.log_det = prior.log_det;
        row.push_back(std::move(cache));
      } catch (const NumericalError& err) {
        prior_failures.push_back("kernel " + std::to_string(i) + " (" +
                                 entry.expr.canonical_string() + ") draw " + std::to_string(s) +
                                 ": " + err.what());
        row.emplace_back();  // placeholder; the build aborts below
      }
    }
  }
  if (!prior_failures.empty()) {
    std::ostringstream msg;
    msg << "distance matrix build failed; offending draws:";
    for (const auto& f : prior_failures) msg << "\n  " << f;
    throw NumericalError(msg.str());
  }

  DistanceMatrix dm;
  dm.D = Eigen::MatrixXd::Zero(N, N);
  dm.kind = kind;
  dm.samples = S;
  dm.seed = seed;
  dm.n_ref = grid.n_ref();
  dm.library_hash = library.hash();

  struct Pair {
    int i;
    int j;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(N) * static_cast<std::size_t>(N - 1) / 2);
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) pairs.push_back({i, j});

  std::atomic<int> clamp_count{0};
  std::atomic<std::size_t> cursor{0};
  std::mutex failure_mutex;
  std::vector<std::pair<int, int>> failed_pairs;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t idx = cursor.fetch_add(1);
      if (idx >= pairs.size()) return;
      const auto [i, j] = pairs[idx];
      const auto& pi = priors[static_cast<std::size_t>(i)];
      const auto& pj = priors[static_cast<std::size_t>(j)];
      double acc = 0.0;
      bool ok = true;
      try {
        for (int s = 0; s < S; ++s) {
          const PriorCache& a = pi[static_cast<std::size_t>(s)];
          const PriorCache& b = pj[static_cast<std::size_t>(s)];
          double d_sq = 0.0;
          switch (kind) {
            case Kind::hellinger_sq: {
              GaussianPrior ga{a.cov, a.L, a.log_det, 0.0};
              GaussianPrior gb{b.cov, b.L, b.log_det, 0.0};
              double h = hellinger_sq(ga, gb);
              if (h < 0.0 || h > 1.0) {
                if (h < -1e-9 || h > 1.0 + 1e-9) clamp_count.fetch_add(1);
                h = std::clamp(h, 0.0, 1.0);
              }
              d_sq = h;
              break;
            }
            case Kind::kl_sym: {
              GaussianPrior ga{Eigen::MatrixXd(), a.L, a.log_det, 0.0};
              GaussianPrior gb{Eigen::MatrixXd(), b.L, b.log_det, 0.0};
              double d = 0.5 * (kl(ga, gb) + kl(gb, ga));
              if (d < 0.0) {
                if (d < -1e-9) clamp_count.fetch_add(1);
                d = 0.0;
              }
              d_sq = d * d;
              break;
            }
            case Kind::js:
            case Kind::sqrt_js_sq: {
              bool clamped = false;
              const double v = quadform::js_gaussian(a.L, b.L, &clamped);
              if (clamped) clamp_count.fetch_add(1);
              d_sq = kind == Kind::js ? v * v : v;
              break;
            }
          }
          if (!std::isfinite(d_sq)) throw NumericalError("non-finite pair divergence");
          acc += d_sq;
        }
      } catch (const std::exception&) {
        ok = false;
      }
      if (!ok || !std::isfinite(acc)) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        failed_pairs.emplace_back(i, j);
        continue;
      }
      const double value = acc / static_cast<double>(S);
      dm.D(i, j) = value;
      dm.D(j, i) = value;
    }
  };

  // Pairs are independent and write disjoint slots, so the result is
  // identical for any thread count; placement is by pair index.
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_threads =
      std::min<unsigned>(hw, static_cast<unsigned>(std::max<std::size_t>(pairs.size(), 1)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  if (!failed_pairs.empty()) {
    std::sort(failed_pairs.begin(), failed_pairs.end());
    std::ostringstream msg;
    msg << "distance matrix build failed for " << failed_pairs.size() << " pair(s):";
    for (const auto& [i, j] : failed_pairs) msg << " (" << i << "," << j << ")";
    throw NumericalError(msg.str());
  }

  dm.clamp_count = clamp_count.load();
  return dm;
}

namespace {

DistanceMatrix transformed_copy(const DistanceMatrix& dm, Transform t) {
  if (dm.transform != Transform::none) {
    throw std::invalid_argument("matrix already carries transform '" +
                                std::string(transform_name(dm.transform)) + "'");
  }
  DistanceMatrix out = dm;
  out.transform = t;
  return out;
}

}  // namespace

DistanceMatrix transform_log1p(const DistanceMatrix& dm) {
  DistanceMatrix out = transformed_copy(dm, Transform::log1p);
  out.D = dm.D.array().log1p();
  return out;
}

DistanceMatrix transform_log_eps(const DistanceMatrix& dm, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("log_eps: eps must be positive");
  DistanceMatrix out = transformed_copy(dm, Transform::log_eps);
  out.eps = eps;
  // log(d + eps) - log(eps) = log1p(d / eps): re-zeroes the diagonal exactly.
  out.D = (dm.D.array() / eps).log1p();
  return out;
}

DistanceMatrix transform_chordal(const DistanceMatrix& dm, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("chordal: radius must be positive");
  DistanceMatrix out = transformed_copy(dm, Transform::chordal);
  out.radius = radius;
  out.D.resize(dm.D.rows(), dm.D.cols());
  for (Eigen::Index i = 0; i < dm.D.rows(); ++i) {
    for (Eigen::Index j = 0; j < dm.D.cols(); ++j) {
      const double ratio = dm.D(i, j) / radius;
      if (ratio > 3.14159265358979323846 + 1e-9) {
        throw std::invalid_argument("chordal: geodesic entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") exceeds pi * radius");
      }
      const double angle = std::min(ratio, 3.14159265358979323846);
      const double chord = 2.0 * radius * std::sin(0.5 * angle);
      out.D(i, j) = chord * chord;
    }
  }
  return out;
}

Eigen::MatrixXd double_center(const Eigen::MatrixXd& D) {
  if (D.rows() != D.cols()) throw std::invalid_argument("double_center: matrix must be square");
  const Eigen::VectorXd row_mean = D.rowwise().mean();
  const Eigen::VectorXd col_mean = D.colwise().mean();
  const double grand = D.mean();
  Eigen::MatrixXd B(D.rows(), D.cols());
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    for (Eigen::Index j = 0; j < D.cols(); ++j)
      B(i, j) = -0.5 * (D(i, j) - row_mean[i] - col_mean[j] + grand);
  return B;
}

GramSpectrum gram_spectrum(const Eigen::MatrixXd& D) {
  const Eigen::MatrixXd B = double_center(D);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(B, Eigen::EigenvaluesOnly);
  GramSpectrum out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.min_eigenvalue = out.eigenvalues[out.eigenvalues.size() - 1];
  double neg = 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.eigenvalues.size(); ++i) {
    const double v = out.eigenvalues[i];
    total += std::abs(v);
    if (v < 0.0) neg += -v;
  }
  out.negative_mass = total > 0.0 ? neg / total : 0.0;
  return out;
}

void save_distance_matrix(const DistanceMatrix& dm, const std::string& csv_path) {
  io::write_matrix_csv(dm.D, csv_path);
  nlohmann::json j;
  j["kind"] = kind_name(dm.kind);
  j["transform"] = transform_name(dm.transform);
  if (dm.transform == Transform::log_eps) j["eps"] = dm.eps;
  if (dm.transform == Transform::chordal) j["radius"] = dm.radius;
  j["samples"] = dm.samples;
  j["seed"] = dm.seed;
  j["n_ref"] = dm.n_ref;
  j["library_hash"] = dm.library_hash;
  j["clamp_count"] = dm.clamp_count;
  io::write_file(csv_path + ".meta.json", j.dump(2) + "\n");
}

DistanceMatrix load_distance_matrix(const std::string& csv_path) {
  DistanceMatrix dm;
  dm.D = io::read_matrix_csv(csv_path);
  if (dm.D.rows() != dm.D.cols()) {
    throw std::invalid_argument("distance matrix in " + csv_path + " is not square");
  }
  const std::string meta_path = csv_path + ".meta.json";
  if (io::file_exists(meta_path)) {
    const nlohmann::json j = nlohmann::json::parse(io::read_file(meta_path));
    dm.kind = kind_from_name(j.at("kind").get<std::string>());
    dm.transform = transform_from_name(j.at("transform").get<std::string>());
    dm.eps = j.value("eps", 0.0);
    dm.radius = j.value("radius", 0.0);
    dm.samples = j.at("samples").get<int>();
    dm.seed = j.at("seed").get<std::uint64_t>();
    dm.n_ref = j.at("n_ref").get<int>();
    dm.library_hash = j.at("library_hash").get<std::string>();
    dm.clamp_count = j.value("clamp_count", 0);
  }
  return dm;
}

}  // namespace km::divergence
