#include "km/gp.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/optim.hpp"

namespace km::gp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

const double kJitterLadder[] = {0.0, 1e-6, 1e-4, 1e-2};

}  // namespace

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& C, double* jitter_used,
                                                 const std::string& context) {
  const auto n = C.rows();
  for (double jitter : kJitterLadder) {
    Eigen::MatrixXd Cj = C;
    if (jitter > 0.0) Cj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Cj);
    if (llt.info() == Eigen::Success && llt.matrixLLT().allFinite() &&
        llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      if (jitter_used != nullptr) *jitter_used = jitter;
      return llt;
    }
  }
  throw NumericalError("Cholesky factorization failed for " + context + " (n=" +
                       std::to_string(n) + ") after jitter ladder 1e-6, 1e-4, 1e-2");
}

namespace {

struct LmlParts {
  double lml = 0.0;
  double jitter = 0.0;
  Eigen::MatrixXd L;
  Eigen::VectorXd alpha;
};

LmlParts lml_with_factors(const grammar::KernelExpr& expr, const Eigen::VectorXd& theta,
                          double scale, double noise, const Dataset& data) {
  const Eigen::MatrixXd K = grammar::eval_covariance(expr, theta, data.X);
  Eigen::MatrixXd C = scale * K;
  C.diagonal().array() += noise;

  LmlParts out;
  Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(C, &out.jitter, expr.canonical_string());
  out.L = llt.matrixL();
  out.alpha = llt.solve(data.y);

  const double quad = data.y.dot(out.alpha);
  const double log_det = 2.0 * out.L.diagonal().array().log().sum();
  const double n = static_cast<double>(data.n());
  out.lml = -0.5 * quad - 0.5 * log_det - 0.5 * n * kLog2Pi;
  if (!std::isfinite(out.lml)) {
    throw NumericalError("non-finite log marginal likelihood for " + expr.canonical_string());
  }
  return out;
}

}  // namespace

double log_marginal_likelihood(const grammar::KernelExpr& expr, const Eigen::VectorXd& theta,
                               double scale, double noise, const Dataset& data) {
  if (!(scale > 0.0) || !(noise > 0.0)) {
    throw std::invalid_argument("scale and noise must be positive");
  }
  return lml_with_factors(expr, theta, scale, noise, data).lml;
}

double FittedGP::recompute_lml() const {
  const double quad = y_train.dot(alpha);
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const double n = static_cast<double>(y_train.size());
  return -0.5 * quad - 0.5 * log_det - 0.5 * n * kLog2Pi;
}

FittedGP fit_gp(const grammar::KernelExpr& expr, const Dataset& data, const FitBudget& budget,
                std::uint64_t seed) {
  const auto schema = expr.schema();
  const int kdim = static_cast<int>(schema.size());
  const int dim = kdim + 2;  // theta ++ {scale, noise}

  // Search in log space so multiplicative parameters get even coverage.
  optim::Bounds box;
  box.lo.resize(dim);
  box.hi.resize(dim);
  for (int i = 0; i < kdim; ++i) {
    box.lo[i] = std::log(schema[static_cast<std::size_t>(i)].low);
    box.hi[i] = std::log(schema[static_cast<std::size_t>(i)].high);
  }
  box.lo[kdim] = std::log(kScaleLow);
  box.hi[kdim] = std::log(kScaleHigh);
  box.lo[kdim + 1] = std::log(kNoiseLow);
  box.hi[kdim + 1] = std::log(kNoiseHigh);

  const auto unpack = [kdim](const Eigen::VectorXd& z, Eigen::VectorXd& theta, double& scale,
                             double& noise) {
    theta = z.head(kdim).array().exp();
    scale = std::exp(z[kdim]);
    noise = std::exp(z[kdim + 1]);
  };

  const Eigen::MatrixXd dist = grammar::pairwise_distances(data.X);
  const auto objective = [&](const Eigen::VectorXd& z) -> double {
    Eigen::VectorXd theta;
    double scale = 0.0;
    double noise = 0.0;
    unpack(z, theta, scale, noise);
    try {
      Eigen::MatrixXd C = scale * grammar::eval_covariance_from_dist(expr, theta, dist);
      C.diagonal().array() += noise;
      Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(C, nullptr, expr.canonical_string());
      const Eigen::VectorXd alpha = llt.solve(data.y);
      const double log_det =
          2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
      return 0.5 * data.y.dot(alpha) + 0.5 * log_det +
             0.5 * static_cast<double>(data.n()) * kLog2Pi;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Eigen::MatrixXd starts(budget.restarts + 1, dim);
  starts.topRows(budget.restarts) = optim::sobol_starts(box, budget.restarts, seed);
  // One extra deterministic start at the box midpoint keeps small budgets sane.
  starts.row(budget.restarts) = 0.5 * (box.lo + box.hi);

  const optim::Result best = optim::multi_start_minimize(objective, box, starts, budget.max_evals);
  if (!std::isfinite(best.value)) {
    throw FitError("all " + std::to_string(starts.rows()) + " restarts failed for " +
                   expr.canonical_string());
  }

  FittedGP out;
  out.expr = expr;
  unpack(best.x, out.theta, out.scale, out.noise);
  LmlParts parts = lml_with_factors(expr, out.theta, out.scale, out.noise, data);
  out.lml = parts.lml;
  out.jitter = parts.jitter;
  out.L = std::move(parts.L);
  out.alpha = std::move(parts.alpha);
  out.X_train = data.X;
  out.y_train = data.y;
  return out;
}

PredictResult posterior_predict(const FittedGP& model, const Eigen::MatrixXd& Xstar) {
  if (Xstar.cols() != model.X_train.cols()) {
    throw std::invalid_argument("posterior_predict: query dimension mismatch");
  }
  const Eigen::MatrixXd Ks =
      model.scale * grammar::eval_cross_covariance(model.expr, model.theta, Xstar, model.X_train);

  PredictResult out;
  out.mean = Ks * model.alpha;

  // v = L^{-1} Ks^T; var = prior diagonal minus column norms of v. The prior
  // k(x,x) is constant over x (each base is 1 at r = 0, sums add, products
  // multiply), so evaluate the expression once at r = 0.
  const Eigen::MatrixXd v = model.L.triangularView<Eigen::Lower>().solve(Ks.transpose());
  const auto m = Xstar.rows();
  out.var.resize(m);
  const double prior_diag =
      model.scale * grammar::eval_kernel_value(model.expr, model.theta, 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    double var = prior_diag - v.col(i).squaredNorm();
    if (var < 0.0) {
      var = 0.0;
      ++out.clamped;
    }
    out.var[i] = var;
  }
  return out;
}

std::string FittedGP::to_json() const {
  auto mat = [](const Eigen::MatrixXd& M) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(M.rows()),
                                          std::vector<double>(static_cast<std::size_t>(M.cols())));
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = M(r, c);
    return rows;
  };
  nlohmann::json j;
  j["expr"] = expr.canonical_string();
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  j["scale"] = scale;
  j["noise"] = noise;
  j["lml"] = lml;
  j["jitter"] = jitter;
  j["L"] = mat(L);
  j["X_train"] = mat(X_train);
  j["y_train"] = std::vector<double>(y_train.data(), y_train.data() + y_train.size());
  j["alpha"] = std::vector<double>(alpha.data(), alpha.data() + alpha.size());
  return j.dump(2);
}

FittedGP FittedGP::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  FittedGP out;
  out.expr = grammar::parse_expr(j.at("expr").get<std::string>());
  const auto th = j.at("theta").get<std::vector<double>>();
  out.theta = Eigen::Map<const Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
  out.scale = j.at("scale").get<double>();
  out.noise = j.at("noise").get<double>();
  out.lml = j.at("lml").get<double>();
  out.jitter = j.value("jitter", 0.0);
  auto mat = [](const nlohmann::json& v) {
    const auto rows = v.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return M;
  };
  out.L = mat(j.at("L"));
  out.X_train = mat(j.at("X_train"));
  const auto yv = j.at("y_train").get<std::vector<double>>();
  out.y_train = Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  const auto av = j.at("alpha").get<std::vector<double>>();
  out.alpha = Eigen::Map<const Eigen::VectorXd>(av.data(), static_cast<Eigen::Index>(av.size()));
  return out;
}

}  // namespace km::gp
