#include "km/surrogate.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "km/errors.hpp"
#include "km/optim.hpp"

namespace km::surrogate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - m).exp();
  return w / w.sum();
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double sigma_sq,
                              const Eigen::VectorXd& weights, const Eigen::VectorXd& lengthscales) {
  Eigen::MatrixXd d2 = (-2.0 * A * B.transpose());
  d2.colwise() += A.rowwise().squaredNorm();
  d2.rowwise() += B.rowwise().squaredNorm().transpose();
  d2 = d2.cwiseMax(0.0);

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(A.rows(), B.rows());
  for (Eigen::Index m = 0; m < weights.size(); ++m) {
    const double inv = -0.5 / (lengthscales[m] * lengthscales[m]);
    K += weights[m] * (d2.array() * inv).exp().matrix();
  }
  return sigma_sq * K;
}

struct Layout {
  int components = 1;
  bool has_logits = false;
  [[nodiscard]] int dim() const { return 1 + (has_logits ? components : 0) + components + 1; }
};

void unpack(const Layout& layout, const Eigen::VectorXd& x, double& sigma_sq,
            Eigen::VectorXd& weights, Eigen::VectorXd& lengthscales, double& noise) {
  int at = 0;
  sigma_sq = std::exp(x[at++]);
  if (layout.has_logits) {
    weights = softmax(x.segment(at, layout.components));
    at += layout.components;
  } else {
    weights = Eigen::VectorXd::Ones(1);
  }
  lengthscales = x.segment(at, layout.components).array().exp();
  at += layout.components;
  noise = std::exp(x[at]);
}

double negative_lml(const Eigen::MatrixXd& coords, const Eigen::VectorXd& y, double sigma_sq,
                    const Eigen::VectorXd& weights, const Eigen::VectorXd& lengthscales,
                    double noise, Eigen::MatrixXd* L_out, Eigen::VectorXd* alpha_out) {
  Eigen::MatrixXd C = kernel_matrix(coords, coords, sigma_sq, weights, lengthscales);
  C.diagonal().array() += noise;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    return std::numeric_limits<double>::infinity();
  }
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd alpha = llt.solve(y);
  const double n = static_cast<double>(y.size());
  const double value =
      0.5 * y.dot(alpha) + L.diagonal().array().log().sum() + 0.5 * n * kLog2Pi;
  if (!std::isfinite(value)) return std::numeric_limits<double>::infinity();
  if (L_out != nullptr) *L_out = L;
  if (alpha_out != nullptr) *alpha_out = alpha;
  return value;
}

}  // namespace

const char* kind_name(Kind k) { return k == Kind::rbf ? "rbf" : "multiscale"; }

Kind kind_from_name(const std::string& name) {
  if (name == "rbf") return Kind::rbf;
  if (name == "multiscale") return Kind::multiscale;
  throw std::invalid_argument("unknown surrogate kind '" + name + "'");
}

double Model::best_observed() const {
  if (y_std.size() == 0) return 0.0;
  return y_std.maxCoeff();
}

Eigen::VectorXd Model::best_coordinate() const {
  Eigen::Index best = 0;
  if (y_std.size() > 0) y_std.maxCoeff(&best);
  return coords.row(best);
}

Model fit_surrogate(const Config& config, const Eigen::MatrixXd& coords,
                    const Eigen::VectorXd& lmls, std::uint64_t seed) {
  if (coords.rows() != lmls.size()) {
    throw std::invalid_argument("fit_surrogate: coords/values length mismatch");
  }
  if (coords.rows() < 2) throw std::invalid_argument("fit_surrogate: need at least 2 observations");
  if (config.components < 1) throw std::invalid_argument("fit_surrogate: M must be >= 1");

  Model model;
  model.config = config;
  model.coords = coords;
  model.y_mean = lmls.mean();
  const double var = (lmls.array() - model.y_mean).square().sum() /
                     static_cast<double>(lmls.size());
  model.y_sd = std::sqrt(var);

  const int M = config.effective_components();

  if (!(model.y_sd > 0.0)) {
    // All observations equal: fall back to the prior-variance surrogate
    // (zero mean, unit prior variance on the standardized scale).
    model.y_sd = 1.0;
    model.y_std = Eigen::VectorXd::Zero(lmls.size());
    model.degenerate = true;
    model.sigma_sq = 1.0;
    model.weights = Eigen::VectorXd::Constant(M, 1.0 / static_cast<double>(M));
    model.lengthscales = Eigen::VectorXd::Ones(M);
    model.noise = config.noise_low;
    return model;
  }

  model.y_std = (lmls.array() - model.y_mean) / model.y_sd;

  Layout layout;
  layout.components = M;
  layout.has_logits = M > 1;

  optim::Bounds box;
  box.lo.resize(layout.dim());
  box.hi.resize(layout.dim());
  int at = 0;
  box.lo[at] = std::log(config.sigma_sq_low);
  box.hi[at] = std::log(config.sigma_sq_high);
  ++at;
  if (layout.has_logits) {
    for (int m = 0; m < M; ++m, ++at) {
      box.lo[at] = config.logit_low;
      box.hi[at] = config.logit_high;
    }
  }
  for (int m = 0; m < M; ++m, ++at) {
    box.lo[at] = std::log(config.lengthscale_low);
    box.hi[at] = std::log(config.lengthscale_high);
  }
  box.lo[at] = std::log(config.noise_low);
  box.hi[at] = std::log(config.noise_high);

  const auto objective = [&](const Eigen::VectorXd& x) -> double {
    double sigma_sq = 0.0;
    double noise = 0.0;
    Eigen::VectorXd weights;
    Eigen::VectorXd lengthscales;
    unpack(layout, x, sigma_sq, weights, lengthscales, noise);
    return negative_lml(coords, model.y_std, sigma_sq, weights, lengthscales, noise, nullptr,
                        nullptr);
  };

  Eigen::MatrixXd starts(9, layout.dim());
  starts.topRows(8) = optim::sobol_starts(box, 8, seed);
  starts.row(8) = 0.5 * (box.lo + box.hi);

  const optim::Result best = optim::multi_start_minimize(objective, box, starts, 200);
  if (!std::isfinite(best.value)) {
    throw FitError("surrogate fit failed in every restart");
  }

  unpack(layout, best.x, model.sigma_sq, model.weights, model.lengthscales, model.noise);
  const double neg = negative_lml(coords, model.y_std, model.sigma_sq, model.weights,
                                  model.lengthscales, model.noise, &model.L, &model.alpha);
  model.lml = -neg;
  return model;
}

Prediction predict(const Model& model, const Eigen::VectorXd& z) {
  Prediction out;
  const double prior_var = model.sigma_sq * model.weights.sum();
  if (model.degenerate || model.alpha.size() == 0) {
    out.mean = 0.0;
    out.sigma = std::sqrt(prior_var);
    return out;
  }
  const Eigen::MatrixXd Ks = kernel_matrix(z.transpose(), model.coords, model.sigma_sq,
                                           model.weights, model.lengthscales);
  out.mean = (Ks * model.alpha)(0);
  const Eigen::VectorXd v = model.L.triangularView<Eigen::Lower>().solve(Ks.transpose());
  const double var = prior_var - v.squaredNorm();
  out.sigma = var > 0.0 ? std::sqrt(var) : 0.0;
  return out;
}

double expected_improvement(const Model& model, const Eigen::VectorXd& z, double best) {
  const Prediction pred = predict(model, z);
  const double improvement = pred.mean - best;
  if (pred.sigma <= 1e-12) return std::max(improvement, 0.0);
  const double u = improvement / pred.sigma;
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * 3.14159265358979323846);
  const double cdf = 0.5 * std::erfc(-u / std::sqrt(2.0));
  const double ei = improvement * cdf + pred.sigma * pdf;
  return ei > 0.0 ? ei : 0.0;
}

}  // namespace km::surrogate
