#pragma once

#include <Eigen/Core>

namespace km::quadform {

/// E[log(1 + exp(c + sum_i a_i w_i^2))] for w_i iid standard normal,
/// evaluated by a characteristic-function quadrature:
///   softplus(t) = t/2 + log(2 cosh(t/2)) and, for Delta = c + sum a_i w_i^2,
///   E[log(2 cosh(Delta/2))] = (1/pi) \int_0^inf [1/u^2
///       - pi Re phi(u) / (u sinh(pi u))] du
/// with phi the characteristic function of Delta. The integrand is evaluated
/// in a cancellation-free form and integrated adaptively on [0, U]; the tail
/// beyond U contributes 1/(pi U) + O(exp(-pi U)).
/// Absolute accuracy is ~1e-10 relative to the integral scale.
[[nodiscard]] double expected_softplus(double c, const Eigen::VectorXd& a);

/// Jensen–Shannon divergence between zero-mean Gaussians N(0, Lp Lp^T) and
/// N(0, Lq Lq^T), deterministic to ~1e-8:
///   JS = log 2 - 1/2 E_p[softplus(log q - log p)]
///              - 1/2 E_q[softplus(log p - log q)],
/// where each log-ratio is a Gaussian quadratic form diagonalized through the
/// eigenvalues of (Lq^{-1} Lp)^T (Lq^{-1} Lp). Clamped to [0, log 2]; when
/// `clamped` is non-null it reports whether clamping fired.
[[nodiscard]] double js_gaussian(const Eigen::MatrixXd& L_p, const Eigen::MatrixXd& L_q,
                                 bool* clamped = nullptr);

}  // namespace km::quadform
