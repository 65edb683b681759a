#pragma once

#include <Eigen/Dense>

#include "gridstress/errors.hpp"

namespace gridstress {

/// Parameters of the smooth decomposable infinity-norm surrogate
///   f_tilde(x) = (1/a) log( (1/n) sum_i exp(a |x_i|^{1+eps}) ).
/// sharpness is the softmax steepness a; exponent_eps smooths |.| at zero.
/// exponent_eps = 1 admits the closed-form Lambert-W primal update and a
/// finite strong-convexity modulus 2a.
struct SmoothCfg {
    double sharpness = 50.0;
    double exponent_eps = 1.0;
};

/// Softmax of |x_i|^{1+eps}; max-shifted so a*max|x|^{1+eps} up to ~1e4 is safe.
double f_tilde(const SmoothCfg& cfg, const Eigen::VectorXd& x);

/// f = n exp(a f_tilde) = sum_i exp(a |x_i|^{1+eps}); same minimizers as f_tilde.
/// Throws OverflowError when a*max|x|^{1+eps} > 700.
double f_cost(const SmoothCfg& cfg, const Eigen::VectorXd& x);

/// Gradient; component i depends on x_i only:
///   a(1+eps) exp(a|x_i|^{1+eps}) |x_i|^eps sgn(x_i).
Eigen::VectorXd grad_f(const SmoothCfg& cfg, const Eigen::VectorXd& x);
double grad_f_scalar(const SmoothCfg& cfg, double xi);

/// Diagonal of the Hessian,
///   a(1+eps) exp(a|x_i|^{1+eps}) (eps |x_i|^eps / |x_i| + a(1+eps)|x_i|^{2eps}).
/// At x_i = 0 the entry diverges for eps < 1 (returned as the sentinel 1e300)
/// and equals exactly 2a for eps = 1.
Eigen::VectorXd hessian_diag(const SmoothCfg& cfg, const Eigen::VectorXd& x);

/// Principal branch of the Lambert W function (inverse of w exp(w)), Halley
/// iteration, relative accuracy 1e-14. Throws DomainError for z < -1/e.
double lambert_w0(double z);

/// Unique solution x of grad_f_scalar(x) = zeta for eps = 1:
///   x = sgn(zeta) sqrt(W(zeta^2 / (2a)) / (2a)).
double primal_update_scalar(const SmoothCfg& cfg, double zeta);

/// Same inverse for 0 < eps <= 1 by safeguarded Newton on the monotone
/// scalar equation; matches primal_update_scalar at eps = 1.
double primal_update_general(const SmoothCfg& cfg, double zeta);

/// Dispatch: closed form at eps = 1, numeric inverse otherwise.
double primal_update(const SmoothCfg& cfg, double zeta);

} // namespace gridstress
