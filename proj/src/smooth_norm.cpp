#include "gridstress/smooth_norm.hpp"

#include <algorithm>
#include <cmath>

namespace gridstress {

namespace {

constexpr double kHessianSentinel = 1e300;

void check_cfg(const SmoothCfg& cfg) {
    if (!(cfg.sharpness > 0.0)) throw DomainError("sharpness must be positive");
    if (!(cfg.exponent_eps > 0.0 && cfg.exponent_eps <= 1.0))
        throw DomainError("exponent_eps must be in (0, 1]");
}

double abs_pow(double x, double p) { return std::pow(std::abs(x), p); }

} // namespace

double f_tilde(const SmoothCfg& cfg, const Eigen::VectorXd& x) {
    check_cfg(cfg);
    const double a = cfg.sharpness;
    const double e1 = 1.0 + cfg.exponent_eps;
    const int n = static_cast<int>(x.size());
    if (n == 0) return 0.0;

    // (1/a) log((1/n) sum exp(a |x_i|^{1+eps})), shifted by the max exponent
    double m = 0.0;
    for (int i = 0; i < n; ++i) m = std::max(m, a * abs_pow(x[i], e1));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::exp(a * abs_pow(x[i], e1) - m);
    return (m + std::log(acc / n)) / a;
}

double f_cost(const SmoothCfg& cfg, const Eigen::VectorXd& x) {
    check_cfg(cfg);
    const double a = cfg.sharpness;
    const double e1 = 1.0 + cfg.exponent_eps;
    double worst = 0.0;
    for (int i = 0; i < x.size(); ++i) worst = std::max(worst, a * abs_pow(x[i], e1));
    if (worst > 700.0)
        throw OverflowError("f_cost: sharpness * max|x|^{1+eps} exceeds exp range");
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += std::exp(a * abs_pow(x[i], e1));
    return acc;
}

double grad_f_scalar(const SmoothCfg& cfg, double xi) {
    const double a = cfg.sharpness;
    const double eps = cfg.exponent_eps;
    if (xi == 0.0) return 0.0;
    const double sign = xi > 0.0 ? 1.0 : -1.0;
    return a * (1.0 + eps) * std::exp(a * abs_pow(xi, 1.0 + eps)) * abs_pow(xi, eps) * sign;
}

Eigen::VectorXd grad_f(const SmoothCfg& cfg, const Eigen::VectorXd& x) {
    check_cfg(cfg);
    Eigen::VectorXd g(x.size());
    for (int i = 0; i < x.size(); ++i) g[i] = grad_f_scalar(cfg, x[i]);
    return g;
}

Eigen::VectorXd hessian_diag(const SmoothCfg& cfg, const Eigen::VectorXd& x) {
    check_cfg(cfg);
    const double a = cfg.sharpness;
    const double eps = cfg.exponent_eps;
    Eigen::VectorXd h(x.size());
    for (int i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) {
            // entry diverges for eps < 1; equals 2a in the eps = 1 limit
            h[i] = (eps < 1.0) ? kHessianSentinel : 2.0 * a;
            continue;
        }
        const double ax = std::abs(xi);
        h[i] = a * (1.0 + eps) * std::exp(a * std::pow(ax, 1.0 + eps)) *
               (eps * std::pow(ax, eps) / ax + a * (1.0 + eps) * std::pow(ax, 2.0 * eps));
    }
    return h;
}

double lambert_w0(double z) {
    constexpr double kInvE = 0.36787944117144233; // 1/e
    if (z < -kInvE) {
        if (z > -kInvE - 1e-15) z = -kInvE; // clamp roundoff at the branch point
        else throw DomainError("lambert_w0: argument below -1/e");
    }
    if (z == 0.0) return 0.0;

    double w;
    if (z < -0.25) {
        // branch-point series in p = sqrt(2(ez + 1)); radicand clamped at roundoff
        const double p = std::sqrt(std::max(0.0, 2.0 * (std::exp(1.0) * z + 1.0)));
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
        if (p < 1e-5) return w; // Halley's denominator degenerates at the branch point
    } else if (z < 0.0) {
        w = z * (1.0 - z + 1.5 * z * z); // series at 0
    } else {
        w = std::log1p(z);
    }

    // Halley iteration on w e^w - z
    for (int it = 0; it < 50; ++it) {
        const double ew = std::exp(w);
        const double f = w * ew - z;
        const double denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        if (denom == 0.0) break;
        const double dw = f / denom;
        w -= dw;
        if (std::abs(dw) <= 1e-16 * (1.0 + std::abs(w))) break;
    }
    return w;
}

double primal_update_scalar(const SmoothCfg& cfg, double zeta) {
    check_cfg(cfg);
    if (cfg.exponent_eps != 1.0)
        throw DomainError("primal_update_scalar requires exponent_eps = 1");
    if (zeta == 0.0) return 0.0;
    const double a = cfg.sharpness;
    const double w = lambert_w0(zeta * zeta / (2.0 * a));
    const double mag = std::sqrt(w / (2.0 * a));
    return zeta > 0.0 ? mag : -mag;
}

double primal_update_general(const SmoothCfg& cfg, double zeta) {
    check_cfg(cfg);
    if (zeta == 0.0) return 0.0;
    const double target = std::abs(zeta);
    const double a = cfg.sharpness;
    const double eps = cfg.exponent_eps;

    // g(x) = a(1+eps) e^{a x^{1+eps}} x^eps is strictly increasing on x >= 0
    auto g = [&](double x) {
        return a * (1.0 + eps) * std::exp(a * std::pow(x, 1.0 + eps)) * std::pow(x, eps);
    };

    double lo = 0.0;
    double hi = 1.0;
    while (g(hi) < target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e8) break;
    }

    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double gx = g(x);
        const double resid = gx - target;
        if (std::abs(resid) <= 1e-12 * std::max(1.0, target)) break;
        if (resid > 0.0) hi = x; else lo = x;
        // Newton step, kept inside the bracket
        const double e1 = 1.0 + eps;
        const double dg = a * e1 * std::exp(a * std::pow(x, e1)) *
                          (eps * std::pow(x, eps - 1.0) + a * e1 * std::pow(x, 2.0 * eps));
        double x_new = (dg > 0.0 && std::isfinite(dg)) ? x - resid / dg : 0.5 * (lo + hi);
        if (!(x_new > lo && x_new < hi)) x_new = 0.5 * (lo + hi);
        if (x_new == x) break;
        x = x_new;
    }
    return zeta > 0.0 ? x : -x;
}

double primal_update(const SmoothCfg& cfg, double zeta) {
    return cfg.exponent_eps == 1.0 ? primal_update_scalar(cfg, zeta)
                                   : primal_update_general(cfg, zeta);
}

} // namespace gridstress
