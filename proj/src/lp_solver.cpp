#include "gridstress/lp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Cholesky>

namespace gridstress {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct StandardForm {
    MatrixXd a;   // m x n_struct, all inequality rows (bounds appended)
    VectorXd b;   // m
    VectorXd c;   // n_struct
    int n_orig = 0;   // caller variables
    int m_orig = 0;   // caller rows
    std::vector<int> bound_row_var; // appended row -> variable index
};

// Append finite upper bounds as explicit rows; the IPM then only sees
// { min c'z : Az <= b, z >= 0 }.
StandardForm make_standard(const LpProblem& p) {
    const int n = static_cast<int>(p.c.size());
    const int m0 = static_cast<int>(p.b.size());
    StandardForm sf;
    sf.n_orig = n;
    sf.m_orig = m0;
    int extra = 0;
    for (int j = 0; j < n; ++j)
        if (std::isfinite(p.upper[j])) ++extra;
    sf.a = MatrixXd::Zero(m0 + extra, n);
    sf.a.topRows(m0) = p.A;
    sf.b.resize(m0 + extra);
    sf.b.head(m0) = p.b;
    int r = m0;
    for (int j = 0; j < n; ++j) {
        if (std::isfinite(p.upper[j])) {
            sf.a(r, j) = 1.0;
            sf.b[r] = p.upper[j];
            sf.bound_row_var.push_back(j);
            ++r;
        }
    }
    sf.c = p.c;
    return sf;
}

struct IpmResult {
    VectorXd x;   // structural variables
    VectorXd y;   // row duals of the slack-extended equality form (<= 0 at optimum)
    VectorXd sx;  // dual slacks on structural variables
    double pinf = 1.0;
    double dinf = 1.0;
    double rel_gap = 1.0;
    int iterations = 0;
    bool optimal = false;
};

// Mehrotra predictor-corrector on min c'x, Ax + w = b, x >= 0, w >= 0.
IpmResult mehrotra(const StandardForm& sf) {
    const int m = static_cast<int>(sf.b.size());
    const int n = static_cast<int>(sf.c.size());
    const int nt = n + m; // structural + row slacks

    // extended data: abar = [A I], cbar = [c; 0]
    const MatrixXd& a = sf.a;
    VectorXd cbar = VectorXd::Zero(nt);
    cbar.head(n) = sf.c;

    auto mul_abar = [&](const VectorXd& v) -> VectorXd {
        return a * v.head(n) + v.tail(m);
    };
    auto mul_abar_t = [&](const VectorXd& v) -> VectorXd {
        VectorXd out(nt);
        out.head(n) = a.transpose() * v;
        out.tail(m) = v;
        return out;
    };

    // starting point (least-squares heuristic, shifted into the positive orthant)
    MatrixXd aat = a * a.transpose() + MatrixXd::Identity(m, m);
    Eigen::LLT<MatrixXd> aat_llt(aat);
    VectorXd x = mul_abar_t(aat_llt.solve(sf.b));
    VectorXd y = aat_llt.solve(mul_abar(cbar));
    VectorXd s = cbar - mul_abar_t(y);
    {
        const double dx = std::max(-1.5 * x.minCoeff(), 0.0);
        const double ds = std::max(-1.5 * s.minCoeff(), 0.0);
        x.array() += dx;
        s.array() += ds;
        const double xs = x.dot(s);
        x.array() += 0.5 * xs / std::max(s.sum(), 1e-30);
        s.array() += 0.5 * xs / std::max(x.sum(), 1e-30);
        const double floor = 1.0 + std::max(sf.b.cwiseAbs().maxCoeff(),
                                            cbar.cwiseAbs().maxCoeff());
        x = x.cwiseMax(1e-4 * floor);
        s = s.cwiseMax(1e-4 * floor);
    }

    const double bnorm = 1.0 + sf.b.cwiseAbs().maxCoeff();
    const double cnorm = 1.0 + cbar.cwiseAbs().maxCoeff();

    IpmResult best;
    best.pinf = best.dinf = best.rel_gap = std::numeric_limits<double>::infinity();
    double best_score = std::numeric_limits<double>::infinity();

    auto record = [&](const VectorXd& xx, const VectorXd& yy, const VectorXd& ss, int it) {
        const double pinf = (mul_abar(xx) - sf.b).cwiseAbs().maxCoeff() / bnorm;
        const double dinf = (mul_abar_t(yy) + ss - cbar).cwiseAbs().maxCoeff() / cnorm;
        const double pobj = cbar.dot(xx);
        const double dobj = sf.b.dot(yy);
        const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
        const double score = std::max({pinf, dinf, gap});
        if (score < best_score) {
            best_score = score;
            best.x = xx.head(n);
            best.y = yy;
            best.sx = ss.head(n);
            best.pinf = pinf;
            best.dinf = dinf;
            best.rel_gap = gap;
            best.iterations = it;
        }
        return std::max(pinf, dinf) <= 1e-10 && gap <= 1e-9;
    };

    auto max_step = [](const VectorXd& v, const VectorXd& dv) {
        double alpha = 1.0;
        for (int i = 0; i < v.size(); ++i)
            if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
        return alpha;
    };

    const int max_iters = 200;
    double mu = x.dot(s) / nt;
    int stall = 0;
    double last_mu = mu;

    for (int iter = 0; iter < max_iters; ++iter) {
        if (record(x, y, s, iter)) {
            best.optimal = true;
            return best;
        }

        VectorXd rb = mul_abar(x) - sf.b;
        VectorXd rc = mul_abar_t(y) + s - cbar;
        mu = x.dot(s) / nt;
        if (mu < 1e-16 && best_score > 1e-6) break; // wedged against the boundary

        // normal matrix  A D^2 A' with D^2 = x/s (split into structural and slack parts)
        VectorXd d2 = x.cwiseQuotient(s);
        MatrixXd normal = a * d2.head(n).asDiagonal() * a.transpose();
        normal.diagonal() += d2.tail(m);
        Eigen::LLT<MatrixXd> llt(normal);
        double reg = 1e-14 * (1.0 + normal.trace() / m);
        while (llt.info() != Eigen::Success && reg < 1e6) {
            MatrixXd regd = normal;
            regd.diagonal().array() += reg;
            llt.compute(regd);
            reg *= 100.0;
        }
        if (llt.info() != Eigen::Success) break;

        auto newton = [&](const VectorXd& v, VectorXd& dx, VectorXd& dy, VectorXd& ds) {
            VectorXd t = s.cwiseInverse().cwiseProduct(v) + d2.cwiseProduct(rc);
            dy = llt.solve(-rb - mul_abar(t));
            ds = -rc - mul_abar_t(dy);
            dx = s.cwiseInverse().cwiseProduct(v) - d2.cwiseProduct(ds);
        };

        // predictor
        VectorXd dx_aff, dy_aff, ds_aff;
        newton(-x.cwiseProduct(s), dx_aff, dy_aff, ds_aff);
        const double ap_aff = max_step(x, dx_aff);
        const double ad_aff = max_step(s, ds_aff);
        const double mu_aff =
            (x + ap_aff * dx_aff).dot(s + ad_aff * ds_aff) / nt;
        double sigma = std::pow(mu_aff / mu, 3.0);
        sigma = std::clamp(sigma, 1e-8, 1.0);

        // corrector
        VectorXd v = -x.cwiseProduct(s) - dx_aff.cwiseProduct(ds_aff);
        v.array() += sigma * mu;
        VectorXd dx, dy, ds;
        newton(v, dx, dy, ds);

        const double tau = (mu > 1e-8) ? 0.9995 : 0.99999995;
        const double ap = std::min(1.0, tau * max_step(x, dx));
        const double ad = std::min(1.0, tau * max_step(s, ds));
        x += ap * dx;
        y += ad * dy;
        s += ad * ds;

        if (mu > 0.9 * last_mu) {
            if (++stall > 30) break;
        } else {
            stall = 0;
        }
        last_mu = mu;
    }
    record(x, y, s, max_iters);
    best.optimal = std::max(best.pinf, best.dinf) <= 1e-8 && best.rel_gap <= 1e-8;
    return best;
}

// min 1'e s.t. Az - e <= b: always feasible; optimum > 0 certifies
// infeasibility and the positive e rows name the violated combination.
void certify_infeasible(const LpProblem& p) {
    const int n = static_cast<int>(p.c.size());
    const int m0 = static_cast<int>(p.b.size());
    LpProblem el;
    el.A = MatrixXd::Zero(m0, n + m0);
    el.A.leftCols(n) = p.A;
    el.A.rightCols(m0) = -MatrixXd::Identity(m0, m0);
    el.b = p.b;
    el.c = VectorXd::Zero(n + m0);
    el.c.tail(m0).setOnes();
    el.upper = VectorXd::Constant(n + m0, LpProblem::inf);
    el.upper.head(n) = p.upper;
    // elastic variables need a ceiling so every face stays bounded
    double upper_scale = 1.0;
    for (int j = 0; j < n; ++j)
        if (std::isfinite(p.upper[j])) upper_scale = std::max(upper_scale, std::abs(p.upper[j]));
    const double ceil = 10.0 * (1.0 + p.b.cwiseAbs().maxCoeff()) +
                        10.0 * p.A.cwiseAbs().rowwise().sum().maxCoeff() * (1.0 + upper_scale);
    for (int j = 0; j < n; ++j)
        if (!std::isfinite(el.upper[j])) el.upper[j] = ceil;
    el.upper.tail(m0).setConstant(ceil);

    StandardForm sf = make_standard(el);
    IpmResult r = mehrotra(sf);
    if (!r.optimal)
        throw InternalError("LP solver failed on the feasibility certification problem");
    const double viol = el.c.dot(r.x);
    if (viol <= 1e-7 * (1.0 + p.b.cwiseAbs().maxCoeff()))
        throw InternalError("LP solver failed to converge on a feasible problem");

    std::ostringstream os;
    os << "infeasible linear program; total constraint violation " << viol
       << "; violated rows:";
    for (int i = 0; i < m0; ++i)
        if (r.x[n + i] > 1e-7 * (1.0 + std::abs(p.b[i]))) os << ' ' << i;
    throw Infeasible(os.str());
}

} // namespace

namespace {

// a variable with zero upper bound is identically 0: drop its column so the
// interior-point iteration keeps a nonempty strict interior
LpSolution solve_reduced(const LpProblem& p, const std::vector<int>& kept) {
    LpProblem red;
    const int nk = static_cast<int>(kept.size());
    red.A.resize(p.b.size(), nk);
    red.c.resize(nk);
    red.upper.resize(nk);
    for (int k = 0; k < nk; ++k) {
        red.A.col(k) = p.A.col(kept[k]);
        red.c[k] = p.c[kept[k]];
        red.upper[k] = p.upper[kept[k]];
    }
    red.b = p.b;
    LpSolution inner = solve_lp(red);

    LpSolution sol;
    const int n = static_cast<int>(p.c.size());
    sol.z = VectorXd::Zero(n);
    sol.reduced_costs = VectorXd::Zero(n);
    sol.bound_duals = VectorXd::Zero(n);
    for (int k = 0; k < nk; ++k) {
        sol.z[kept[k]] = inner.z[k];
        sol.reduced_costs[kept[k]] = inner.reduced_costs[k];
        sol.bound_duals[kept[k]] = inner.bound_duals[k];
    }
    sol.row_duals = inner.row_duals;
    // stationarity on the fixed coordinates: split the residual between the
    // two (degenerate) bound multipliers
    for (int j = 0; j < n; ++j) {
        if (p.upper[j] != 0.0) continue;
        const double resid = p.c[j] + p.A.col(j).dot(sol.row_duals);
        sol.reduced_costs[j] = std::max(0.0, resid);
        sol.bound_duals[j] = std::max(0.0, -resid);
    }
    sol.cost = inner.cost;
    sol.dual_cost = inner.dual_cost;
    sol.kkt_primal = inner.kkt_primal;
    sol.kkt_dual = inner.kkt_dual;
    sol.kkt_comp = inner.kkt_comp;
    sol.rel_gap = inner.rel_gap;
    sol.iterations = inner.iterations;
    return sol;
}

} // namespace

LpSolution solve_lp(const LpProblem& p) {
    const int n = static_cast<int>(p.c.size());
    const int m0 = static_cast<int>(p.b.size());
    if (p.A.rows() != m0 || p.A.cols() != n || p.upper.size() != n)
        throw InternalError("solve_lp: inconsistent problem dimensions");
    for (int j = 0; j < n; ++j)
        if (!(p.upper[j] >= 0.0)) throw InternalError("solve_lp: negative upper bound");

    std::vector<int> kept;
    for (int j = 0; j < n; ++j)
        if (p.upper[j] != 0.0) kept.push_back(j);
    if (static_cast<int>(kept.size()) < n) return solve_reduced(p, kept);

    StandardForm sf = make_standard(p);
    IpmResult r = mehrotra(sf);
    if (!r.optimal) certify_infeasible(p); // throws Infeasible or InternalError

    LpSolution sol;
    sol.z = r.x;
    sol.iterations = r.iterations;
    sol.rel_gap = r.rel_gap;

    // map equality-form duals back to the natural inequality convention
    sol.row_duals = (-r.y.head(m0)).cwiseMax(0.0);
    sol.bound_duals = VectorXd::Zero(n);
    for (size_t k = 0; k < sf.bound_row_var.size(); ++k)
        sol.bound_duals[sf.bound_row_var[k]] = std::max(0.0, -r.y[m0 + static_cast<int>(k)]);
    sol.reduced_costs = r.sx.cwiseMax(0.0);

    sol.cost = p.c.dot(sol.z);
    sol.dual_cost = -p.b.dot(sol.row_duals);
    for (int j = 0; j < n; ++j)
        if (std::isfinite(p.upper[j])) sol.dual_cost -= p.upper[j] * sol.bound_duals[j];

    // KKT residuals in the natural form
    VectorXd slack = p.b - p.A * sol.z;
    double kp = std::max(0.0, -slack.minCoeff());
    for (int j = 0; j < n; ++j) {
        kp = std::max(kp, -sol.z[j]);
        if (std::isfinite(p.upper[j])) kp = std::max(kp, sol.z[j] - p.upper[j]);
    }
    sol.kkt_primal = kp;

    VectorXd stat = p.c + p.A.transpose() * sol.row_duals + sol.bound_duals - sol.reduced_costs;
    sol.kkt_dual = stat.cwiseAbs().maxCoeff();

    double kc = 0.0;
    for (int i = 0; i < m0; ++i) kc = std::max(kc, std::abs(sol.row_duals[i] * slack[i]));
    for (int j = 0; j < n; ++j) {
        kc = std::max(kc, std::abs(sol.reduced_costs[j] * sol.z[j]));
        if (std::isfinite(p.upper[j]))
            kc = std::max(kc, std::abs(sol.bound_duals[j] * (p.upper[j] - sol.z[j])));
    }
    sol.kkt_comp = kc;
    return sol;
}

} // namespace gridstress
