#include "gridstress/power_flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace gridstress {

namespace {

constexpr double kRpfeTol = 1e-10;
constexpr int kMaxNewtonIters = 50;
constexpr int kMaxHalvings = 40;

VectorXd rpfe_residual(const NetworkModel& m, const VectorXd& v, const VectorXd& q_injected) {
    // F(v) = 4 [v] q_crit (v - 1) + q_injected
    return 4.0 * v.asDiagonal() * (m.q_crit * (v - VectorXd::Ones(m.n_load))) + q_injected;
}

} // namespace

RpfeSolution solve_rpfe(const NetworkModel& m, const VectorXd& q_injected,
                        const std::optional<VectorXd>& init) {
    const int n = m.n_load;
    RpfeSolution sol;
    VectorXd v = init ? *init : VectorXd::Ones(n);

    VectorXd f = rpfe_residual(m, v, q_injected);
    double res = f.cwiseAbs().maxCoeff();
    int iter = 0;
    while (res >= kRpfeTol && iter < kMaxNewtonIters) {
        // J = 4([v] q_crit + diag(q_crit (v - 1)))
        MatrixXd jac = 4.0 * (v.asDiagonal() * m.q_crit).eval();
        jac.diagonal() += 4.0 * (m.q_crit * (v - VectorXd::Ones(n)));
        Eigen::PartialPivLU<MatrixXd> lu(jac);
        VectorXd step = lu.solve(-f);
        if (!step.allFinite()) break;

        // half-step while the residual does not decrease
        double scale = 1.0;
        VectorXd v_new;
        VectorXd f_new;
        double res_new = res;
        bool improved = false;
        for (int h = 0; h < kMaxHalvings; ++h) {
            v_new = v + scale * step;
            f_new = rpfe_residual(m, v_new, q_injected);
            res_new = f_new.cwiseAbs().maxCoeff();
            if (std::isfinite(res_new) && res_new < res) {
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        ++iter;
        if (!improved) break;
        v = v_new;
        f = f_new;
        res = res_new;
    }

    sol.v_norm = v;
    sol.v_load = denormalize_voltages(m, v);
    sol.iterations = iter;
    sol.residual = res;
    sol.converged = res < kRpfeTol;
    return sol;
}

VectorXd linearized_voltages(const NetworkModel& m, const VectorXd& q_injected) {
    return VectorXd::Ones(m.n_load) - 0.25 * m.solve_qcrit(q_injected);
}

NoseCurve nose_curve(const NetworkModel& m, const VectorXd& direction, int steps) {
    if (direction.cwiseAbs().maxCoeff() == 0.0)
        throw DomainError("nose_curve needs a nonzero load direction");

    auto high_solve = [&](double s) { return solve_rpfe(m, s * direction); };

    // expand until the solver fails, then bisect the failure scale
    double lo = 0.0;
    double hi = 1.0;
    {
        const double margin = collapse_margin(m, direction);
        if (margin > 0.0) hi = 1.0 / margin; // solvability edge along a ray scales inversely
    }
    for (int k = 0; k < 200 && high_solve(hi).converged; ++k) {
        lo = hi;
        hi *= 2.0;
    }
    if (!high_solve(lo).converged)
        throw InternalError("nose_curve: no convergent starting scale");
    while ((hi - lo) > 1e-6 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        if (high_solve(mid).converged)
            lo = mid;
        else
            hi = mid;
    }

    NoseCurve curve;
    curve.tip_scale = 0.5 * (lo + hi);
    const double s_max = lo;
    for (int k = 0; k <= steps; ++k) {
        NosePoint pt;
        pt.scale = s_max * static_cast<double>(k) / static_cast<double>(std::max(steps, 1));
        pt.high = high_solve(pt.scale);
        if (!pt.high.converged) break;
        if (m.n_load == 1) {
            // scalar quadratic v^2 - v + s*d / (4 q_crit) = 0; low root explicit
            const double qc = m.q_crit(0, 0);
            const double disc = 0.25 - pt.scale * direction[0] / (4.0 * qc);
            if (disc >= 0.0) {
                RpfeSolution low;
                low.v_norm = VectorXd::Constant(1, 0.5 - std::sqrt(disc));
                low.v_load = denormalize_voltages(m, low.v_norm);
                low.converged = true;
                low.iterations = 0;
                low.residual =
                    rpfe_residual(m, low.v_norm, pt.scale * direction).cwiseAbs().maxCoeff();
                pt.low = low;
            }
        }
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Full coupled lossless power flow
// ---------------------------------------------------------------------------

namespace {

struct CoupledSetup {
    MatrixXd b_full;          // loads-first ordering, raw susceptances
    std::vector<int> order;   // position -> bus id
    std::map<int, int> pos;   // bus id -> position
    int n_load = 0;
    int n_gen = 0;
    int slack = 0;            // position of the slack bus
    VectorXd p_spec;          // fixed active injections (slack entry unused)
    VectorXd q_spec_load;     // fixed reactive injections at load buses
    VectorXd v_fixed_gen;     // generator voltage magnitudes
};

CoupledSetup make_setup(const GridCase& c, const NetworkModel& m, const VectorXd& q_comp) {
    CoupledSetup s;
    s.n_load = m.n_load;
    s.n_gen = m.n_gen;
    s.order = m.load_bus_ids;
    s.order.insert(s.order.end(), m.gen_bus_ids.begin(), m.gen_bus_ids.end());
    for (size_t k = 0; k < s.order.size(); ++k) s.pos[s.order[k]] = static_cast<int>(k);

    const int n = s.n_load + s.n_gen;
    s.b_full = MatrixXd::Zero(n, n);
    for (const auto& br : c.branches) {
        const double w = 1.0 / br.reactance_x;
        const int i = s.pos.at(br.from);
        const int j = s.pos.at(br.to);
        s.b_full(i, j) += w;
        s.b_full(j, i) += w;
        s.b_full(i, i) -= w;
        s.b_full(j, j) -= w;
        s.b_full(i, i) += br.charging_b / 2.0;
        s.b_full(j, j) += br.charging_b / 2.0;
    }
    for (const auto& b : c.buses) s.b_full(s.pos.at(b.id), s.pos.at(b.id)) += b.shunt_b;

    s.slack = s.n_load + 0; // lowest-id generator (gen_bus_ids ascending)

    s.p_spec = VectorXd::Zero(n);
    for (int i = 0; i < s.n_load; ++i)
        s.p_spec[i] = -c.bus_by_id(m.load_bus_ids[i]).p_demand;
    for (const auto& g : c.gens) s.p_spec[s.pos.at(g.bus)] += g.p_gen;

    s.q_spec_load = VectorXd::Zero(s.n_load);
    for (int i = 0; i < s.n_load; ++i)
        s.q_spec_load[i] = -c.bus_by_id(m.load_bus_ids[i]).q_demand + q_comp[i];

    s.v_fixed_gen = m.v_gen;
    return s;
}

// p_h = sum_k B_hk V_h V_k sin(th_h - th_k); q_h = -sum_k B_hk V_h V_k cos(th_h - th_k)
void injections(const CoupledSetup& s, const VectorXd& theta, const VectorXd& v,
                VectorXd& p, VectorXd& q) {
    const int n = static_cast<int>(s.order.size());
    p.setZero(n);
    q.setZero(n);
    for (int h = 0; h < n; ++h) {
        double ph = 0.0;
        double qh = 0.0;
        for (int k = 0; k < n; ++k) {
            const double w = s.b_full(h, k);
            if (w == 0.0) continue;
            const double d = theta[h] - theta[k];
            ph += w * v[h] * v[k] * std::sin(d);
            qh -= w * v[h] * v[k] * std::cos(d);
        }
        p[h] = ph;
        q[h] = qh;
    }
}

} // namespace

CoupledPfSolution solve_coupled_pf(const GridCase& c, const NetworkModel& m,
                                   const VectorXd& q_comp,
                                   const std::optional<CoupledPfSolution>& init) {
    const CoupledSetup s = make_setup(c, m, q_comp);
    const int n = s.n_load + s.n_gen;
    const int n_ang = n - 1; // all angles except slack
    const int n_unk = n_ang + s.n_load;

    // unknown vector: [theta (non-slack, in position order); V_L]
    std::vector<int> ang_pos;
    for (int h = 0; h < n; ++h)
        if (h != s.slack) ang_pos.push_back(h);

    VectorXd theta = VectorXd::Zero(n);
    VectorXd v(n);
    for (int i = 0; i < s.n_load; ++i) v[i] = m.v_open[i];
    for (int g = 0; g < s.n_gen; ++g) v[s.n_load + g] = s.v_fixed_gen[g];
    if (init && init->converged) {
        for (int i = 0; i < s.n_load; ++i) v[i] = init->v_load[i];
        for (int h = 0; h < n; ++h) theta[h] = init->theta[h];
    }

    VectorXd p(n), q(n);
    auto mismatch = [&](const VectorXd& th, const VectorXd& vv) {
        injections(s, th, vv, p, q);
        VectorXd f(n_unk);
        for (int a = 0; a < n_ang; ++a) f[a] = p[ang_pos[a]] - s.p_spec[ang_pos[a]];
        for (int i = 0; i < s.n_load; ++i) f[n_ang + i] = q[i] - s.q_spec_load[i];
        return f;
    };

    VectorXd f = mismatch(theta, v);
    double res = f.cwiseAbs().maxCoeff();
    int iter = 0;
    while (res >= kRpfeTol && iter < kMaxNewtonIters) {
        MatrixXd jac = MatrixXd::Zero(n_unk, n_unk);
        // rows: active mismatch at non-slack, reactive mismatch at loads
        for (int a = 0; a < n_ang; ++a) {
            const int h = ang_pos[a];
            for (int b = 0; b < n_ang; ++b) {
                const int k = ang_pos[b];
                if (h == k) {
                    double sum = 0.0;
                    for (int kk = 0; kk < n; ++kk) {
                        if (kk == h) continue;
                        sum += s.b_full(h, kk) * v[h] * v[kk] * std::cos(theta[h] - theta[kk]);
                    }
                    jac(a, b) = sum;
                } else if (s.b_full(h, k) != 0.0) {
                    jac(a, b) = -s.b_full(h, k) * v[h] * v[k] * std::cos(theta[h] - theta[k]);
                }
            }
            for (int j = 0; j < s.n_load; ++j) {
                if (h == j) {
                    jac(a, n_ang + j) = p[h] / v[h];
                } else if (s.b_full(h, j) != 0.0) {
                    jac(a, n_ang + j) = s.b_full(h, j) * v[h] * std::sin(theta[h] - theta[j]);
                }
            }
        }
        for (int i = 0; i < s.n_load; ++i) {
            for (int b = 0; b < n_ang; ++b) {
                const int k = ang_pos[b];
                if (i == k) {
                    jac(n_ang + i, b) = p[i];
                } else if (s.b_full(i, k) != 0.0) {
                    jac(n_ang + i, b) = -s.b_full(i, k) * v[i] * v[k] * std::sin(theta[i] - theta[k]);
                }
            }
            for (int j = 0; j < s.n_load; ++j) {
                if (i == j) {
                    jac(n_ang + i, n_ang + j) = q[i] / v[i] - s.b_full(i, i) * v[i];
                } else if (s.b_full(i, j) != 0.0) {
                    jac(n_ang + i, n_ang + j) = -s.b_full(i, j) * v[i] * std::cos(theta[i] - theta[j]);
                }
            }
        }

        Eigen::PartialPivLU<MatrixXd> lu(jac);
        VectorXd step = lu.solve(-f);
        if (!step.allFinite()) break;

        double scale = 1.0;
        bool improved = false;
        VectorXd theta_new = theta;
        VectorXd v_new = v;
        VectorXd f_new;
        double res_new = res;
        for (int h = 0; h < kMaxHalvings; ++h) {
            theta_new = theta;
            v_new = v;
            for (int a = 0; a < n_ang; ++a) theta_new[ang_pos[a]] += scale * step[a];
            for (int i = 0; i < s.n_load; ++i) v_new[i] += scale * step[n_ang + i];
            if (v_new.head(s.n_load).minCoeff() > 0.0) {
                f_new = mismatch(theta_new, v_new);
                res_new = f_new.cwiseAbs().maxCoeff();
                if (std::isfinite(res_new) && res_new < res) {
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        ++iter;
        if (!improved) break;
        theta = theta_new;
        v = v_new;
        f = f_new;
        res = res_new;
    }

    CoupledPfSolution sol;
    sol.theta = theta;
    sol.v_load = v.head(s.n_load);
    sol.iterations = iter;
    sol.residual = res;
    sol.converged = res < kRpfeTol;
    injections(s, theta, v, p, q);
    sol.q_gen = q.tail(s.n_gen);
    sol.q_load_balance = q.head(s.n_load);
    return sol;
}

std::vector<double> branch_angle_differences(const GridCase& c, const NetworkModel& m,
                                             const CoupledPfSolution& sol) {
    std::map<int, int> pos;
    for (int i = 0; i < m.n_load; ++i) pos[m.load_bus_ids[i]] = i;
    for (int g = 0; g < m.n_gen; ++g) pos[m.gen_bus_ids[g]] = m.n_load + g;
    std::vector<double> out;
    out.reserve(c.branches.size());
    for (const auto& br : c.branches)
        out.push_back(sol.theta[pos.at(br.from)] - sol.theta[pos.at(br.to)]);
    return out;
}

} // namespace gridstress
