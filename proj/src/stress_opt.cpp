#include "gridstress/stress_opt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gridstress {

namespace {

constexpr double kBindTol = 1e-8;
constexpr double kSupportRelTol = 1e-6;

std::vector<int> extract_support(const VectorXd& q) {
    const double thresh = kSupportRelTol * std::max(1.0, q.cwiseAbs().maxCoeff());
    std::vector<int> support;
    for (int i = 0; i < q.size(); ++i)
        if (std::abs(q[i]) > thresh) support.push_back(i);
    return support;
}

// A valid ceiling for the epigraph variable: the stress of any point in the box.
double t_ceiling(const StressProblem& p) {
    VectorXd cap = p.q_min.cwiseAbs().cwiseMax(p.q_max.cwiseAbs());
    return (p.qcrit_inv * p.q_load).cwiseAbs().maxCoeff() +
           (p.qcrit_inv.cwiseAbs() * cap).maxCoeff() + 1.0;
}

void fill_diagnostics(StressSolution& sol, const LpSolution& lp) {
    sol.kkt_primal = lp.kkt_primal;
    sol.kkt_dual = lp.kkt_dual;
    sol.kkt_comp = lp.kkt_comp;
    sol.rel_gap = lp.rel_gap;
    sol.lp_cost = lp.cost;
    sol.lp_dual_cost = lp.dual_cost;
}

void label_active_set(const StressProblem& p, StressSolution& sol) {
    const VectorXd stress = p.qcrit_inv * (p.q_load + sol.q_opt);
    const VectorXd sec = -(p.qcrit_inv * sol.q_opt);
    const double t = sol.cost;
    auto tol = [](double scale) { return kBindTol * std::max(1.0, std::abs(scale)); };
    for (int i = 0; i < stress.size(); ++i) {
        if (std::abs(stress[i] - t) <= tol(t)) sol.active_set.push_back("stress_upper[" + std::to_string(i) + "]");
        if (std::abs(stress[i] + t) <= tol(t)) sol.active_set.push_back("stress_lower[" + std::to_string(i) + "]");
        if (std::abs(sec[i] - p.xi_max[i]) <= tol(p.xi_max[i]))
            sol.active_set.push_back("secure_upper[" + std::to_string(i) + "]");
        if (std::abs(sec[i] - p.xi_min[i]) <= tol(p.xi_min[i]))
            sol.active_set.push_back("secure_lower[" + std::to_string(i) + "]");
        if (std::abs(sol.q_opt[i] - p.q_max[i]) <= tol(p.q_max[i]) && p.q_max[i] != p.q_min[i])
            sol.active_set.push_back("cap_max[" + std::to_string(i) + "]");
        if (std::abs(sol.q_opt[i] - p.q_min[i]) <= tol(p.q_min[i]) && p.q_max[i] != p.q_min[i])
            sol.active_set.push_back("cap_min[" + std::to_string(i) + "]");
    }
}

// Epigraph LP over the free coordinates, variables [qt; t] with q = q_min + qt.
StressSolution stress_lp_impl(const StressProblem& p, const VectorXd& q_min,
                              const VectorXd& q_max) {
    const int n = static_cast<int>(p.q_load.size());
    std::vector<int> free;
    for (int j = 0; j < n; ++j)
        if (q_max[j] - q_min[j] > 0.0) free.push_back(j);
    const int nf = static_cast<int>(free.size());

    const MatrixXd& m_inv = p.qcrit_inv;
    MatrixXd m_free(n, nf);
    for (int k = 0; k < nf; ++k) m_free.col(k) = m_inv.col(free[k]);

    const VectorXd offset = q_min; // fixed coordinates sit at q_min == q_max
    const VectorXd m_base = m_inv * (p.q_load + offset);
    const VectorXd m_off = m_inv * offset;

    LpProblem lp;
    lp.A = MatrixXd::Zero(4 * n, nf + 1);
    lp.b.resize(4 * n);
    lp.A.block(0, 0, n, nf) = m_free;
    lp.A.block(0, nf, n, 1).setConstant(-1.0);
    lp.b.segment(0, n) = -m_base;
    lp.A.block(n, 0, n, nf) = -m_free;
    lp.A.block(n, nf, n, 1).setConstant(-1.0);
    lp.b.segment(n, n) = m_base;
    lp.A.block(2 * n, 0, n, nf) = -m_free;
    lp.b.segment(2 * n, n) = p.xi_max + m_off;
    lp.A.block(3 * n, 0, n, nf) = m_free;
    lp.b.segment(3 * n, n) = -p.xi_min - m_off;

    lp.c = VectorXd::Zero(nf + 1);
    lp.c[nf] = 1.0;
    lp.upper.resize(nf + 1);
    for (int k = 0; k < nf; ++k) lp.upper[k] = q_max[free[k]] - q_min[free[k]];
    lp.upper[nf] = t_ceiling(p);

    LpSolution ls = solve_lp(lp);

    StressSolution sol;
    sol.q_opt = offset;
    for (int k = 0; k < nf; ++k) sol.q_opt[free[k]] += ls.z[k];
    sol.cost = (m_inv * (p.q_load + sol.q_opt)).cwiseAbs().maxCoeff();
    sol.support = extract_support(sol.q_opt);
    fill_diagnostics(sol, ls);
    label_active_set(p, sol);
    return sol;
}

// One reweighted round: variables [q+; q-; t] over the free coordinates,
// cost t + gamma * w'(q+ + q-).
StressSolution weighted_round(const StressProblem& p, double gamma, const VectorXd& w) {
    const int n = static_cast<int>(p.q_load.size());
    std::vector<int> free;
    for (int j = 0; j < n; ++j)
        if (p.q_max[j] - p.q_min[j] > 0.0) free.push_back(j);
    const int nf = static_cast<int>(free.size());

    const MatrixXd& m_inv = p.qcrit_inv;
    MatrixXd m_free(n, nf);
    for (int k = 0; k < nf; ++k) m_free.col(k) = m_inv.col(free[k]);
    const VectorXd m_load = m_inv * p.q_load;

    LpProblem lp;
    lp.A = MatrixXd::Zero(4 * n, 2 * nf + 1);
    lp.b.resize(4 * n);
    lp.A.block(0, 0, n, nf) = m_free;
    lp.A.block(0, nf, n, nf) = -m_free;
    lp.A.block(0, 2 * nf, n, 1).setConstant(-1.0);
    lp.b.segment(0, n) = -m_load;
    lp.A.block(n, 0, n, nf) = -m_free;
    lp.A.block(n, nf, n, nf) = m_free;
    lp.A.block(n, 2 * nf, n, 1).setConstant(-1.0);
    lp.b.segment(n, n) = m_load;
    lp.A.block(2 * n, 0, n, nf) = -m_free;
    lp.A.block(2 * n, nf, n, nf) = m_free;
    lp.b.segment(2 * n, n) = p.xi_max;
    lp.A.block(3 * n, 0, n, nf) = m_free;
    lp.A.block(3 * n, nf, n, nf) = -m_free;
    lp.b.segment(3 * n, n) = -p.xi_min;

    lp.c = VectorXd::Zero(2 * nf + 1);
    for (int k = 0; k < nf; ++k) {
        lp.c[k] = gamma * w[free[k]];
        lp.c[nf + k] = gamma * w[free[k]];
    }
    lp.c[2 * nf] = 1.0;
    lp.upper.resize(2 * nf + 1);
    for (int k = 0; k < nf; ++k) {
        lp.upper[k] = std::max(p.q_max[free[k]], 0.0);
        lp.upper[nf + k] = std::max(-p.q_min[free[k]], 0.0);
    }
    lp.upper[2 * nf] = t_ceiling(p);

    LpSolution ls = solve_lp(lp);

    StressSolution sol;
    sol.q_opt = VectorXd::Zero(n);
    for (int k = 0; k < nf; ++k) sol.q_opt[free[k]] = ls.z[k] - ls.z[nf + k];
    sol.cost = (m_inv * (p.q_load + sol.q_opt)).cwiseAbs().maxCoeff();
    sol.support = extract_support(sol.q_opt);
    fill_diagnostics(sol, ls);
    label_active_set(p, sol);
    return sol;
}

} // namespace

void StressProblem::refresh_thresholds() {
    const NetworkModel& m = *model;
    const VectorXd band = v_nominal * m.v_open.cwiseInverse();
    const VectorXd corr = m.solve_qcrit(q_load);
    xi_min = 4.0 * ((1.0 - dev_alpha) * band - VectorXd::Ones(m.n_load)) + corr;
    xi_max = 4.0 * ((1.0 + dev_alpha) * band - VectorXd::Ones(m.n_load)) + corr;
    for (int i = 0; i < m.n_load; ++i) {
        if (xi_min[i] > xi_max[i]) {
            std::ostringstream os;
            os << "security band is empty at load index " << i << ": xi_min " << xi_min[i]
               << " > xi_max " << xi_max[i];
            throw InfeasibleBox(os.str());
        }
    }
}

StressProblem build_problem(const NetworkModel& model, const VectorXd& q_load,
                            const VectorXd& q_min, const VectorXd& q_max,
                            double v_nominal, double dev_alpha) {
    const int n = model.n_load;
    if (q_load.size() != n || q_min.size() != n || q_max.size() != n)
        throw DomainError("build_problem: vector sizes must match the load count");
    if (!(v_nominal > 0.0)) throw DomainError("v_nominal must be positive");
    if (!(dev_alpha >= 0.0 && dev_alpha < 1.0)) throw DomainError("dev_alpha must be in [0, 1)");
    for (int i = 0; i < n; ++i) {
        if (!(q_min[i] <= 0.0 && 0.0 <= q_max[i])) {
            std::ostringstream os;
            os << "capacity box at load index " << i << " must contain 0: [" << q_min[i]
               << ", " << q_max[i] << "]";
            throw DomainError(os.str());
        }
    }

    StressProblem p;
    p.model = &model;
    p.q_load = q_load;
    p.q_min = q_min;
    p.q_max = q_max;
    p.v_nominal = v_nominal;
    p.dev_alpha = dev_alpha;
    p.qcrit_inv = model.qcrit_inverse();
    p.refresh_thresholds();
    return p;
}

StressSolution solve_stress_lp(const StressProblem& p) {
    return stress_lp_impl(p, p.q_min, p.q_max);
}

double default_reweight_eps(const StressProblem& p) {
    // 1e-3 leaves the support counts non-monotone in gamma on the IEEE30 study
    return 1e-2 * std::max(1.0, p.q_load.cwiseAbs().maxCoeff());
}

StressSolution solve_sparse_placement(const StressProblem& p, double gamma,
                                      double reweight_eps, int max_rounds,
                                      PlacementDiagnostics* diag) {
    if (gamma < 0.0) throw DomainError("gamma must be nonnegative");
    if (!(reweight_eps > 0.0)) throw DomainError("reweight_eps must be positive");
    if (gamma == 0.0) return solve_stress_lp(p); // plain convex stress minimization

    const int n = static_cast<int>(p.q_load.size());
    VectorXd w = VectorXd::Constant(n, 1.0 / reweight_eps); // weights of q = 0
    VectorXd q_prev = VectorXd::Zero(n);
    std::vector<int> support_prev;
    StressSolution sol;
    bool have_prev = false;

    for (int round = 0; round < max_rounds; ++round) {
        sol = weighted_round(p, gamma, w);
        if (diag) {
            PlacementRound r;
            r.q = sol.q_opt;
            r.support = sol.support;
            r.lp_objective = sol.lp_cost;
            r.prev_point_objective =
                (p.qcrit_inv * (p.q_load + q_prev)).cwiseAbs().maxCoeff() +
                gamma * w.dot(q_prev.cwiseAbs());
            diag->rounds.push_back(std::move(r));
        }
        if (have_prev && sol.support == support_prev) break;
        support_prev = sol.support;
        q_prev = sol.q_opt;
        have_prev = true;
        w = (q_prev.cwiseAbs().array() + reweight_eps).inverse().matrix();
    }
    return sol;
}

StressSolution polish(const StressProblem& p, const std::vector<int>& support) {
    const int n = static_cast<int>(p.q_load.size());
    VectorXd q_min = VectorXd::Zero(n);
    VectorXd q_max = VectorXd::Zero(n);
    for (int idx : support) {
        if (idx < 0 || idx >= n) throw DomainError("polish: support index out of range");
        q_min[idx] = p.q_min[idx];
        q_max[idx] = p.q_max[idx];
    }
    return stress_lp_impl(p, q_min, q_max);
}

std::vector<GammaSweepRow> gamma_sweep(const StressProblem& p,
                                       const std::vector<double>& gammas,
                                       double reweight_eps, int max_rounds) {
    const double base_cost = (p.qcrit_inv * p.q_load).cwiseAbs().maxCoeff();
    std::vector<GammaSweepRow> rows;
    rows.reserve(gammas.size());
    for (double gamma : gammas) {
        GammaSweepRow row;
        row.gamma = gamma;
        try {
            StressSolution placed = solve_sparse_placement(p, gamma, reweight_eps, max_rounds);
            StressSolution polished = polish(p, placed.support);
            row.n_devices = static_cast<int>(placed.support.size());
            row.cost_ratio = polished.cost / base_cost;
        } catch (const Infeasible&) {
            row.feasible = false;
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<double> default_gamma_grid() {
    std::vector<double> g(40);
    for (int i = 0; i < 40; ++i) g[i] = std::pow(10.0, -5.0 + 3.0 * i / 39.0);
    return g;
}

} // namespace gridstress
