#include "gridstress/dist_controller.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include <Eigen/SVD>

namespace gridstress {

VectorXd XProblem::chi() const {
    VectorXd out(2 * x_max.size());
    out << x_max, -x_min;
    return out;
}

VectorXd XProblem::phi() const {
    VectorXd out(2 * q_max.size());
    out << q_max, -q_min;
    return out;
}

MatrixXd XProblem::stacked_matrix() const {
    const int n = static_cast<int>(x_max.size());
    MatrixXd a(4 * n, n);
    a.topRows(n) = MatrixXd::Identity(n, n);
    a.middleRows(n, n) = -MatrixXd::Identity(n, n);
    a.middleRows(2 * n, n) = -model->q_crit;
    a.bottomRows(n) = model->q_crit;
    return a;
}

XProblem build_xproblem(const NetworkModel& model, const VectorXd& q_load,
                        const VectorXd& q_min, const VectorXd& q_max,
                        double v_nominal, double dev_alpha) {
    const int n = model.n_load;
    if (q_load.size() != n || q_min.size() != n || q_max.size() != n)
        throw DomainError("build_xproblem: vector sizes must match the load count");
    if (!(v_nominal > 0.0)) throw DomainError("v_nominal must be positive");
    if (!(dev_alpha >= 0.0 && dev_alpha < 1.0)) throw DomainError("dev_alpha must be in [0, 1)");
    for (int i = 0; i < n; ++i)
        if (!(q_min[i] <= 0.0 && 0.0 <= q_max[i]))
            throw DomainError("capacity box must contain 0 at load index " + std::to_string(i));

    XProblem xp;
    xp.model = &model;
    const VectorXd band = v_nominal * model.v_open.cwiseInverse();
    xp.x_min = 4.0 * ((1.0 - dev_alpha) * band - VectorXd::Ones(n));
    xp.x_max = 4.0 * ((1.0 + dev_alpha) * band - VectorXd::Ones(n));
    for (int i = 0; i < n; ++i)
        if (xp.x_min[i] > xp.x_max[i])
            throw InfeasibleBox("empty deviation band at load index " + std::to_string(i));
    xp.q_min = q_min;
    xp.q_max = q_max;
    xp.q_load0 = q_load;
    xp.v_nominal = v_nominal;
    xp.dev_alpha = dev_alpha;
    return xp;
}

double step_size_bound(const NetworkModel& model, const SmoothCfg& cfg) {
    if (cfg.exponent_eps != 1.0)
        throw DomainError("step_size_bound requires exponent_eps = 1 (finite modulus)");
    const int n = model.n_load;
    MatrixXd a(4 * n, n);
    a.topRows(n) = MatrixXd::Identity(n, n);
    a.middleRows(n, n) = -MatrixXd::Identity(n, n);
    a.middleRows(2 * n, n) = -model.q_crit;
    a.bottomRows(n) = model.q_crit;
    Eigen::JacobiSVD<MatrixXd> svd(a);
    const double sigma_max = svd.singularValues()[0];
    const double modulus = 2.0 * cfg.sharpness;     // strong convexity of the smooth cost
    const double lipschitz = sigma_max * sigma_max / modulus;
    return 2.0 / lipschitz;
}

DualState make_initial_state(const XProblem& xp) {
    const int n = static_cast<int>(xp.x_max.size());
    DualState st;
    st.x = VectorXd::Zero(n);
    st.lambda = VectorXd::Zero(2 * n);
    st.mu = VectorXd::Zero(2 * n);
    st.q = (-(xp.model->q_crit * st.x + xp.q_load0)).cwiseMax(xp.q_min).cwiseMin(xp.q_max);
    st.t = 0;
    return st;
}

std::vector<AgentView> make_agent_views(const NetworkModel& model) {
    std::vector<AgentView> views(model.n_load);
    for (int i = 0; i < model.n_load; ++i) {
        views[i].agent = i;
        for (int j = 0; j < model.n_load; ++j) {
            if (model.q_crit(i, j) != 0.0) {
                views[i].neighbors.push_back(j);
                views[i].qcrit_row.push_back(model.q_crit(i, j));
            }
        }
    }
    return views;
}

DualState agent_round(const std::vector<AgentView>& agents, const XProblem& xp,
                      const SmoothCfg& cfg, double rho, const VectorXd& q_load,
                      const DualState& state, MessageCounters* counters) {
    const int n = static_cast<int>(agents.size());
    DualState next;
    next.x.resize(n);
    next.lambda.resize(2 * n);
    next.mu.resize(2 * n);
    next.q.resize(n);
    next.t = state.t + 1;

    // first exchange: neighbors' capacity multipliers; local primal minimization
    // of the Lagrangian, zeta_i = -(lambda_i^+ - lambda_i^-) + [q_crit (mu^+ - mu^-)]_i
    for (const AgentView& ag : agents) {
        const int i = ag.agent;
        double zeta = -(state.lambda[i] - state.lambda[n + i]);
        for (size_t k = 0; k < ag.neighbors.size(); ++k) {
            const int j = ag.neighbors[k];
            zeta += ag.qcrit_row[k] * (state.mu[j] - state.mu[n + j]);
            if (counters && j != i) counters->multiplier_reads += 2;
        }
        next.x[i] = primal_update(cfg, zeta);
    }

    // second exchange: neighbors' fresh x values; projected multiplier ascent.
    // unsaturated injection q_u = -(q_crit x + q_load), from x := -q_crit^{-1}(q_load + q)
    for (const AgentView& ag : agents) {
        const int i = ag.agent;
        double qcx = 0.0;
        for (size_t k = 0; k < ag.neighbors.size(); ++k) {
            const int j = ag.neighbors[k];
            qcx += ag.qcrit_row[k] * next.x[j];
            if (counters && j != i) counters->x_reads += 1;
        }
        const double q_u = -(qcx + q_load[i]);
        next.lambda[i] = std::max(0.0, state.lambda[i] + rho * (next.x[i] - xp.x_max[i]));
        next.lambda[n + i] = std::max(0.0, state.lambda[n + i] + rho * (xp.x_min[i] - next.x[i]));
        next.mu[i] = std::max(0.0, state.mu[i] + rho * (q_u - xp.q_max[i]));
        next.mu[n + i] = std::max(0.0, state.mu[n + i] + rho * (xp.q_min[i] - q_u));
        next.q[i] = std::clamp(q_u, xp.q_min[i], xp.q_max[i]);
    }
    return next;
}

double dual_value(const XProblem& xp, const SmoothCfg& cfg, const VectorXd& q_load,
                  const DualState& state) {
    const int n = static_cast<int>(xp.x_max.size());
    const MatrixXd& qc = xp.model->q_crit;

    // primal minimizer of the Lagrangian at these multipliers
    VectorXd zeta(n);
    const VectorXd mu_diff = state.mu.head(n) - state.mu.tail(n);
    const VectorXd qc_mu = qc * mu_diff;
    for (int i = 0; i < n; ++i)
        zeta[i] = -(state.lambda[i] - state.lambda[n + i]) + qc_mu[i];
    VectorXd x_star(n);
    for (int i = 0; i < n; ++i) x_star[i] = primal_update(cfg, zeta[i]);

    const VectorXd q_u = -(qc * x_star + q_load);
    double val = f_cost(cfg, x_star);
    for (int i = 0; i < n; ++i) {
        val += state.lambda[i] * (x_star[i] - xp.x_max[i]);
        val += state.lambda[n + i] * (xp.x_min[i] - x_star[i]);
        val += state.mu[i] * (q_u[i] - xp.q_max[i]);
        val += state.mu[n + i] * (xp.q_min[i] - q_u[i]);
    }
    return val;
}

LoadSchedule parse_schedule_csv(std::istream& in) {
    LoadSchedule sched;
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (first) {
            first = false;
            if (!fields.empty() && fields[0] == "t") continue; // header
        }
        if (fields.size() != 4)
            throw MalformedCase("schedule line " + std::to_string(lineno) +
                                ": expected t,bus_id,p_demand,q_demand");
        try {
            LoadOverride ov;
            ov.t = std::stol(fields[0]);
            ov.bus_id = std::stoi(fields[1]);
            ov.p_demand = std::stod(fields[2]);
            ov.q_demand = std::stod(fields[3]);
            sched.overrides.push_back(ov);
        } catch (const std::exception&) {
            throw MalformedCase("schedule line " + std::to_string(lineno) + ": bad number");
        }
    }
    std::stable_sort(sched.overrides.begin(), sched.overrides.end(),
                     [](const LoadOverride& a, const LoadOverride& b) { return a.t < b.t; });
    return sched;
}

LoadSchedule make_jump_schedule(const GridCase& c, const NetworkModel& m,
                                long jump_round, double factor) {
    LoadSchedule sched;
    for (int id : m.load_bus_ids) {
        const BusRecord& b = c.bus_by_id(id);
        LoadOverride ov;
        ov.t = jump_round;
        ov.bus_id = id;
        ov.p_demand = b.p_demand * factor;
        ov.q_demand = b.q_demand * factor;
        sched.overrides.push_back(ov);
    }
    return sched;
}

namespace {

// plant demand bookkeeping: applies schedule overrides as rounds advance
struct Plant {
    GridCase grid;
    const NetworkModel* model;
    PlantMode mode;
    std::optional<CoupledPfSolution> warm;

    VectorXd q_load() const { return model->load_q_injections(grid); }

    void apply_overrides(const LoadSchedule& sched, long t, bool* changed) {
        for (const auto& ov : sched.overrides) {
            if (ov.t != t) continue;
            for (auto& b : grid.buses) {
                if (b.id == ov.bus_id) {
                    if (b.p_demand != ov.p_demand || b.q_demand != ov.q_demand) *changed = true;
                    b.p_demand = ov.p_demand;
                    b.q_demand = ov.q_demand;
                }
            }
        }
    }

    // measurement y = q_load + q and the plant voltages under injections q
    void measure(const VectorXd& q, VectorXd& y, VectorXd& v) {
        if (mode == PlantMode::linearized) {
            y = q_load() + q;
            const VectorXd v_norm = linearized_voltages(*model, y);
            v = denormalize_voltages(*model, v_norm);
        } else {
            CoupledPfSolution sol = solve_coupled_pf(grid, *model, q, warm);
            if (!sol.converged)
                throw PlantDiverged("coupled power flow failed to converge at residual " +
                                    std::to_string(sol.residual));
            warm = sol;
            v = sol.v_load;
            y = sol.q_load_balance; // metered aggregate: reactive balance at the loads
        }
    }
};

} // namespace

ScenarioTrace run_online(const GridCase& c, const NetworkModel& m, const XProblem& xp,
                         const SmoothCfg& cfg, double rho, const LoadSchedule& schedule,
                         long rounds, PlantMode mode, const OnlineOptions& opts) {
    ScenarioTrace trace;
    trace.load_bus_ids = m.load_bus_ids;

    Plant plant{c, &m, mode, std::nullopt};
    std::vector<AgentView> agents = make_agent_views(m);
    DualState state = make_initial_state(xp);
    state.q.setZero(); // initial row shows the uncompensated plant

    // centralized reference for the error column, refreshed on load changes
    VectorXd q_opt = VectorXd::Zero(m.n_load);
    bool lp_feasible = true;
    auto refresh_reference = [&]() {
        if (!opts.track_err) return;
        try {
            StressProblem sp = build_problem(m, plant.q_load(), xp.q_min, xp.q_max,
                                             xp.v_nominal, xp.dev_alpha);
            q_opt = solve_stress_lp(sp).q_opt;
            lp_feasible = true;
        } catch (const Infeasible&) {
            lp_feasible = false;
        }
    };

    const long stride = std::max<long>(1, opts.trace_stride);
    VectorXd y, v;
    auto record = [&](long t) {
        TraceRound r;
        r.t = t;
        r.q = state.q;
        r.x = state.x;
        r.y = y;
        r.q_load = y - state.q;
        r.v_plant = v;
        r.err_norm = (state.q - q_opt).norm();
        r.dual_value = dual_value(xp, cfg, y - state.q, state);
        r.lp_feasible = lp_feasible;
        trace.rounds.push_back(std::move(r));
    };

    // divergence watchdog: the projected-ascent residual must not grow 10x
    // over any 100-round window once past the startup transient
    auto ascent_residual = [&](const VectorXd& q_load_est) {
        const VectorXd q_u = -(m.q_crit * state.x + q_load_est);
        double r = 0.0;
        for (int i = 0; i < m.n_load; ++i) {
            r = std::max(r, std::max(0.0, state.x[i] - xp.x_max[i]));
            r = std::max(r, std::max(0.0, xp.x_min[i] - state.x[i]));
            r = std::max(r, std::max(0.0, q_u[i] - xp.q_max[i]));
            r = std::max(r, std::max(0.0, xp.q_min[i] - q_u[i]));
        }
        return r;
    };
    double watchdog_prev = -1.0;

    try {
        for (long t = 0; t <= rounds; ++t) {
            bool changed = (t == 0);
            plant.apply_overrides(schedule, t, &changed);
            if (changed) {
                refresh_reference();
                watchdog_prev = -1.0; // new load regime, new transient
            }

            plant.measure(state.q, y, v); // y(t), v(t) with q(t) applied
            if (t % stride == 0 || t == rounds) record(t);
            trace.rounds_run = t;
            if (t == rounds) break;

            const VectorXd q_load_est = y - state.q; // measurement feedback
            state = agent_round(agents, xp, cfg, rho, q_load_est, state);
            // the saturated state.q is what actuates the plant next round

            if (t % 100 == 99) {
                const double r = ascent_residual(q_load_est);
                if (watchdog_prev > 1e-6 && r > 10.0 * watchdog_prev)
                    throw Error("dual ascent diverging: constraint residual grew from " +
                                std::to_string(watchdog_prev) + " to " + std::to_string(r) +
                                " within 100 rounds (step size too large?)");
                watchdog_prev = r;
            }
        }
    } catch (const PlantDiverged&) {
        trace.plant_diverged = true;
    }
    return trace;
}

} // namespace gridstress
