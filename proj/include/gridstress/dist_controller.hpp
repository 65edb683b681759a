#pragma once

#include <optional>
#include <vector>

#include "gridstress/power_flow.hpp"
#include "gridstress/smooth_norm.hpp"
#include "gridstress/stress_opt.hpp"

namespace gridstress {

/// Stress minimization in deviation coordinates x = -q_crit^{-1}(q_load + q):
/// box bounds on x (the security band) and on the injections recovered from x.
struct XProblem {
    const NetworkModel* model = nullptr;
    VectorXd x_min;
    VectorXd x_max;
    VectorXd q_min;
    VectorXd q_max;
    VectorXd q_load0; // loads at build time; online operation re-estimates them
    double v_nominal = 1.0;
    double dev_alpha = 0.05;

    /// chi = [x_max; -x_min], the stacked x-box right-hand side.
    VectorXd chi() const;
    /// phi = [q_max; -q_min], the stacked capacity right-hand side.
    VectorXd phi() const;
    /// A = [I; -I; -q_crit; q_crit]: rows of both stacked constraint blocks
    /// as functions of x. Feeds the step-size SVD.
    MatrixXd stacked_matrix() const;
};

XProblem build_xproblem(const NetworkModel& model, const VectorXd& q_load,
                        const VectorXd& q_min, const VectorXd& q_max,
                        double v_nominal, double dev_alpha);

/// Largest provably convergent dual-ascent step 2/L, with L = sigma_max(A)^2
/// divided by the strong-convexity modulus 2a; sigma_max from a dense SVD of
/// the stacked constraint matrix. Requires exponent_eps = 1.
double step_size_bound(const NetworkModel& model, const SmoothCfg& cfg);

/// Synchronous controller state: primal x, box multipliers lambda = [hi; lo],
/// capacity multipliers mu = [hi; lo], applied (saturated) injections q.
struct DualState {
    VectorXd x;
    VectorXd lambda; // 2n, nonnegative
    VectorXd mu;     // 2n, nonnegative
    VectorXd q;      // clamp(-(q_crit x + q_load), q_min, q_max)
    long t = 0;
};

DualState make_initial_state(const XProblem& xp);

/// Static per-agent data: the agent's q_crit row and its neighbor set
/// (nonzero row entries). Agents exist at every load bus, compensated or not.
struct AgentView {
    int agent = 0;
    std::vector<int> neighbors;      // j with q_crit(agent, j) != 0 (includes self)
    std::vector<double> qcrit_row;   // matching entries
};

std::vector<AgentView> make_agent_views(const NetworkModel& model);

/// Message-count instrumentation: reads of non-local values per round.
struct MessageCounters {
    long multiplier_reads = 0; // neighbor mu entries read while forming zeta
    long x_reads = 0;          // neighbor x entries read while forming residuals
};

/// One synchronous round of the dual-ascent feedback law:
/// exchange multipliers -> per-agent Lambert-W primal update -> exchange x ->
/// projected multiplier ascent with the measured loads.
DualState agent_round(const std::vector<AgentView>& agents, const XProblem& xp,
                      const SmoothCfg& cfg, double rho, const VectorXd& q_load,
                      const DualState& state, MessageCounters* counters = nullptr);

/// Lagrangian dual value at the state's multipliers (diagnostic).
double dual_value(const XProblem& xp, const SmoothCfg& cfg,
                  const VectorXd& q_load, const DualState& state);

struct LoadOverride {
    long t = 0;
    int bus_id = 0;
    double p_demand = 0.0; // p.u., positive = consumption; applies from round t on
    double q_demand = 0.0;
};

struct LoadSchedule {
    std::vector<LoadOverride> overrides;
};

LoadSchedule parse_schedule_csv(std::istream& in);

/// Multiplicative jump of both demands at every load bus at the given round.
LoadSchedule make_jump_schedule(const GridCase& c, const NetworkModel& m,
                                long jump_round, double factor);

enum class PlantMode { linearized, coupled };

struct TraceRound {
    long t = 0;
    VectorXd q_load;  // loads recovered from measurements
    VectorXd y;       // measured aggregate injections q_load + q
    VectorXd q;       // applied injections
    VectorXd x;       // controller primal state
    VectorXd v_plant; // plant load voltages (coupled PF or linearized map)
    double err_norm = 0.0;   // ||q - q_opt|| against the centralized LP solution
    double dual_value = 0.0;
    bool lp_feasible = true; // centralized problem feasible at current loads
};

struct ScenarioTrace {
    std::vector<TraceRound> rounds;
    std::vector<int> load_bus_ids;
    bool plant_diverged = false;
    long rounds_run = 0;
};

struct OnlineOptions {
    long trace_stride = 1;  // record every stride-th round (first/last always kept)
    bool track_err = true;  // solve the centralized LP per load regime for err_norm
};

/// Closed-loop simulation: measure y from the plant, recover the loads,
/// run one agent round, saturate and apply the new injections.
/// Coupled-plant divergence truncates the trace and sets the flag.
ScenarioTrace run_online(const GridCase& c, const NetworkModel& m, const XProblem& xp,
                         const SmoothCfg& cfg, double rho, const LoadSchedule& schedule,
                         long rounds, PlantMode mode, const OnlineOptions& opts = {});

} // namespace gridstress
