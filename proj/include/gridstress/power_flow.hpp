#pragma once

#include <optional>
#include <vector>

#include "gridstress/network_model.hpp"

namespace gridstress {

struct RpfeSolution {
    VectorXd v_norm; // normalized voltages
    VectorXd v_load; // p.u. voltages, diag(v_open) * v_norm
    bool converged = false;
    int iterations = 0;
    double residual = 0.0; // inf-norm of reactive mismatch, p.u.
};

/// Newton solve of the decoupled reactive power flow
///   4 [v] q_crit (v - 1) + q_injected = 0
/// started from v = 1 (high-voltage branch) unless init is given.
/// Half-step damping; convergence at residual < 1e-10; max 50 iterations.
/// Non-convergence is reported in the flag, not thrown.
RpfeSolution solve_rpfe(const NetworkModel& m, const VectorXd& q_injected,
                        const std::optional<VectorXd>& init = std::nullopt);

/// First-order solution v_hat = 1 - (1/4) q_crit^{-1} q_injected.
VectorXd linearized_voltages(const NetworkModel& m, const VectorXd& q_injected);

struct NosePoint {
    double scale = 0.0;
    RpfeSolution high;
    std::optional<RpfeSolution> low; // closed-form low branch, scalar case only
};

struct NoseCurve {
    std::vector<NosePoint> points;
    double tip_scale = 0.0; // bisection-bracketed loss-of-convergence scale
};

/// Sweep q_injected = s * direction for s in [0, tip]; the tip is located by
/// bisection on solver failure to relative width 1e-6.
NoseCurve nose_curve(const NetworkModel& m, const VectorXd& direction, int steps);

struct CoupledPfSolution {
    VectorXd theta;   // bus angles (model ordering: loads then gens), slack = 0
    VectorXd v_load;  // p.u. load voltages
    VectorXd q_gen;   // recovered generator reactive injections
    VectorXd q_load_balance; // reactive injection evaluated at load buses (metering point)
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

/// Newton-Raphson on the full lossless coupled power flow in (theta, V_L).
/// P is fixed at every non-slack bus, Q at load buses (demand plus q_comp),
/// V at generator buses; the slack is the lowest-id generator bus.
CoupledPfSolution solve_coupled_pf(const GridCase& c, const NetworkModel& m,
                                   const VectorXd& q_comp,
                                   const std::optional<CoupledPfSolution>& init = std::nullopt);

/// Branch angle differences of a solved coupled flow, ordered like c.branches;
/// feeds build_model's angle embedding.
std::vector<double> branch_angle_differences(const GridCase& c, const NetworkModel& m,
                                             const CoupledPfSolution& sol);

} // namespace gridstress
