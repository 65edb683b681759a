#pragma once

#include <string>
#include <vector>

#include "gridstress/lp_solver.hpp"
#include "gridstress/network_model.hpp"

namespace gridstress {

/// Data of the convex stress-minimization problem: loads, capacity boxes and
/// the security thresholds mapping the voltage band onto injection space.
struct StressProblem {
    const NetworkModel* model = nullptr;
    VectorXd q_load;
    VectorXd q_min;
    VectorXd q_max;
    double v_nominal = 1.0;
    double dev_alpha = 0.05;
    VectorXd xi_min;
    VectorXd xi_max;
    MatrixXd qcrit_inv; // cached dense inverse, feeds the LP rows

    /// Thresholds depend on q_load; call after changing it.
    void refresh_thresholds();
};

struct StressSolution {
    VectorXd q_opt;
    double cost = 0.0;                    // ||qcrit^{-1}(q_load + q_opt)||_inf
    std::vector<std::string> active_set;  // binding constraints, labeled
    std::vector<int> support;             // load indices with |q| above threshold
    double kkt_primal = 0.0;
    double kkt_dual = 0.0;
    double kkt_comp = 0.0;
    double rel_gap = 0.0;
    double lp_cost = 0.0;       // objective reported by the LP
    double lp_dual_cost = 0.0;
};

StressProblem build_problem(const NetworkModel& model, const VectorXd& q_load,
                            const VectorXd& q_min, const VectorXd& q_max,
                            double v_nominal, double dev_alpha);

/// Epigraph LP: minimize t with |qcrit^{-1}(q_load+q)| <= t, the security
/// thresholds and the capacity box. Throws Infeasible.
StressSolution solve_stress_lp(const StressProblem& p);

/// Per-round record of the reweighting iteration.
struct PlacementRound {
    VectorXd q;
    std::vector<int> support;
    double lp_objective = 0.0;        // t + gamma * w'|q| at this round's weights
    double prev_point_objective = 0.0; // previous q evaluated under the same weights
};

struct PlacementDiagnostics {
    std::vector<PlacementRound> rounds;
};

double default_reweight_eps(const StressProblem& p);

/// Reweighted-l1 sparse placement: iterate LPs with cost t + gamma*sum w_h|q_h|,
/// w_h = 1/(|q_h|+eps), until the support stabilizes or max_rounds is hit.
StressSolution solve_sparse_placement(const StressProblem& p, double gamma,
                                      double reweight_eps, int max_rounds,
                                      PlacementDiagnostics* diag = nullptr);

/// Re-solve the stress LP with capacities zeroed outside the given support.
StressSolution polish(const StressProblem& p, const std::vector<int>& support);

struct GammaSweepRow {
    double gamma = 0.0;
    int n_devices = 0;
    double cost_ratio = 0.0; // polished cost over the uncompensated cost
    bool feasible = true;
};

std::vector<GammaSweepRow> gamma_sweep(const StressProblem& p,
                                       const std::vector<double>& gammas,
                                       double reweight_eps, int max_rounds);

/// Default gamma grid: 40 log-spaced points in [1e-5, 1e-2].
std::vector<double> default_gamma_grid();

} // namespace gridstress
