#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridstress/errors.hpp"

namespace gridstress {

/// Dense linear program
///   minimize    c'z
///   subject to  A z <= b,   0 <= z <= upper
/// upper may contain +inf entries; every optimal face reachable in this
/// codebase is kept bounded by the caller supplying finite bounds where the
/// cost leaves a variable free.
struct LpProblem {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::VectorXd c;
    Eigen::VectorXd upper; // size n, +inf where unbounded

    static constexpr double inf = std::numeric_limits<double>::infinity();
};

struct LpSolution {
    Eigen::VectorXd z;
    Eigen::VectorXd row_duals;   // >= 0, one per inequality row
    Eigen::VectorXd bound_duals; // >= 0, one per variable (upper bounds)
    Eigen::VectorXd reduced_costs; // >= 0, one per variable (lower bounds)
    double cost = 0.0;
    double dual_cost = 0.0;
    double kkt_primal = 0.0; // max constraint violation
    double kkt_dual = 0.0;   // stationarity residual, inf-norm
    double kkt_comp = 0.0;   // max complementarity product
    double rel_gap = 0.0;    // |primal - dual| / (1 + |primal|)
    int iterations = 0;
};

/// Primal-dual interior-point solve (Mehrotra predictor-corrector on the
/// slack-extended standard form), run to a crossover-free duality-gap stop.
/// Returns the limit point of the central path, i.e. the analytic center of
/// the optimal face when the optimum is not unique.
/// Throws Infeasible (with the violated row combination found by an elastic
/// certification solve) or InternalError.
LpSolution solve_lp(const LpProblem& p);

} // namespace gridstress
