#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gridstress/case_io.hpp"

namespace gridstress {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Decoupled reactive model of a grid: partitioned susceptance matrix,
/// open-circuit voltages and the critical load matrix. Immutable once built.
class NetworkModel {
public:
    int n_load = 0;
    int n_gen = 0;
    MatrixXd b_ll; // load-load susceptance block, Hurwitz Metzler
    MatrixXd b_lg;
    MatrixXd b_gg;
    VectorXd v_gen;  // generator set-points, ordered like gen_bus_ids
    VectorXd v_open; // open-circuit load voltages, entrywise positive
    MatrixXd q_crit; // (1/4)[v_open] b_ll [v_open], symmetric negative definite
    std::vector<int> load_bus_ids; // matrix index -> case bus id, ascending
    std::vector<int> gen_bus_ids;

    /// Solve q_crit * y = rhs (never forms the inverse).
    VectorXd solve_qcrit(const VectorXd& rhs) const;
    /// Dense inverse of q_crit; used where optimization needs explicit rows.
    MatrixXd qcrit_inverse() const;

    int load_index(int bus_id) const; // -1 if not a load bus

    /// Reactive load injections Q_L in model ordering (absorption negative).
    VectorXd load_q_injections(const GridCase& c) const;
    /// Active load injections P_L in model ordering (consumption negative).
    VectorXd load_p_injections(const GridCase& c) const;

private:
    Eigen::PartialPivLU<MatrixXd> qcrit_lu_;
    friend NetworkModel build_model(const GridCase&, const std::optional<std::vector<double>>&);
};

/// Assemble and partition the susceptance matrix, validate the M-matrix and
/// connectivity requirements, and compute v_open and q_crit.
/// angle_embedding, when given, holds one angle difference (rad) per branch of
/// the case; effective susceptances are scaled by its cosine.
/// Throws AssumptionViolated or SingularSystem.
NetworkModel build_model(const GridCase& c,
                         const std::optional<std::vector<double>>& angle_embedding = std::nullopt);

/// v -> diag(v_open)^{-1} v
VectorXd normalize_voltages(const NetworkModel& m, const VectorXd& v_load);
/// v -> diag(v_open) v
VectorXd denormalize_voltages(const NetworkModel& m, const VectorXd& v_norm);

/// Distance-to-collapse measure ||q_crit^{-1} q_load||_inf; < 1 certifies a
/// unique high-voltage decoupled solution.
double collapse_margin(const NetworkModel& m, const VectorXd& q_load);

} // namespace gridstress
