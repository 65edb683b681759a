#include "gridstress/network_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace gridstress {

namespace {

// union-find over load-bus indices
struct DisjointSet {
    std::vector<int> parent;
    explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

} // namespace

VectorXd NetworkModel::solve_qcrit(const VectorXd& rhs) const {
    return qcrit_lu_.solve(rhs);
}

MatrixXd NetworkModel::qcrit_inverse() const {
    return qcrit_lu_.solve(MatrixXd::Identity(n_load, n_load));
}

int NetworkModel::load_index(int bus_id) const {
    auto it = std::lower_bound(load_bus_ids.begin(), load_bus_ids.end(), bus_id);
    if (it == load_bus_ids.end() || *it != bus_id) return -1;
    return static_cast<int>(it - load_bus_ids.begin());
}

VectorXd NetworkModel::load_q_injections(const GridCase& c) const {
    VectorXd q(n_load);
    for (int i = 0; i < n_load; ++i) q[i] = -c.bus_by_id(load_bus_ids[i]).q_demand;
    return q;
}

VectorXd NetworkModel::load_p_injections(const GridCase& c) const {
    VectorXd p(n_load);
    for (int i = 0; i < n_load; ++i) p[i] = -c.bus_by_id(load_bus_ids[i]).p_demand;
    return p;
}

NetworkModel build_model(const GridCase& c,
                         const std::optional<std::vector<double>>& angle_embedding) {
    if (angle_embedding && angle_embedding->size() != c.branches.size())
        throw AssumptionViolated("angle embedding must give one angle per branch");

    NetworkModel m;
    for (const auto& b : c.buses) {
        if (b.kind == BusKind::load)
            m.load_bus_ids.push_back(b.id);
        else
            m.gen_bus_ids.push_back(b.id);
    }
    m.n_load = static_cast<int>(m.load_bus_ids.size());
    m.n_gen = static_cast<int>(m.gen_bus_ids.size());
    if (m.n_load == 0)
        throw AssumptionViolated("case has no load bus");

    // loads first, generators after
    std::vector<int> order(m.load_bus_ids);
    order.insert(order.end(), m.gen_bus_ids.begin(), m.gen_bus_ids.end());
    std::map<int, int> pos;
    for (size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<int>(k);

    const int n = m.n_load + m.n_gen;
    MatrixXd b_full = MatrixXd::Zero(n, n);
    for (size_t e = 0; e < c.branches.size(); ++e) {
        const auto& br = c.branches[e];
        double cos_factor = 1.0;
        if (angle_embedding) {
            const double ang = (*angle_embedding)[e];
            if (!(std::abs(ang) < M_PI / 2.0)) {
                std::ostringstream os;
                os << "angle difference " << ang << " on branch " << br.from << "-" << br.to
                   << " is outside (-pi/2, pi/2)";
                throw AssumptionViolated(os.str());
            }
            cos_factor = std::cos(ang);
        }
        const double w = cos_factor / br.reactance_x;
        const int i = pos[br.from];
        const int j = pos[br.to];
        b_full(i, j) += w;
        b_full(j, i) += w;
        b_full(i, i) -= w;
        b_full(j, j) -= w;
        b_full(i, i) += br.charging_b / 2.0;
        b_full(j, j) += br.charging_b / 2.0;
    }
    for (const auto& b : c.buses) b_full(pos[b.id], pos[b.id]) += b.shunt_b;

    m.b_ll = b_full.topLeftCorner(m.n_load, m.n_load);
    m.b_lg = b_full.topRightCorner(m.n_load, m.n_gen);
    m.b_gg = b_full.bottomRightCorner(m.n_gen, m.n_gen);

    m.v_gen.resize(m.n_gen);
    for (int g = 0; g < m.n_gen; ++g) m.v_gen[g] = c.bus_by_id(m.gen_bus_ids[g]).v_setpoint;

    // Assumption: b_ll is Hurwitz Metzler (equivalently -b_ll is a nonsingular
    // M-matrix) and its induced load graph is connected.
    for (int i = 0; i < m.n_load; ++i) {
        for (int j = 0; j < m.n_load; ++j) {
            if (i == j) continue;
            if (m.b_ll(i, j) < 0.0) {
                std::ostringstream os;
                os << "b_ll(" << m.load_bus_ids[i] << "," << m.load_bus_ids[j]
                   << ") = " << m.b_ll(i, j) << " breaks the Metzler sign pattern";
                throw AssumptionViolated(os.str());
            }
        }
        if (!(m.b_ll(i, i) < 0.0)) {
            std::ostringstream os;
            os << "b_ll diagonal at bus " << m.load_bus_ids[i] << " is " << m.b_ll(i, i)
               << " (not negative); shunt or charging too large";
            throw AssumptionViolated(os.str());
        }
    }
    {
        Eigen::EigenSolver<MatrixXd> es(m.b_ll, /*computeEigenvectors=*/false);
        const double max_re = es.eigenvalues().real().maxCoeff();
        if (!(max_re < -1e-9)) {
            std::ostringstream os;
            os << "b_ll is not Hurwitz: max eigenvalue real part " << max_re;
            throw AssumptionViolated(os.str());
        }
    }
    {
        // Load components separated only by generator buses are fine (each is an
        // independent block of b_ll); a component with no electrical tie to any
        // generator is a genuine violation.
        DisjointSet ds(m.n_load);
        for (int i = 0; i < m.n_load; ++i)
            for (int j = i + 1; j < m.n_load; ++j)
                if (m.b_ll(i, j) != 0.0) ds.unite(i, j);
        std::map<int, bool> anchored;
        for (int i = 0; i < m.n_load; ++i) {
            bool tie = false;
            for (int g = 0; g < m.n_gen; ++g) tie = tie || (m.b_lg(i, g) != 0.0);
            anchored[ds.find(i)] = anchored[ds.find(i)] || tie;
        }
        for (int i = 0; i < m.n_load; ++i) {
            if (!anchored[ds.find(i)]) {
                std::ostringstream os;
                os << "load buses";
                for (int j = 0; j < m.n_load; ++j)
                    if (ds.find(j) == ds.find(i)) os << ' ' << m.load_bus_ids[j];
                os << " are electrically isolated from every generator";
                throw AssumptionViolated(os.str());
            }
        }
    }

    Eigen::PartialPivLU<MatrixXd> bll_lu(m.b_ll);
    const double bll_scale = m.b_ll.cwiseAbs().maxCoeff();
    if (bll_lu.matrixLU().diagonal().cwiseAbs().minCoeff() < 1e-14 * bll_scale)
        throw SingularSystem("b_ll is numerically singular");

    m.v_open = -bll_lu.solve(m.b_lg * m.v_gen);
    if (!(m.v_open.minCoeff() > 0.0))
        throw AssumptionViolated("open-circuit voltages are not entrywise positive");

    m.q_crit = 0.25 * m.v_open.asDiagonal() * m.b_ll * m.v_open.asDiagonal();
    m.qcrit_lu_ = Eigen::PartialPivLU<MatrixXd>(m.q_crit);
    const double qc_scale = m.q_crit.cwiseAbs().maxCoeff();
    if (m.qcrit_lu_.matrixLU().diagonal().cwiseAbs().minCoeff() < 1e-14 * qc_scale)
        throw SingularSystem("q_crit is numerically singular");
    return m;
}

VectorXd normalize_voltages(const NetworkModel& m, const VectorXd& v_load) {
    return v_load.cwiseQuotient(m.v_open);
}

VectorXd denormalize_voltages(const NetworkModel& m, const VectorXd& v_norm) {
    return v_norm.cwiseProduct(m.v_open);
}

double collapse_margin(const NetworkModel& m, const VectorXd& q_load) {
    return m.solve_qcrit(q_load).cwiseAbs().maxCoeff();
}

} // namespace gridstress
