#include <doctest.h>

#include <random>

#include "test_support.hpp"
#include "gridstress/power_flow.hpp"
#include "gridstress/stress_opt.hpp"

using namespace gridstress;
using test::two_bus_case;

namespace {

VectorXd vec1(double v) {
    VectorXd x(1);
    x << v;
    return x;
}

// returned solutions must satisfy every constraint within 1e-8
void check_feasible(const StressProblem& p, const VectorXd& q) {
    const VectorXd sec = -(p.qcrit_inv * q);
    for (int i = 0; i < q.size(); ++i) {
        CHECK(q[i] >= p.q_min[i] - 1e-8);
        CHECK(q[i] <= p.q_max[i] + 1e-8);
        CHECK(sec[i] >= p.xi_min[i] - 1e-8);
        CHECK(sec[i] <= p.xi_max[i] + 1e-8);
    }
}

// grid-search oracle over the capacity box, feasibility-filtered
double grid_oracle(const StressProblem& p, int points_per_axis, double* resolution) {
    const int n = static_cast<int>(p.q_load.size());
    REQUIRE(n <= 3);
    std::vector<int> idx(n, 0);
    double best = std::numeric_limits<double>::infinity();
    double max_step = 0.0;
    for (int j = 0; j < n; ++j)
        max_step = std::max(max_step, (p.q_max[j] - p.q_min[j]) / (points_per_axis - 1));
    while (true) {
        VectorXd q(n);
        for (int j = 0; j < n; ++j)
            q[j] = p.q_min[j] +
                   (p.q_max[j] - p.q_min[j]) * idx[j] / static_cast<double>(points_per_axis - 1);
        const VectorXd sec = -(p.qcrit_inv * q);
        bool ok = true;
        for (int j = 0; j < n && ok; ++j)
            ok = sec[j] >= p.xi_min[j] - 1e-9 && sec[j] <= p.xi_max[j] + 1e-9;
        if (ok) best = std::min(best, (p.qcrit_inv * (p.q_load + q)).cwiseAbs().maxCoeff());
        int j = 0;
        for (; j < n; ++j) {
            if (++idx[j] < points_per_axis) break;
            idx[j] = 0;
        }
        if (j == n) break;
    }
    *resolution = max_step;
    return best;
}

} // namespace

TEST_CASE("thresholds of the two-bus problem") {
    NetworkModel m = build_model(two_bus_case());
    StressProblem p = build_problem(m, vec1(-0.5), vec1(-1.0), vec1(1.0), 1.0, 0.05);
    // 4(0.95 - 1) + 0.5 = 0.3 and 4(1.05 - 1) + 0.5 = 0.7
    CHECK(p.xi_min[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(p.xi_max[0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("alpha = 0 collapses the band to a point") {
    NetworkModel m = build_model(two_bus_case());
    StressProblem p = build_problem(m, vec1(-0.5), vec1(-1.0), vec1(1.0), 1.0, 0.0);
    CHECK(p.xi_min[0] == p.xi_max[0]);
}

TEST_CASE("IEEE30 thresholds are a nonempty band") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    StressProblem p = build_problem(m, q_load, VectorXd::Constant(m.n_load, -cap),
                                    VectorXd::Constant(m.n_load, cap), 1.0, 0.05);
    CHECK((p.xi_max - p.xi_min).minCoeff() > 0.0);
    CHECK(p.xi_min.allFinite());
}

TEST_CASE("two-bus stress LP instances") {
    NetworkModel m = build_model(two_bus_case());
    const VectorXd q_load = vec1(-0.5);

    SUBCASE("capacity below the security need is infeasible") {
        StressProblem p = build_problem(m, q_load, vec1(-0.25), vec1(0.25), 1.0, 0.05);
        CHECK_THROWS_AS(solve_stress_lp(p), Infeasible);
    }
    SUBCASE("capacity [0, 0.7] cancels the load exactly") {
        StressProblem p = build_problem(m, q_load, vec1(0.0), vec1(0.7), 1.0, 0.05);
        StressSolution s = solve_stress_lp(p);
        CHECK(s.q_opt[0] == doctest::Approx(0.5).epsilon(1e-8));
        CHECK(s.cost == doctest::Approx(0.0).epsilon(1e-8));
        check_feasible(p, s.q_opt);
    }
    SUBCASE("capacity [0, 0.4] binds") {
        StressProblem p = build_problem(m, q_load, vec1(0.0), vec1(0.4), 1.0, 0.05);
        StressSolution s = solve_stress_lp(p);
        CHECK(s.q_opt[0] == doctest::Approx(0.4).epsilon(1e-8));
        CHECK(s.cost == doctest::Approx(0.1).epsilon(1e-8));
        CHECK(s.kkt_primal <= 1e-8);
        CHECK(s.kkt_dual <= 1e-8);
        bool cap_binds = false;
        for (const auto& label : s.active_set) cap_binds |= label == "cap_max[0]";
        CHECK(cap_binds);
    }
}

TEST_CASE("stress LP matches the grid-search oracle on small networks") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    SUBCASE("one load bus") {
        NetworkModel m = build_model(two_bus_case());
        for (int trial = 0; trial < 10; ++trial) {
            const double load = -unif(rng);
            const double cap = 0.2 + unif(rng);
            StressProblem p =
                build_problem(m, vec1(load), vec1(-cap), vec1(cap), 1.0, 0.05 + 0.1 * unif(rng));
            double res = 0.0;
            double ref;
            try {
                ref = grid_oracle(p, 2001, &res);
            } catch (...) { continue; }
            if (!std::isfinite(ref)) {
                CHECK_THROWS_AS(solve_stress_lp(p), Infeasible);
                continue;
            }
            StressSolution s = solve_stress_lp(p);
            CHECK(s.cost <= ref + 1e-9);
            CHECK(std::abs(s.cost - ref) <= 2.0 * res * p.qcrit_inv.cwiseAbs().maxCoeff() + 1e-9);
            CHECK(s.kkt_primal <= 1e-8);
            CHECK(s.kkt_dual <= 1e-8);
            CHECK(s.kkt_comp <= 1e-8);
        }
    }

    SUBCASE("two and three load buses") {
        // chain of loads hanging off one generator
        auto chain_case = [](int n_loads) {
            std::ostringstream os;
            os << "mpc.baseMVA = 100;\nmpc.bus = [\n";
            for (int i = 1; i <= n_loads; ++i) os << i << " 1 0 10 0 0;\n";
            os << (n_loads + 1) << " 3 0 0 0 0;\n];\n";
            os << "mpc.gen = [" << (n_loads + 1) << " 0 0 0 0 1;];\n";
            os << "mpc.branch = [\n" << (n_loads + 1) << " 1 0 0.2 0;\n";
            for (int i = 1; i < n_loads; ++i) os << i << " " << (i + 1) << " 0 0.3 0;\n";
            os << "];\n";
            return parse_matpower_case(os.str());
        };
        for (int n_loads : {2, 3}) {
            GridCase c = chain_case(n_loads);
            NetworkModel m = build_model(c);
            const int grid_n = n_loads == 2 ? 501 : 121;
            for (int trial = 0; trial < 4; ++trial) {
                VectorXd q_load(n_loads), lo(n_loads), hi(n_loads);
                for (int j = 0; j < n_loads; ++j) {
                    q_load[j] = -0.4 * unif(rng);
                    hi[j] = 0.1 + 0.4 * unif(rng);
                    lo[j] = -hi[j];
                }
                StressProblem p = build_problem(m, q_load, lo, hi, 1.0, 0.05);
                double res = 0.0;
                const double ref = grid_oracle(p, grid_n, &res);
                if (!std::isfinite(ref)) {
                    CHECK_THROWS_AS(solve_stress_lp(p), Infeasible);
                    continue;
                }
                StressSolution s = solve_stress_lp(p);
                CHECK(s.cost <= ref + 1e-9);
                CHECK(std::abs(s.cost - ref) <=
                      2.0 * res * p.qcrit_inv.cwiseAbs().maxCoeff() * n_loads + 1e-9);
                CHECK(s.kkt_primal <= 1e-8);
                CHECK(s.kkt_dual <= 1e-8);
            }
        }
    }
}

TEST_CASE("duality gap stays within 1e-8 relative on IEEE30") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    StressProblem p = build_problem(m, q_load, VectorXd::Constant(m.n_load, -cap),
                                    VectorXd::Constant(m.n_load, cap), 1.0, 0.05);
    StressSolution s = solve_stress_lp(p);
    CHECK(s.rel_gap <= 1e-8);
    CHECK(s.kkt_primal <= 1e-8);
    CHECK(s.kkt_dual <= 1e-8);
    CHECK(s.kkt_comp <= 1e-8);
    check_feasible(p, s.q_opt);

    // any feasible solution keeps the linearized profile inside the band
    const VectorXd v_hat = linearized_voltages(m, q_load + s.q_opt);
    const VectorXd v_pu = denormalize_voltages(m, v_hat);
    for (int i = 0; i < m.n_load; ++i) {
        CHECK(v_pu[i] >= 0.95 - 1e-8);
        CHECK(v_pu[i] <= 1.05 + 1e-8);
    }
}

TEST_CASE("sparse placement at gamma = 0 equals the plain stress LP") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    StressProblem p = build_problem(m, q_load, VectorXd::Constant(m.n_load, -cap),
                                    VectorXd::Constant(m.n_load, cap), 1.0, 0.05);
    StressSolution plain = solve_stress_lp(p);
    StressSolution placed = solve_sparse_placement(p, 0.0, default_reweight_eps(p), 10);
    CHECK((plain.q_opt - placed.q_opt).cwiseAbs().maxCoeff() == 0.0);
    CHECK(placed.support.size() == 24); // compensation everywhere at gamma = 0
    bool any_negative = false;
    for (int idx : placed.support) any_negative |= placed.q_opt[idx] < 0.0;
    CHECK(any_negative); // at least one compensator absorbs
}

TEST_CASE("reweighting decreases the surrogate objective each round") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    StressProblem p = build_problem(m, q_load, VectorXd::Constant(m.n_load, -cap),
                                    VectorXd::Constant(m.n_load, cap), 1.0, 0.05);
    PlacementDiagnostics diag;
    solve_sparse_placement(p, 1e-4, default_reweight_eps(p), 10, &diag);
    REQUIRE(diag.rounds.size() >= 2);
    for (const auto& r : diag.rounds)
        CHECK(r.lp_objective <= r.prev_point_objective + 1e-7);
}

TEST_CASE("polish restricted to the full set equals the plain LP; empty support can fail") {
    NetworkModel m = build_model(two_bus_case());
    StressProblem p = build_problem(m, vec1(-0.5), vec1(0.0), vec1(0.7), 1.0, 0.05);
    StressSolution plain = solve_stress_lp(p);
    StressSolution full = polish(p, {0});
    CHECK(full.q_opt[0] == doctest::Approx(plain.q_opt[0]).epsilon(1e-10));
    CHECK_THROWS_AS(polish(p, {}), Infeasible); // security needs q >= 0.3
}

TEST_CASE("gamma sweep on IEEE30: sparsity and cost trends") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    StressProblem p = build_problem(m, q_load, VectorXd::Constant(m.n_load, -cap),
                                    VectorXd::Constant(m.n_load, cap), 1.0, 0.05);
    const double eps = default_reweight_eps(p);
    auto rows = gamma_sweep(p, {0.0, 4e-4, 8e-4}, eps, 10);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].n_devices == 24);
    CHECK(rows[0].n_devices >= rows[1].n_devices);
    CHECK(rows[1].n_devices >= rows[2].n_devices);
    CHECK(rows[0].cost_ratio <= rows[1].cost_ratio + 1e-12);
    CHECK(rows[1].cost_ratio <= rows[2].cost_ratio + 1e-12);
    for (const auto& r : rows) CHECK(r.feasible);
}

TEST_CASE("infeasible gamma point is flagged, sweep continues") {
    NetworkModel m = build_model(two_bus_case());
    StressProblem p = build_problem(m, vec1(-0.5), vec1(-0.25), vec1(0.25), 1.0, 0.05);
    auto rows = gamma_sweep(p, {0.0, 1e-3}, 1e-2, 10);
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].feasible);
    CHECK_FALSE(rows[1].feasible);
}

TEST_CASE("capacity boxes must contain zero") {
    NetworkModel m = build_model(two_bus_case());
    CHECK_THROWS_AS(build_problem(m, vec1(-0.5), vec1(0.1), vec1(0.4), 1.0, 0.05), DomainError);
}
