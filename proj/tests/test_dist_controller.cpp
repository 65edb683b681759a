#include <doctest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"
#include "gridstress/dist_controller.hpp"

using namespace gridstress;
using test::two_bus_case;

namespace {

VectorXd vec1(double v) {
    VectorXd x(1);
    x << v;
    return x;
}

// the worked two-bus instance: Q_L = -0.5, capacities [0, 0.4]
struct TwoBusRig {
    GridCase grid;
    NetworkModel model;
    XProblem xp;
    SmoothCfg cfg{50.0, 1.0};
    double rho;
    std::vector<AgentView> agents;

    TwoBusRig()
        : grid(two_bus_case(0.0, 50.0)),
          model(build_model(grid)),
          xp(build_xproblem(model, vec1(-0.5), vec1(0.0), vec1(0.4), 1.0, 0.05)),
          rho(0.9 * step_size_bound(model, cfg)),
          agents(make_agent_views(model)) {}
};

} // namespace

TEST_CASE("x-coordinate boxes of the two-bus problem") {
    NetworkModel m = build_model(two_bus_case());
    XProblem xp = build_xproblem(m, vec1(-0.5), vec1(0.0), vec1(0.4), 1.0, 0.05);
    CHECK(xp.x_min[0] == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(xp.x_max[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(xp.chi()[0] == doctest::Approx(0.2));
    CHECK(xp.chi()[1] == doctest::Approx(0.2));
    CHECK(xp.phi()[0] == doctest::Approx(0.4));
    CHECK(xp.phi()[1] == doctest::Approx(-0.0));
}

TEST_CASE("flat profile gives the symmetric 4*alpha band") {
    NetworkModel m = build_model(two_bus_case());
    XProblem xp = build_xproblem(m, vec1(0.0), vec1(-1.0), vec1(1.0), 1.0, 0.03);
    CHECK(xp.x_max[0] == doctest::Approx(4.0 * 0.03).epsilon(1e-12));
    CHECK(xp.x_min[0] == doctest::Approx(-4.0 * 0.03).epsilon(1e-12));
}

TEST_CASE("x-feasibility equals the injection-space thresholds") {
    GridCase c = test::load_ieee30();
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double cap = 0.5 * q_load.cwiseAbs().maxCoeff();
    const VectorXd lo = VectorXd::Constant(m.n_load, -cap);
    const VectorXd hi = VectorXd::Constant(m.n_load, cap);
    StressProblem sp = build_problem(m, q_load, lo, hi, 1.0, 0.05);
    XProblem xp = build_xproblem(m, q_load, lo, hi, 1.0, 0.05);

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> unif(-1.2, 1.2);
    for (int trial = 0; trial < 200; ++trial) {
        VectorXd q(m.n_load);
        for (int i = 0; i < m.n_load; ++i) q[i] = cap * unif(rng);
        const VectorXd sec = -(sp.qcrit_inv * q);
        bool feas_xi = true;
        for (int i = 0; i < m.n_load; ++i)
            feas_xi = feas_xi && sec[i] >= sp.xi_min[i] - 1e-10 && sec[i] <= sp.xi_max[i] + 1e-10;
        const VectorXd x = -(sp.qcrit_inv * (q_load + q));
        bool feas_x = true;
        for (int i = 0; i < m.n_load; ++i)
            feas_x = feas_x && x[i] >= xp.x_min[i] - 1e-10 && x[i] <= xp.x_max[i] + 1e-10;
        CHECK(feas_xi == feas_x);
    }
}

TEST_CASE("step size bound: hand-checkable two-bus value and scaling") {
    NetworkModel m = build_model(two_bus_case());
    // stacked rows (+-1, -+1): sigma_max^2 = 4; L = 4 / (2a); bound = a
    CHECK(step_size_bound(m, SmoothCfg{1.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(step_size_bound(m, SmoothCfg{2.0, 1.0}) == doctest::Approx(2.0).epsilon(1e-12));

    GridCase c30 = test::load_ieee30();
    NetworkModel m30 = build_model(c30);
    const double bound = step_size_bound(m30, SmoothCfg{50.0, 1.0});
    CHECK(bound > 0.0);
    CHECK(std::isfinite(bound));
    CHECK_THROWS_AS(step_size_bound(m30, SmoothCfg{50.0, 0.5}), DomainError);
}

TEST_CASE("agent round: zero multipliers give the unconstrained minimizer") {
    TwoBusRig rig;
    DualState st = make_initial_state(rig.xp);
    DualState next = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, st);
    CHECK(next.x[0] == 0.0);
    CHECK(next.t == 1);
}

TEST_CASE("agent round: projection and saturation invariants") {
    TwoBusRig rig;
    DualState st = make_initial_state(rig.xp);
    for (int t = 0; t < 500; ++t) {
        st = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, st);
        CHECK(st.lambda.minCoeff() >= 0.0);
        CHECK(st.mu.minCoeff() >= 0.0);
        CHECK(st.q[0] >= rig.xp.q_min[0]);
        CHECK(st.q[0] <= rig.xp.q_max[0]);
    }
}

TEST_CASE("two-bus dual ascent reaches the centralized optimum 0.4") {
    TwoBusRig rig;
    DualState st = make_initial_state(rig.xp);
    for (int t = 0; t < 4000; ++t)
        st = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, st);
    CHECK(std::abs(st.q[0] - 0.4) <= 1e-4);
    CHECK(st.x[0] == doctest::Approx(-0.1).epsilon(1e-3));
}

TEST_CASE("dual value is non-decreasing along the run") {
    TwoBusRig rig;
    DualState st = make_initial_state(rig.xp);
    double prev = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < 2000; ++t) {
        const double d = dual_value(rig.xp, rig.cfg, rig.xp.q_load0, st);
        CHECK(d >= prev - 1e-10);
        prev = d;
        st = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, st);
    }
}

TEST_CASE("message locality: non-neighbor multipliers cannot reach an agent") {
    // chain 1-2-3 hanging off a generator: q_crit(0, 2) == 0
    std::string text = "mpc.baseMVA = 100;\n"
                       "mpc.bus = [1 1 0 10 0 0; 2 1 0 10 0 0; 3 1 0 10 0 0; 4 3 0 0 0 0;];\n"
                       "mpc.gen = [4 0 0 0 0 1;];\n"
                       "mpc.branch = [4 1 0 0.2 0; 1 2 0 0.3 0; 2 3 0 0.3 0;];\n";
    GridCase c = parse_matpower_case(text);
    NetworkModel m = build_model(c);
    REQUIRE(m.q_crit(0, 2) == 0.0);

    const VectorXd q_load = m.load_q_injections(c);
    XProblem xp = build_xproblem(m, q_load, VectorXd::Constant(3, -0.1),
                                 VectorXd::Constant(3, 0.1), 1.0, 0.05);
    SmoothCfg cfg{50.0, 1.0};
    std::vector<AgentView> agents = make_agent_views(m);
    CHECK(agents[0].neighbors == std::vector<int>{0, 1});
    CHECK(agents[2].neighbors == std::vector<int>{1, 2});

    DualState st = make_initial_state(xp);
    st.lambda.setConstant(0.05);
    st.mu.setConstant(0.02);
    const double rho = 0.9 * step_size_bound(m, cfg);
    DualState a = agent_round(agents, xp, cfg, rho, q_load, st);

    DualState st2 = st;
    st2.mu[2] += 1.0; // a non-neighbor multiplier of agent 0
    st2.mu[5] += 0.3;
    DualState b = agent_round(agents, xp, cfg, rho, q_load, st2);
    CHECK(a.x[0] == b.x[0]); // untouched by the far agent
    CHECK(a.x[1] != b.x[1]); // neighbor reacts

    MessageCounters counters;
    agent_round(agents, xp, cfg, rho, q_load, st, &counters);
    // per round: agent 0 reads mu of 1; 1 reads mu of 0 and 2; 2 reads mu of 1
    CHECK(counters.multiplier_reads == 2 * 4);
    CHECK(counters.x_reads == 4);
}

TEST_CASE("agent rounds are deterministic") {
    TwoBusRig rig;
    DualState a = make_initial_state(rig.xp);
    DualState b = make_initial_state(rig.xp);
    for (int t = 0; t < 200; ++t) {
        a = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, a);
        b = agent_round(rig.agents, rig.xp, rig.cfg, rig.rho, rig.xp.q_load0, b);
    }
    CHECK(a.x == b.x);
    CHECK(a.lambda == b.lambda);
    CHECK(a.mu == b.mu);
    CHECK(a.q == b.q);
}

TEST_CASE("schedule parsing and the built-in jump") {
    std::istringstream csv("t,bus_id,p_demand,q_demand\n10,1,0.05,0.02\n5,2,0,0.01\n");
    LoadSchedule s = parse_schedule_csv(csv);
    REQUIRE(s.overrides.size() == 2);
    CHECK(s.overrides[0].t == 5); // sorted by round
    CHECK(s.overrides[1].bus_id == 1);
    CHECK(s.overrides[1].q_demand == 0.02);

    std::istringstream bad("t,bus_id\n1,2\n");
    CHECK_THROWS_AS(parse_schedule_csv(bad), MalformedCase);

    GridCase c = two_bus_case(0.0, 50.0);
    NetworkModel m = build_model(c);
    LoadSchedule jump = make_jump_schedule(c, m, 7, 1.4);
    REQUIRE(jump.overrides.size() == 1);
    CHECK(jump.overrides[0].t == 7);
    CHECK(jump.overrides[0].q_demand == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("run_online: zero rounds leaves only the initial row") {
    TwoBusRig rig;
    ScenarioTrace trace = run_online(rig.grid, rig.model, rig.xp, rig.cfg, rig.rho, {}, 0,
                                     PlantMode::linearized);
    REQUIRE(trace.rounds.size() == 1);
    CHECK(trace.rounds[0].t == 0);
    CHECK(trace.rounds[0].q.cwiseAbs().maxCoeff() == 0.0); // uncompensated plant
    CHECK(trace.rounds[0].q_load[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("run_online: constant loads converge to the centralized optimum") {
    TwoBusRig rig;
    ScenarioTrace trace = run_online(rig.grid, rig.model, rig.xp, rig.cfg, rig.rho, {}, 4000,
                                     PlantMode::linearized, OnlineOptions{100, true});
    const auto& last = trace.rounds.back();
    CHECK(last.err_norm <= 1e-3 * std::max(1.0, 0.4));
    CHECK(last.q[0] == doctest::Approx(0.4).epsilon(1e-3));
    // measurement feedback recovered the loads exactly in linearized mode
    CHECK(last.q_load[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("run_online: coupled plant on the zero-active two-bus matches linearized") {
    TwoBusRig rig;
    ScenarioTrace lin = run_online(rig.grid, rig.model, rig.xp, rig.cfg, rig.rho, {}, 800,
                                   PlantMode::linearized, OnlineOptions{800, true});
    ScenarioTrace cpl = run_online(rig.grid, rig.model, rig.xp, rig.cfg, rig.rho, {}, 800,
                                   PlantMode::coupled, OnlineOptions{800, true});
    REQUIRE_FALSE(cpl.plant_diverged);
    CHECK(std::abs(lin.rounds.back().q[0] - cpl.rounds.back().q[0]) <= 1e-6);
    // with zero active power the plant voltage is the exact decoupled solution,
    // slightly below the linearized one
    CHECK(cpl.rounds.back().v_plant[0] <= lin.rounds.back().v_plant[0] + 1e-9);
}

TEST_CASE("run_online: load jump at half horizon re-converges") {
    TwoBusRig rig;
    LoadSchedule sched = make_jump_schedule(rig.grid, rig.model, 3000, 1.2);
    ScenarioTrace trace = run_online(rig.grid, rig.model, rig.xp, rig.cfg, rig.rho, sched, 6000,
                                     PlantMode::linearized, OnlineOptions{50, true});
    // after the jump the loads are -0.6; optimum saturates at 0.4
    const auto& last = trace.rounds.back();
    CHECK(last.q_load[0] == doctest::Approx(-0.6).epsilon(1e-12));
    CHECK(last.err_norm <= 1e-3);
}
