#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridstress/case_io.hpp"
#include "gridstress/dist_controller.hpp"
#include "gridstress/network_model.hpp"
#include "gridstress/power_flow.hpp"
#include "gridstress/smooth_norm.hpp"
#include "gridstress/stress_opt.hpp"

namespace fs = std::filesystem;
using namespace gridstress;

namespace {

// exit codes: 0 ok, 2 assumption violated, 3 parse/input, 4 infeasible, 5 plant diverged
constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitAssumption = 2;
constexpr int kExitParse = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitDiverged = 5;

struct CommonOpts {
    std::string case_path;
    std::string format = "auto"; // matpower | native | auto
    double v_nominal = 1.0;
    double dev_alpha = 0.05;
    double cap_frac = 0.5;
    std::string cap_file;
    std::string out_dir = ".";
    unsigned long seed = 0;
};

GridCase load_case(const CommonOpts& o) {
    std::ifstream in(o.case_path);
    if (!in) throw MalformedCase("cannot open case file " + o.case_path);
    std::string fmt = o.format;
    if (fmt == "auto")
        fmt = o.case_path.size() > 5 && o.case_path.substr(o.case_path.size() - 5) == ".json"
                  ? "native"
                  : "matpower";
    ParseWarnings warnings;
    GridCase c = fmt == "native" ? parse_native_case(in, &warnings)
                                 : parse_matpower_case(in, &warnings);
    for (const auto& w : warnings.messages) std::cerr << "warning: " << w << "\n";
    return c;
}

// capacity boxes: uniform fraction of the peak load, or per-bus CSV overrides
void make_capacities(const CommonOpts& o, const NetworkModel& m, const VectorXd& q_load,
                     VectorXd& q_min, VectorXd& q_max) {
    const int n = m.n_load;
    if (o.cap_file.empty()) {
        const double cap = o.cap_frac * q_load.cwiseAbs().maxCoeff();
        q_min = VectorXd::Constant(n, -cap);
        q_max = VectorXd::Constant(n, cap);
        return;
    }
    q_min = VectorXd::Zero(n);
    q_max = VectorXd::Zero(n);
    std::ifstream in(o.cap_file);
    if (!in) throw MalformedCase("cannot open capacity file " + o.cap_file);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f0, f1, f2;
        if (!std::getline(ls, f0, ',') || !std::getline(ls, f1, ',') || !std::getline(ls, f2))
            throw MalformedCase("capacity file: expected bus_id,q_min,q_max");
        if (first && f0 == "bus_id") {
            first = false;
            continue;
        }
        first = false;
        const int bus = std::stoi(f0);
        const int idx = m.load_index(bus);
        if (idx < 0) throw MalformedCase("capacity file names non-load bus " + f0);
        q_min[idx] = std::stod(f1);
        q_max[idx] = std::stod(f2);
    }
}

std::ofstream open_out(const CommonOpts& o, const std::string& name) {
    fs::create_directories(o.out_dir);
    fs::path p = fs::path(o.out_dir) / name;
    std::ofstream out(p, std::ios::binary); // '\n' line ends on every platform
    if (!out) throw Error("cannot write " + p.string());
    return out;
}

int cmd_analyze(const CommonOpts& o, int nose_steps, long mc_samples, bool export_matrices) {
    GridCase c = load_case(o);
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    const double margin = collapse_margin(m, q_load);

    {
        auto out = open_out(o, "summary.txt");
        out << "buses: " << (m.n_load + m.n_gen) << "\n"
            << "load buses: " << m.n_load << "\n"
            << "generator buses: " << m.n_gen << "\n"
            << "assumption checks: ok (Metzler, Hurwitz, connected)\n"
            << "collapse margin ||q_crit^-1 Q_L||_inf: " << format_number(margin) << "\n"
            << "v_open min: " << format_number(m.v_open.minCoeff())
            << "  max: " << format_number(m.v_open.maxCoeff()) << "\n";
    }
    std::cout << "load buses " << m.n_load << ", generator buses " << m.n_gen
              << ", collapse margin " << format_number(margin) << "\n";

    if (q_load.cwiseAbs().maxCoeff() > 0.0) {
        NoseCurve curve = nose_curve(m, q_load, nose_steps);
        auto out = open_out(o, "nose_curve.csv");
        out << "s,converged,v_norm_min,v_norm_max,v_low\n";
        for (const auto& pt : curve.points) {
            out << format_number(pt.scale) << ',' << (pt.high.converged ? 1 : 0) << ','
                << format_number(pt.high.v_norm.minCoeff()) << ','
                << format_number(pt.high.v_norm.maxCoeff()) << ',';
            if (pt.low) out << format_number(pt.low->v_norm[0]);
            out << "\n";
        }
        std::cout << "nose tip scale " << format_number(curve.tip_scale) << "\n";
    }

    if (mc_samples > 0) {
        std::mt19937_64 rng(o.seed);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        auto out = open_out(o, "solvability.csv");
        out << "scale,margin,converged\n";
        for (long k = 0; k < mc_samples; ++k) {
            const double margin_target = unif(rng); // stay inside the certified region
            const double s = margin > 0 ? margin_target / margin : 0.0;
            RpfeSolution sol = solve_rpfe(m, s * q_load);
            out << format_number(s) << ',' << format_number(s * margin) << ','
                << (sol.converged ? 1 : 0) << "\n";
        }
    }

    if (export_matrices) {
        auto dump = [&](const std::string& name, const MatrixXd& mat) {
            auto out = open_out(o, name);
            for (int i = 0; i < mat.rows(); ++i) {
                for (int j = 0; j < mat.cols(); ++j)
                    out << (j ? "," : "") << format_number(mat(i, j));
                out << "\n";
            }
        };
        dump("b_ll.csv", m.b_ll);
        dump("b_lg.csv", m.b_lg);
        dump("q_crit.csv", m.q_crit);
        dump("v_open.csv", m.v_open);
    }
    return kExitOk;
}

void write_solution_csv(const CommonOpts& o, const NetworkModel& m, const StressProblem& sp,
                        const StressSolution& sol, const std::string& name) {
    const VectorXd v_hat = linearized_voltages(m, sp.q_load + sol.q_opt);
    const VectorXd v_pu = denormalize_voltages(m, v_hat);
    auto out = open_out(o, name);
    out << "bus_id,q_load,q_opt,v_hat,secure_lo,secure_hi\n";
    for (int i = 0; i < m.n_load; ++i) {
        out << m.load_bus_ids[i] << ',' << format_number(sp.q_load[i]) << ','
            << format_number(sol.q_opt[i]) << ',' << format_number(v_pu[i]) << ','
            << format_number(sp.v_nominal * (1.0 - sp.dev_alpha)) << ','
            << format_number(sp.v_nominal * (1.0 + sp.dev_alpha)) << "\n";
    }
}

int cmd_optimize(const CommonOpts& o) {
    GridCase c = load_case(o);
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    VectorXd q_min, q_max;
    make_capacities(o, m, q_load, q_min, q_max);
    StressProblem sp = build_problem(m, q_load, q_min, q_max, o.v_nominal, o.dev_alpha);
    StressSolution sol = solve_stress_lp(sp);
    write_solution_csv(o, m, sp, sol, "solution.csv");

    const VectorXd v_before = denormalize_voltages(m, linearized_voltages(m, q_load));
    const VectorXd v_after = denormalize_voltages(m, linearized_voltages(m, q_load + sol.q_opt));
    {
        auto out = open_out(o, "profiles.csv");
        out << "bus_id,v_before,v_after,band_lo,band_hi\n";
        for (int i = 0; i < m.n_load; ++i)
            out << m.load_bus_ids[i] << ',' << format_number(v_before[i]) << ','
                << format_number(v_after[i]) << ','
                << format_number(o.v_nominal * (1.0 - o.dev_alpha)) << ','
                << format_number(o.v_nominal * (1.0 + o.dev_alpha)) << "\n";
    }
    std::cout << "stress cost " << format_number(sol.cost) << " (uncompensated "
              << format_number((sp.qcrit_inv * q_load).cwiseAbs().maxCoeff()) << "), "
              << sol.support.size() << " nonzero injections\n";
    return kExitOk;
}

int cmd_place(const CommonOpts& o, double gamma, double eps_override, int max_rounds) {
    GridCase c = load_case(o);
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    VectorXd q_min, q_max;
    make_capacities(o, m, q_load, q_min, q_max);
    StressProblem sp = build_problem(m, q_load, q_min, q_max, o.v_nominal, o.dev_alpha);
    const double eps = eps_override > 0 ? eps_override : default_reweight_eps(sp);
    StressSolution sol = solve_sparse_placement(sp, gamma, eps, max_rounds);
    {
        auto out = open_out(o, "placement.csv");
        out << "bus_id,q_opt,in_support,sign\n";
        for (int i = 0; i < m.n_load; ++i) {
            const bool in =
                std::find(sol.support.begin(), sol.support.end(), i) != sol.support.end();
            const char* sign = !in ? "none" : (sol.q_opt[i] >= 0.0 ? "inject" : "absorb");
            out << m.load_bus_ids[i] << ',' << format_number(sol.q_opt[i]) << ','
                << (in ? 1 : 0) << ',' << sign << "\n";
        }
    }
    std::cout << "gamma " << format_number(gamma) << ": " << sol.support.size()
              << " devices, stress cost " << format_number(sol.cost) << "\n";
    return kExitOk;
}

int cmd_sweep(const CommonOpts& o, const std::vector<double>& grid, double eps_override,
              int max_rounds) {
    GridCase c = load_case(o);
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    VectorXd q_min, q_max;
    make_capacities(o, m, q_load, q_min, q_max);
    StressProblem sp = build_problem(m, q_load, q_min, q_max, o.v_nominal, o.dev_alpha);
    const double eps = eps_override > 0 ? eps_override : default_reweight_eps(sp);
    std::vector<double> gammas = grid.empty() ? default_gamma_grid() : grid;
    std::sort(gammas.begin(), gammas.end());
    auto rows = gamma_sweep(sp, gammas, eps, max_rounds);
    auto out = open_out(o, "sweep.csv");
    out << "gamma,n_devices,cost_ratio,feasible\n";
    for (const auto& r : rows)
        out << format_number(r.gamma) << ',' << r.n_devices << ','
            << format_number(r.cost_ratio) << ',' << (r.feasible ? 1 : 0) << "\n";
    std::cout << "swept " << rows.size() << " gamma points\n";
    return kExitOk;
}

int cmd_simulate(const CommonOpts& o, double sharpness, double exponent_eps, double rho_arg,
                 long rounds, const std::string& plant, const std::string& schedule_path,
                 long trace_stride) {
    GridCase c = load_case(o);
    NetworkModel m = build_model(c);
    const VectorXd q_load = m.load_q_injections(c);
    VectorXd q_min, q_max;
    make_capacities(o, m, q_load, q_min, q_max);
    XProblem xp = build_xproblem(m, q_load, q_min, q_max, o.v_nominal, o.dev_alpha);
    SmoothCfg cfg{sharpness, exponent_eps};

    const double bound = step_size_bound(m, cfg);
    double rho = rho_arg > 0 ? rho_arg : 0.9 * bound;
    if (rho > bound)
        std::cerr << "warning: rho " << rho << " exceeds the convergence bound " << bound
                  << "\n";

    LoadSchedule sched;
    if (schedule_path.empty()) {
        sched = make_jump_schedule(c, m, rounds / 2, 1.4); // +40% at half horizon
    } else {
        std::ifstream in(schedule_path);
        if (!in) throw MalformedCase("cannot open schedule " + schedule_path);
        sched = parse_schedule_csv(in);
    }

    OnlineOptions opts;
    opts.trace_stride = trace_stride > 0 ? trace_stride : std::max<long>(1, rounds / 2000);
    PlantMode mode = plant == "coupled" ? PlantMode::coupled : PlantMode::linearized;
    ScenarioTrace trace = run_online(c, m, xp, cfg, rho, sched, rounds, mode, opts);

    {
        auto out = open_out(o, "trace.csv");
        out << "t,bus_id,q_load,y,q,x,v_coupled,err_norm\n";
        for (const auto& r : trace.rounds)
            for (int i = 0; i < m.n_load; ++i)
                out << r.t << ',' << m.load_bus_ids[i] << ',' << format_number(r.q_load[i])
                    << ',' << format_number(r.y[i]) << ',' << format_number(r.q[i]) << ','
                    << format_number(r.x[i]) << ',' << format_number(r.v_plant[i]) << ','
                    << format_number(r.err_norm) << "\n";
    }
    {
        auto out = open_out(o, "summary.txt");
        const auto& last = trace.rounds.back();
        double max_dev = 0.0;
        for (int i = 0; i < m.n_load; ++i)
            max_dev = std::max(max_dev, std::abs(last.v_plant[i] - o.v_nominal));
        long settled = -1;
        for (const auto& r : trace.rounds)
            if (r.err_norm <= 1e-3) { settled = r.t; break; }
        out << "rounds run: " << trace.rounds_run << "\n"
            << "plant diverged: " << (trace.plant_diverged ? "yes" : "no") << "\n"
            << "final error norm ||q - q_opt||: " << format_number(last.err_norm) << "\n"
            << "final max |v - v_nominal|: " << format_number(max_dev) << "\n"
            << "first recorded round with error <= 1e-3: " << settled << "\n";
    }
    if (trace.plant_diverged) {
        std::cerr << "plant diverged; trace truncated at round " << trace.rounds_run << "\n";
        return kExitDiverged;
    }
    std::cout << "simulated " << trace.rounds_run << " rounds, final error "
              << format_number(trace.rounds.back().err_norm) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoupled reactive-stress toolkit: grid analysis, compensation "
                 "optimization, sparse placement, distributed online control"};
    app.require_subcommand(1);

    CommonOpts o;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--case", o.case_path, "case file")->required();
        cmd->add_option("--format", o.format, "matpower | native | auto")
            ->check(CLI::IsMember({"matpower", "native", "auto"}));
        cmd->add_option("--vn", o.v_nominal, "nominal voltage V_N [p.u.]");
        cmd->add_option("--alpha", o.dev_alpha, "security deviation (default 0.05)");
        cmd->add_option("--cap-frac", o.cap_frac, "capacity as a fraction of peak load");
        cmd->add_option("--cap-file", o.cap_file, "per-bus capacity CSV: bus_id,q_min,q_max");
        cmd->add_option("--out", o.out_dir, "output directory");
        cmd->add_option("--seed", o.seed, "seed for randomized studies");
    };

    auto* analyze = app.add_subcommand("analyze", "model summary, margin, nose curve");
    int nose_steps = 100;
    long mc_samples = 0;
    bool export_matrices = false;
    add_common(analyze);
    analyze->add_option("--nose-steps", nose_steps, "points on the nose curve");
    analyze->add_option("--mc-solvability", mc_samples,
                        "random load scalings for the solvability study");
    analyze->add_flag("--export-matrices", export_matrices, "dump model matrices as CSV");

    auto* optimize = app.add_subcommand("optimize", "centralized convex stress minimization");
    add_common(optimize);

    auto* place = app.add_subcommand("place", "sparse compensator placement at one gamma");
    double gamma = 0.0;
    double reweight_eps = -1.0;
    int max_rounds = 10;
    add_common(place);
    place->add_option("--gamma", gamma, "sparsity weight");
    place->add_option("--eps", reweight_eps, "reweighting epsilon (default 1e-2 max(1,|Q_L|))");
    place->add_option("--max-rounds", max_rounds, "reweighting rounds");

    auto* sweep = app.add_subcommand("sweep", "device count and cost ratio over gamma");
    std::vector<double> gamma_grid;
    add_common(sweep);
    sweep->add_option("--gamma-grid", gamma_grid, "explicit gamma values")->delimiter(',');
    sweep->add_option("--eps", reweight_eps, "reweighting epsilon");
    sweep->add_option("--max-rounds", max_rounds, "reweighting rounds");

    auto* simulate = app.add_subcommand("simulate", "distributed online feedback controller");
    double sharpness = 50.0;
    double exponent_eps = 1.0;
    double rho = -1.0;
    long rounds = 20000;
    std::string plant = "linearized";
    std::string schedule_path;
    long trace_stride = 0;
    add_common(simulate);
    simulate->add_option("--sharpness", sharpness, "softmax sharpness");
    simulate->add_option("--eps", exponent_eps, "absolute-value smoothing exponent");
    simulate->add_option("--rho", rho, "dual step size (default 0.9x the bound)");
    simulate->add_option("--rounds", rounds, "synchronous rounds");
    simulate->add_option("--plant", plant, "linearized | coupled")
        ->check(CLI::IsMember({"linearized", "coupled"}));
    simulate->add_option("--schedule", schedule_path,
                         "load schedule CSV t,bus_id,p_demand,q_demand (default: +40% jump)");
    simulate->add_option("--trace-stride", trace_stride, "record every k-th round");

    CLI11_PARSE(app, argc, argv);

    try {
        if (analyze->parsed()) return cmd_analyze(o, nose_steps, mc_samples, export_matrices);
        if (optimize->parsed()) return cmd_optimize(o);
        if (place->parsed()) return cmd_place(o, gamma, reweight_eps, max_rounds);
        if (sweep->parsed()) return cmd_sweep(o, gamma_grid, reweight_eps, max_rounds);
        if (simulate->parsed())
            return cmd_simulate(o, sharpness, exponent_eps, rho, rounds, plant, schedule_path,
                                trace_stride);
    } catch (const MalformedCase& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const InvalidTopology& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const AssumptionViolated& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitAssumption;
    } catch (const InfeasibleBox& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const Infeasible& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const PlantDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
    return kExitOther;
}
