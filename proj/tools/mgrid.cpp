// Command line front end: periodic reference computation, single subproblem
// solves, power-flow deviation checks and full closed-loop simulations on a
// microgrid described by a JSON config.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mgrid/scenario.hpp"

using namespace mg;
using nlohmann::json;

namespace {

// exit-code contract: 1 usage (CLI11), 2 config, 3 model, 4 solve, 5 io
struct CliError : std::runtime_error {
    int code;
    std::string category;
    CliError(int c, std::string cat, const std::string& what)
        : std::runtime_error(what), code(c), category(std::move(cat)) {}
};

struct CommonOpts {
    std::string config;
    std::string out;
    unsigned seed = 0;
    double dt = 1.0;
    int horizon = 48;
    double gap = 1e-4;
    int threads = 0;
    double time_limit = 0.0;  // seconds per tree search, 0 = none
    long node_limit = 0;      // nodes per tree search, 0 = none
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_config = true) {
    auto* c = cmd->add_option("-c,--config", o.config, "grid/device JSON config");
    if (need_config) c->required();
    cmd->add_option("-o,--out", o.out, "output file path");
    cmd->add_option("--seed", o.seed, "random seed")->capture_default_str();
    cmd->add_option("--dt", o.dt, "interval length [h]")->capture_default_str();
    cmd->add_option("-M,--horizon", o.horizon, "prediction horizon [intervals]")->capture_default_str();
    cmd->add_option("--gap", o.gap, "branch-and-bound relative gap")->capture_default_str();
    cmd->add_option("--threads", o.threads,
                    "relaxations per batch, 0 = hardware default")->capture_default_str();
    cmd->add_option("--time-limit", o.time_limit,
                    "tree-search wall-clock budget [s], 0 = none")->capture_default_str();
    cmd->add_option("--node-limit", o.node_limit,
                    "tree-search node budget, 0 = none")->capture_default_str();
}

void apply_budget(conic::BnBOptions& b, const CommonOpts& o) {
    b.gap_tol = o.gap;
    b.threads = o.threads;
    if (o.time_limit > 0) b.time_limit = o.time_limit;
    if (o.node_limit > 0) b.node_limit = o.node_limit;
}

RunConfig read_config(const CommonOpts& o) {
    try {
        RunConfig cfg = load_config_file(o.config);
        cfg.dt = o.dt;
        return cfg;
    } catch (const ModelError& e) {
        throw CliError(2, "config", e.what());
    }
}

PeriodicReference reference_for(const RunConfig& cfg, const CommonOpts& o,
                                const std::string& ref_path) {
    if (!ref_path.empty()) {
        std::ifstream f(ref_path);
        if (!f) throw CliError(5, "io", "cannot open " + ref_path);
        try {
            return load_reference(f);
        } catch (const ModelError& e) {
            throw CliError(2, "config", e.what());
        }
    }
    OcpOptions opts;
    apply_budget(opts.bnb, o);
    auto d = make_nominal_profile(cfg.n_per, cfg.dt, cfg.spec.n_buses, cfg.shape);
    try {
        return solve_periodic_ocp(cfg.spec, cfg.params, d, cfg.n_per, cfg.dt,
                                  opts);
    } catch (const ModelError& e) {
        throw CliError(4, "solve", e.what());
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw CliError(5, "io", "cannot write " + path);
    return f;
}

int run_periodic(const CommonOpts& o) {
    RunConfig cfg = read_config(o);
    PeriodicReference ref = reference_for(cfg, o, "");
    const std::string out = o.out.empty() ? "mgrid_reference.json" : o.out;
    std::ofstream f = open_out(out);
    save_reference(ref, f);
    int switches = 0;
    for (const ControlInput& u : ref.u)
        for (int s : u.sw) switches += s;
    std::cout << "periodic: n_per=" << ref.n_per << " objective=" << ref.objective
              << " switches=" << switches << " -> " << out << "\n";
    return 0;
}

int run_nmpc(const CommonOpts& o, const std::string& ref_path, int k) {
    RunConfig cfg = read_config(o);
    PeriodicReference ref = reference_for(cfg, o, ref_path);
    auto d = make_nominal_profile(cfg.n_per, cfg.dt, cfg.spec.n_buses, cfg.shape);
    ScenarioTimeline t = make_nominal_timeline(d, cfg.n_per, 1, o.horizon, k);

    NmpcConfig nc;
    nc.M = o.horizon;
    nc.dt = cfg.dt;
    apply_budget(nc.bnb, o);
    Subproblem sub = build_subproblem(ref.state(k), k, t.forecast[0], ref,
                                      cfg.spec, cfg.params, nc);
    conic::Solution sol = conic::solve_miqcp(sub.prog, nc.bnb);
    std::cout << "nmpc: k=" << k << " status=" << conic::to_string(sol.status)
              << " objective=" << sol.objective << " nodes=" << sol.nodes
              << "\n";
    if (sol.status != conic::SolveStatus::Optimal &&
        sol.status != conic::SolveStatus::GapLimit)
        throw CliError(4, "solve", std::string("nmpc subproblem: ") +
                                       conic::to_string(sol.status));
    if (!o.out.empty()) {
        json j;
        j["k"] = k;
        j["status"] = conic::to_string(sol.status);
        j["objective"] = sol.objective;
        j["nodes"] = sol.nodes;
        for (int i = 0; i <= nc.M; ++i) {
            DispatchState x = sub.enc.state_at(sol.x, i);
            json s;
            for (int g = 0; g < x.p_g.size(); ++g) s["p_g"].push_back(x.p_g(g));
            for (int g = 0; g < x.q_g.size(); ++g) s["q_g"].push_back(x.q_g(g));
            for (int b = 0; b < x.p_b.size(); ++b) s["p_b"].push_back(x.p_b(b));
            for (int b = 0; b < x.soc.size(); ++b) s["soc"].push_back(x.soc(b));
            s["on"] = x.on;
            s["counter"] = x.counter;
            j["trajectory"].push_back(std::move(s));
        }
        std::ofstream f = open_out(o.out);
        f << j.dump(1) << "\n";
    }
    return 0;
}

int run_check_pf(const CommonOpts& o, const std::string& setpoint_path) {
    RunConfig cfg = read_config(o);
    std::ifstream f(setpoint_path);
    if (!f) throw CliError(5, "io", "cannot open " + setpoint_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw CliError(2, "config", std::string("setpoint file: ") + e.what());
    }
    auto vec = [&](const char* key, int n) {
        VectorXd v = VectorXd::Zero(n);
        if (!j.contains(key)) return v;
        const json& a = j[key];
        if (static_cast<int>(a.size()) != n)
            throw CliError(2, "config",
                           std::string("setpoint file: bad length for ") + key);
        for (int i = 0; i < n; ++i) v(i) = a[i].get<double>();
        return v;
    };
    const int n_gen = static_cast<int>(cfg.spec.generators.size());
    const int n_bat = static_cast<int>(cfg.spec.batteries.size());
    PowerSetpoint y;
    y.p_g = vec("p_g", n_gen);
    y.q_g = vec("q_g", n_gen);
    y.p_b = vec("p_b", n_bat);
    y.q_b = vec("q_b", n_bat);
    DemandSnapshot d = DemandSnapshot::Zero(cfg.spec.n_buses);
    d.p_d = vec("p_d", cfg.spec.n_buses);
    d.q_d = vec("q_d", cfg.spec.n_buses);

    DeviationOptions dopt;
    dopt.random_starts = 4;
    dopt.seed = o.seed;
    DeviationResult res = deviation_check(y, d, cfg.spec, dopt);
    if (!res.feasible)
        throw CliError(4, "solve", "no AC-feasible projection found");
    std::cout << "check-pf: v_check=" << res.v_check << "\n";
    return 0;
}

int run_simulate(const CommonOpts& o, const std::string& ref_path,
                 const std::string& scenario, int steps, double noise) {
    RunConfig cfg = read_config(o);
    PeriodicReference ref = reference_for(cfg, o, ref_path);
    auto d = make_nominal_profile(cfg.n_per, cfg.dt, cfg.spec.n_buses, cfg.shape);

    ScenarioTimeline t;
    if (scenario == "nominal") {
        t = make_nominal_timeline(d, cfg.n_per, steps, o.horizon);
    } else if (scenario == "perturbed") {
        PerturbationParams prm;
        prm.noise = noise;
        try {
            t = make_perturbed_profile(d, cfg.n_per, steps, o.horizon, cfg.shape,
                                       o.seed, prm);
        } catch (const ModelError& e) {
            throw CliError(3, "model", e.what());
        }
    } else {
        throw CliError(2, "config", "unknown scenario " + scenario);
    }

    NmpcConfig nc;
    nc.M = o.horizon;
    nc.dt = cfg.dt;
    apply_budget(nc.bnb, o);
    ClosedLoopRecord rec = closed_loop_simulate(cfg.spec, cfg.params, ref, t,
                                                steps, ref.x[0], 0, nc);
    const std::string out = o.out.empty() ? "mgrid_run.csv" : o.out;
    std::ofstream f = open_out(out);
    write_closed_loop_csv(rec, t, cfg.spec, f);
    double vmax = 0.0, dmax = 0.0;
    for (const StepRecord& r : rec.steps) {
        vmax = std::max(vmax, r.v_check);
        dmax = std::max(dmax, r.distance);
    }
    std::cout << "simulate: scenario=" << scenario << " steps="
              << rec.steps.size() << " total_cost=" << rec.total_cost()
              << " max_v_check=" << vmax << " max_distance=" << dmax << " -> "
              << out << "\n";
    if (rec.aborted)
        throw CliError(4, "solve", "closed loop aborted: " + rec.abort_reason);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"microgrid dispatch toolkit"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string ref_path, setpoint_path, scenario = "nominal";
    int k = 0, steps = 48;
    double noise = 0.1;

    CLI::App* periodic =
        app.add_subcommand("periodic", "compute the day-periodic reference");
    add_common(periodic, o);

    CLI::App* nmpc = app.add_subcommand("nmpc", "solve one receding-horizon "
                                                "subproblem");
    add_common(nmpc, o);
    nmpc->add_option("--reference", ref_path, "reference file (default: solve)");
    nmpc->add_option("-k,--step", k, "absolute step index")->capture_default_str();

    CLI::App* checkpf =
        app.add_subcommand("check-pf", "power-flow deviation check of a "
                                       "setpoint file");
    add_common(checkpf, o);
    checkpf->add_option("--setpoint", setpoint_path, "setpoint JSON file")
        ->required();

    CLI::App* simulate =
        app.add_subcommand("simulate", "run the closed loop and write a CSV");
    add_common(simulate, o);
    simulate->add_option("--reference", ref_path,
                         "reference file (default: solve)");
    simulate->add_option("--scenario", scenario, "nominal | perturbed")->capture_default_str();
    simulate->add_option("--steps", steps, "simulated steps")->capture_default_str();
    simulate->add_option("--noise", noise, "perturbation amplitude")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (periodic->parsed()) return run_periodic(o);
        if (nmpc->parsed()) return run_nmpc(o, ref_path, k);
        if (checkpf->parsed()) return run_check_pf(o, setpoint_path);
        if (simulate->parsed())
            return run_simulate(o, ref_path, scenario, steps, noise);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.category << ": " << e.what() << "\n";
        return e.code;
    } catch (const ModelError& e) {
        std::cerr << "error: model: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 4;
    }
    return 1;
}
