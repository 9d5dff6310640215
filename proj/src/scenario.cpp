#include "mgrid/scenario.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace mg {

using nlohmann::json;

std::vector<DemandSnapshot> make_nominal_profile(int n_per, double dt,
                                                 int n_buses,
                                                 const ProfileShape& shape) {
    if (n_per < 1 || dt <= 0.0 || std::abs(n_per * dt - 24.0) > 1e-9)
        throw ModelError("make_nominal_profile: grid must tile 24 hours");
    if (shape.load_bus < 0 || shape.load_bus >= n_buses || shape.pv_bus < 0 ||
        shape.pv_bus >= n_buses)
        throw ModelError("make_nominal_profile: bus index out of range");

    const double tan_phi =
        std::tan(std::acos(shape.power_factor));
    auto bump = [](double t, double center, double width) {
        const double z = (t - center) / width;
        return std::exp(-0.5 * z * z);
    };
    std::vector<DemandSnapshot> d;
    d.reserve(n_per + 1);
    for (int j = 0; j < n_per; ++j) {
        const double t = dt * j;
        DemandSnapshot s = DemandSnapshot::Zero(n_buses);
        const double load = shape.base_load +
                            shape.morning_peak * bump(t, shape.morning_hour,
                                                      shape.morning_width) +
                            shape.evening_peak * bump(t, shape.evening_hour,
                                                      shape.evening_width);
        s.p_d(shape.load_bus) = load;
        s.q_d(shape.load_bus) = load * tan_phi;
        if (t > shape.sunrise && t < shape.sunset)
            s.p_d(shape.pv_bus) =
                -shape.pv_amplitude *
                std::sin(M_PI * (t - shape.sunrise) /
                         (shape.sunset - shape.sunrise));
        d.push_back(std::move(s));
    }
    d.push_back(d.front());
    return d;
}

ScenarioTimeline make_nominal_timeline(const std::vector<DemandSnapshot>& d_per,
                                       int n_per, int steps, int M, int k0) {
    ScenarioTimeline t;
    for (int s = 0; s < steps; ++s) {
        std::vector<DemandSnapshot> f;
        f.reserve(M + 1);
        for (int i = 0; i <= M; ++i)
            f.push_back(d_per[(((k0 + s + i) % n_per) + n_per) % n_per]);
        t.forecast.push_back(std::move(f));
    }
    return t;
}

ScenarioTimeline make_perturbed_profile(const std::vector<DemandSnapshot>& d_per,
                                        int n_per, int steps, int M,
                                        const ProfileShape& shape, unsigned seed,
                                        const PerturbationParams& prm) {
    if (prm.noise < 0.0 || prm.noise >= 1.0 ||
        (1.0 - prm.noise) * prm.day2_load_factor < 0.0)
        throw ModelError("make_perturbed_profile: noise would turn demand negative");

    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(1.0 - prm.noise, 1.0 + prm.noise);
    std::vector<DemandSnapshot> realized;
    realized.reserve(steps + M + 1);
    for (int t = 0; t <= steps + M; ++t) {
        DemandSnapshot s = d_per[t % n_per];
        const double fl = u(rng), fp = u(rng);
        const bool day2 = t >= prm.day2_start && t < prm.day2_end;
        const double lf = fl * (day2 ? prm.day2_load_factor : 1.0);
        const double pf = fp * (day2 ? prm.day2_pv_factor : 1.0);
        s.p_d(shape.load_bus) *= lf;
        s.q_d(shape.load_bus) *= lf;
        s.p_d(shape.pv_bus) *= pf;
        if (s.p_d(shape.load_bus) < 0.0)
            throw ModelError("make_perturbed_profile: negative load demand");
        realized.push_back(std::move(s));
    }

    ScenarioTimeline t;
    for (int s = 0; s < steps; ++s) {
        std::vector<DemandSnapshot> f;
        f.reserve(M + 1);
        for (int i = 0; i < M; ++i) f.push_back(realized[s + i]);
        // the horizon end rests on the periodic profile (recursive-feasibility
        // premise)
        f.push_back(d_per[(s + M) % n_per]);
        t.forecast.push_back(std::move(f));
    }
    return t;
}

namespace {

GeneratorParams gen_from_json(const json& j) {
    GeneratorParams g;
    g.p_min = j.value("p_min", g.p_min);
    g.p_max = j.value("p_max", g.p_max);
    g.q_min = j.value("q_min", g.q_min);
    g.q_max = j.value("q_max", g.q_max);
    g.ramp = j.value("ramp", g.ramp);
    g.min_on = j.value("min_on", g.min_on);
    g.max_on = j.value("max_on", g.max_on);
    g.min_off = j.value("min_off", g.min_off);
    g.max_off = j.value("max_off", g.max_off);
    g.max_startups = j.value("max_startups", g.max_startups);
    g.cost_base = j.value("cost_base", g.cost_base);
    g.cost_fuel = j.value("cost_fuel", g.cost_fuel);
    g.cost_startup = j.value("cost_startup", g.cost_startup);
    return g;
}

BatteryParams bat_from_json(const json& j) {
    BatteryParams b;
    b.p_min = j.value("p_min", b.p_min);
    b.p_max = j.value("p_max", b.p_max);
    b.q_min = j.value("q_min", b.q_min);
    b.q_max = j.value("q_max", b.q_max);
    b.soc_min = j.value("soc_min", b.soc_min);
    b.soc_max = j.value("soc_max", b.soc_max);
    b.eta = j.value("eta", b.eta);
    b.rho = j.value("rho", b.rho);
    b.cost_throughput = j.value("cost_throughput", b.cost_throughput);
    b.cost_soc_aging = j.value("cost_soc_aging", b.cost_soc_aging);
    return b;
}

}  // namespace

RunConfig load_config(std::istream& is) {
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ModelError(std::string("config: ") + e.what());
    }
    RunConfig cfg;
    cfg.n_per = j.value("n_per", 24);
    cfg.dt = j.value("dt", 1.0);

    const json& g = j.at("grid");
    MicrogridSpec& s = cfg.spec;
    s.n_buses = g.at("n_buses").get<int>();
    s.reference_bus = g.at("reference_bus").get<int>();
    for (const json& ln : g.at("lines")) {
        Line line;
        line.from = ln.at("from").get<int>();
        line.to = ln.at("to").get<int>();
        if (ln.contains("r") || ln.contains("x")) {
            const double r = ln.value("r", 0.0), x = ln.value("x", 0.0);
            const double z2 = r * r + x * x;
            if (z2 <= 0.0) throw ModelError("config: line impedance is zero");
            line.g = r / z2;
            line.b = -x / z2;
        } else {
            line.g = ln.at("g").get<double>();
            line.b = ln.at("b").get<double>();
        }
        s.lines.push_back(line);
    }
    s.ground_admittance.assign(s.n_buses, {0.0, 0.0});
    const double vmin = g.value("v_min", 0.95), vmax = g.value("v_max", 1.05);
    const double th = g.value("theta_max_deg", 5.0) * M_PI / 180.0;
    s.v_min = VectorXd::Constant(s.n_buses, vmin);
    s.v_max = VectorXd::Constant(s.n_buses, vmax);
    s.theta_min = VectorXd::Constant(s.n_buses, -th);
    s.theta_max = VectorXd::Constant(s.n_buses, th);
    s.v_min(s.reference_bus) = s.v_max(s.reference_bus) =
        g.value("reference_voltage", 1.0);
    s.theta_min(s.reference_bus) = s.theta_max(s.reference_bus) = 0.0;

    for (const json& gen : j.value("generators", json::array())) {
        s.generators.push_back(gen.at("bus").get<int>());
        cfg.params.generators.push_back(gen_from_json(gen));
    }
    for (const json& bat : j.value("batteries", json::array())) {
        s.batteries.push_back(bat.at("bus").get<int>());
        cfg.params.batteries.push_back(bat_from_json(bat));
    }

    if (j.contains("profile")) {
        const json& p = j["profile"];
        ProfileShape& sh = cfg.shape;
        sh.load_bus = p.value("load_bus", sh.load_bus);
        sh.pv_bus = p.value("pv_bus", sh.pv_bus);
        sh.base_load = p.value("base_load", sh.base_load);
        sh.morning_peak = p.value("morning_peak", sh.morning_peak);
        sh.morning_hour = p.value("morning_hour", sh.morning_hour);
        sh.morning_width = p.value("morning_width", sh.morning_width);
        sh.evening_peak = p.value("evening_peak", sh.evening_peak);
        sh.evening_hour = p.value("evening_hour", sh.evening_hour);
        sh.evening_width = p.value("evening_width", sh.evening_width);
        sh.pv_amplitude = p.value("pv_amplitude", sh.pv_amplitude);
        sh.sunrise = p.value("sunrise", sh.sunrise);
        sh.sunset = p.value("sunset", sh.sunset);
        sh.power_factor = p.value("power_factor", sh.power_factor);
    }
    cfg.spec.validate();
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ModelError("config: cannot open " + path);
    return load_config(f);
}

namespace {

json vec_to_json(const VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

VectorXd vec_from_json(const json& a) {
    VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
    return v;
}

}  // namespace

void save_reference(const PeriodicReference& ref, std::ostream& os) {
    json j;
    j["n_per"] = ref.n_per;
    j["dt"] = ref.dt;
    j["objective"] = ref.objective;
    for (const DispatchState& x : ref.x) {
        json s;
        s["p_g"] = vec_to_json(x.p_g);
        s["q_g"] = vec_to_json(x.q_g);
        s["p_b"] = vec_to_json(x.p_b);
        s["q_b"] = vec_to_json(x.q_b);
        s["on"] = x.on;
        s["counter"] = x.counter;
        s["soc"] = vec_to_json(x.soc);
        j["x"].push_back(std::move(s));
    }
    for (const ControlInput& u : ref.u) {
        json s;
        s["dp_g"] = vec_to_json(u.dp_g);
        s["dq_g"] = vec_to_json(u.dq_g);
        s["dp_b"] = vec_to_json(u.dp_b);
        s["dq_b"] = vec_to_json(u.dq_b);
        s["sw"] = u.sw;
        j["u"].push_back(std::move(s));
    }
    for (const Eigen::VectorXd& l : ref.lift) j["lift"].push_back(vec_to_json(l));
    os << j.dump(1) << "\n";
}

PeriodicReference load_reference(std::istream& is) {
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ModelError(std::string("reference file: ") + e.what());
    }
    PeriodicReference ref;
    ref.n_per = j.at("n_per").get<int>();
    ref.dt = j.at("dt").get<double>();
    ref.objective = j.at("objective").get<double>();
    for (const json& s : j.at("x")) {
        DispatchState x;
        x.p_g = vec_from_json(s.at("p_g"));
        x.q_g = vec_from_json(s.at("q_g"));
        x.p_b = vec_from_json(s.at("p_b"));
        x.q_b = vec_from_json(s.at("q_b"));
        x.on = s.at("on").get<std::vector<int>>();
        x.counter = s.at("counter").get<std::vector<int>>();
        x.soc = vec_from_json(s.at("soc"));
        ref.x.push_back(std::move(x));
    }
    for (const json& s : j.at("u")) {
        ControlInput u;
        u.dp_g = vec_from_json(s.at("dp_g"));
        u.dq_g = vec_from_json(s.at("dq_g"));
        u.dp_b = vec_from_json(s.at("dp_b"));
        u.dq_b = vec_from_json(s.at("dq_b"));
        u.sw = s.at("sw").get<std::vector<int>>();
        ref.u.push_back(std::move(u));
    }
    for (const json& l : j.value("lift", json::array()))
        ref.lift.push_back(vec_from_json(l));
    ref.build_tables();
    return ref;
}

void write_closed_loop_csv(const ClosedLoopRecord& rec,
                           const ScenarioTimeline& scenario,
                           const MicrogridSpec& spec, std::ostream& os) {
    const int n_gen = static_cast<int>(spec.generators.size());
    const int n_bat = static_cast<int>(spec.batteries.size());
    os << "step,p_load,q_load,p_pv";
    for (int g = 0; g < n_gen; ++g)
        os << ",p_g" << g << ",q_g" << g << ",on" << g << ",cnt" << g << ",sw" << g;
    for (int b = 0; b < n_bat; ++b)
        os << ",p_b" << b << ",q_b" << b << ",soc" << b;
    os << ",stage_cost,cumulative_cost,v_check,distance,status,nodes\n";
    os.precision(12);
    for (size_t s = 0; s < rec.steps.size(); ++s) {
        const StepRecord& r = rec.steps[s];
        const DemandSnapshot& d = scenario.forecast[s][0];
        double pl = 0.0, ql = 0.0, pv = 0.0;
        for (int l = 0; l < spec.n_buses; ++l) {
            pl += std::max(d.p_d(l), 0.0);
            ql += d.q_d(l);
            pv -= std::min(d.p_d(l), 0.0);
        }
        os << r.k << "," << pl << "," << ql << "," << pv;
        for (int g = 0; g < n_gen; ++g)
            os << "," << r.state.p_g(g) << "," << r.state.q_g(g) << ","
               << r.state.on[g] << "," << r.state.counter[g] << ","
               << r.input.sw[g];
        for (int b = 0; b < n_bat; ++b)
            os << "," << r.state.p_b(b) << "," << r.state.q_b(b) << ","
               << r.state.soc(b);
        os << "," << r.stage_cost << "," << r.cumulative_cost << "," << r.v_check
           << "," << r.distance << "," << conic::to_string(r.status) << ","
           << r.nodes << "\n";
    }
}

}  // namespace mg
