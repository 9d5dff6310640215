#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgrid/nmpc.hpp"

using namespace mg;

namespace {

MicrogridSpec three_bus() {
    MicrogridSpec s;
    s.n_buses = 3;
    s.generators = {0};
    s.batteries = {1};
    s.reference_bus = 2;
    s.lines = {{0, 2, 3.8462, -19.2308},
               {1, 2, 3.8462, -19.2308},
               {0, 1, 1.9231, -9.6154}};
    s.ground_admittance.assign(3, {0.0, 0.0});
    s.v_min = VectorXd::Constant(3, 0.95);
    s.v_max = VectorXd::Constant(3, 1.05);
    s.v_min(2) = s.v_max(2) = 1.0;
    s.theta_min = VectorXd::Constant(3, -0.0873);
    s.theta_max = VectorXd::Constant(3, 0.0873);
    s.theta_min(2) = s.theta_max(2) = 0.0;
    return s;
}

DeviceParams default_params() {
    DeviceParams p;
    p.generators.push_back({});
    p.batteries.push_back({});
    return p;
}

std::vector<DemandSnapshot> flat_demand(int n_per, double level) {
    std::vector<DemandSnapshot> d(n_per + 1, DemandSnapshot::Zero(3));
    for (auto& s : d) {
        s.p_d(2) = level;
        s.q_d(2) = 0.2 * level;
    }
    return d;
}

std::vector<DemandSnapshot> wave_demand(int n_per) {
    std::vector<DemandSnapshot> d(n_per + 1, DemandSnapshot::Zero(3));
    for (int j = 0; j <= n_per; ++j) {
        const double lvl =
            1.8 + 0.7 * std::sin(2.0 * M_PI * (j % n_per) / n_per);
        d[j].p_d(2) = lvl;
        d[j].q_d(2) = 0.2 * lvl;
    }
    return d;
}

ScenarioTimeline nominal_timeline(const std::vector<DemandSnapshot>& d_per,
                                  int n_per, int steps, int M, int k0) {
    ScenarioTimeline t;
    for (int s = 0; s < steps; ++s) {
        std::vector<DemandSnapshot> f;
        for (int i = 0; i <= M; ++i)
            f.push_back(d_per[((k0 + s + i) % n_per + n_per) % n_per]);
        t.forecast.push_back(std::move(f));
    }
    return t;
}

PeriodicReference toy_reference(int n_per, const std::vector<int>& switches) {
    PeriodicReference ref;
    ref.n_per = n_per;
    ref.dt = 1.0;
    for (int j = 0; j < n_per; ++j) {
        ref.x.push_back(DispatchState::Zero(1, 1));
        ControlInput u = ControlInput::Zero(1, 1);
        u.sw[0] = switches[j];
        ref.u.push_back(u);
    }
    ref.build_tables();
    return ref;
}

}  // namespace

TEST_CASE("switch lookup tables on a hand-built reference") {
    std::vector<int> sw(24, 0);
    sw[5] = 1;
    PeriodicReference ref = toy_reference(24, sw);
    CHECK(ref.time_to_next_switch(0, 3) == 2);
    CHECK(ref.time_to_next_switch(0, 5) == 0);
    CHECK(ref.time_to_next_switch(0, 6) == 23);
    CHECK(ref.switch_count(0, 0, 23) == 1);
    CHECK(ref.switch_count(0, 6, 6 + 23) == 1);  // any day-long window
    CHECK(ref.switch_count(0, 0, 4) == 0);
    CHECK(ref.switch_count(0, 5, 5) == 1);
    CHECK(ref.switch_count(0, 0, 2 * 24 - 1) == 2);

    PeriodicReference quiet = toy_reference(24, std::vector<int>(24, 0));
    CHECK(quiet.time_to_next_switch(0, 0) == -1);
}

TEST_CASE("constant demand keeps the generator on with a unit counter drift") {
    MicrogridSpec s = three_bus();
    DeviceParams prm = default_params();
    const int n_per = 4;
    PeriodicReference ref =
        solve_periodic_ocp(s, prm, flat_demand(n_per, 1.5), n_per, 1.0);

    for (int j = 0; j < n_per; ++j) {
        CHECK(ref.x[j].on[0] == 1);
        CHECK(ref.u[j].sw[0] == 0);
        CHECK(ref.x[j].p_g(0) >= 1.0 - 1e-6);
    }
    CHECK(ref.time_to_next_switch(0, 0) == -1);

    // replaying one period maps the start state onto itself
    DispatchState x = ref.x[0];
    for (int j = 0; j < n_per; ++j) x = step_dynamics(x, ref.u[j], prm, 1.0);
    CHECK((x.p_g - ref.x[0].p_g).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((x.p_b - ref.x[0].p_b).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((x.soc - ref.x[0].soc).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(x.on[0] == ref.x[0].on[0]);
    CHECK(x.counter[0] == ref.x[0].counter[0] + n_per);  // modular periodicity
}

TEST_CASE("varying demand reference is periodic and respects the budget") {
    MicrogridSpec s = three_bus();
    DeviceParams prm = default_params();
    const int n_per = 6;
    PeriodicReference ref =
        solve_periodic_ocp(s, prm, wave_demand(n_per), n_per, 1.0);

    DispatchState x = ref.x[0];
    double cost = 0.0;
    for (int j = 0; j < n_per; ++j) {
        cost += stage_cost(x, ref.u[j], prm, 1.0);
        x = step_dynamics(x, ref.u[j], prm, 1.0);
    }
    CHECK((x.p_g - ref.x[0].p_g).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((x.soc - ref.x[0].soc).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(x.on[0] == ref.x[0].on[0]);
    CHECK((x.counter[0] - ref.x[0].counter[0]) % n_per == 0);
    CHECK(ref.switch_count(0, 0, n_per - 1) / 2 <=
          prm.generators[0].max_startups);
    // objective covers exactly the replayed stage costs
    CHECK(cost == doctest::Approx(ref.objective).epsilon(2e-4));
}

TEST_CASE("nominal subproblem reproduces the reference trajectory") {
    MicrogridSpec s = three_bus();
    DeviceParams prm = default_params();
    const int n_per = 6;
    std::vector<DemandSnapshot> d = wave_demand(n_per);
    PeriodicReference ref = solve_periodic_ocp(s, prm, d, n_per, 1.0);

    NmpcConfig cfg;
    cfg.M = n_per;
    cfg.dt = 1.0;
    ScenarioTimeline t = nominal_timeline(d, n_per, 1, cfg.M, 0);
    Subproblem sub =
        build_subproblem(ref.x[0], 0, t.forecast[0], ref, s, prm, cfg);
    conic::Solution sol = conic::solve_miqcp(sub.prog, cfg.bnb);
    REQUIRE(sol.status == conic::SolveStatus::Optimal);
    CHECK(sol.objective <= ref.objective + 1e-4 * (1.0 + std::abs(ref.objective)));

    DispatchState xt = sub.enc.state_at(sol.x, cfg.M);
    CHECK((xt.p_g - ref.x[0].p_g).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((xt.soc - ref.x[0].soc).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(xt.on[0] == ref.x[0].on[0]);
}

TEST_CASE("closed loop stays on the reference and candidates stay feasible") {
    MicrogridSpec s = three_bus();
    DeviceParams prm = default_params();
    const int n_per = 6;
    std::vector<DemandSnapshot> d = wave_demand(n_per);
    PeriodicReference ref = solve_periodic_ocp(s, prm, d, n_per, 1.0);

    NmpcConfig cfg;
    cfg.M = n_per;
    cfg.dt = 1.0;
    const int steps = 4;
    ScenarioTimeline t = nominal_timeline(d, n_per, steps, cfg.M, 0);
    ClosedLoopRecord rec =
        closed_loop_simulate(s, prm, ref, t, steps, ref.x[0], 0, cfg);

    REQUIRE_FALSE(rec.aborted);
    REQUIRE(static_cast<int>(rec.steps.size()) == steps);
    double cum = 0.0;
    for (const StepRecord& r : rec.steps) {
        CHECK(r.distance <= 1e-6);
        cum += r.stage_cost;
        CHECK(r.cumulative_cost == doctest::Approx(cum).epsilon(1e-12));
        if (r.candidate_checked) CHECK(r.candidate_ok);
        CHECK(r.v_check <= 1e-3);  // wide test boxes, looser than production
        CHECK(r.v_check >= 0.0);
    }
}
