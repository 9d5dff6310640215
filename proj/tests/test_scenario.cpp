#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mgrid/scenario.hpp"

using namespace mg;

namespace {

const char* kConfig = R"({
  "n_per": 24,
  "dt": 1.0,
  "grid": {
    "n_buses": 6,
    "reference_bus": 5,
    "lines": [
      {"from": 0, "to": 4, "r": 0.01, "x": 0.05},
      {"from": 1, "to": 4, "r": 0.01, "x": 0.05},
      {"from": 2, "to": 4, "r": 0.01, "x": 0.05},
      {"from": 3, "to": 4, "r": 0.01, "x": 0.05},
      {"from": 4, "to": 5, "r": 0.01, "x": 0.05}
    ],
    "v_min": 0.95, "v_max": 1.05, "theta_max_deg": 5.0
  },
  "generators": [
    {"bus": 0},
    {"bus": 1, "cost_base": 4.8, "cost_fuel": 19.9, "cost_startup": 5.5}
  ],
  "batteries": [{"bus": 2}],
  "profile": {"load_bus": 5, "pv_bus": 3}
})";

}  // namespace

TEST_CASE("nominal profile is periodic, dark at night and peaked in the morning") {
    ProfileShape shape;
    auto d = make_nominal_profile(24, 1.0, 6, shape);
    REQUIRE(d.size() == 25);
    CHECK((d[24].p_d - d[0].p_d).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((d[24].q_d - d[0].q_d).lpNorm<Eigen::Infinity>() == 0.0);

    double mean = 0.0;
    for (int j = 0; j < 24; ++j) {
        // only the load and pv buses carry demand
        for (int l = 0; l < 6; ++l)
            if (l != shape.load_bus && l != shape.pv_bus) {
                CHECK(d[j].p_d(l) == 0.0);
                CHECK(d[j].q_d(l) == 0.0);
            }
        CHECK(d[j].p_d(shape.load_bus) >= shape.base_load - 1e-12);
        CHECK(d[j].p_d(shape.pv_bus) <= 0.0);
        const double t = static_cast<double>(j);
        if (t <= shape.sunrise || t >= shape.sunset)
            CHECK(d[j].p_d(shape.pv_bus) == 0.0);
        mean += d[j].p_d(shape.load_bus) / 24.0;
    }
    CHECK(d[8].p_d(shape.load_bus) > mean);   // morning peak
    CHECK(d[12].p_d(shape.pv_bus) ==
          doctest::Approx(-shape.pv_amplitude).epsilon(1e-12));
    // reactive load tracks the power factor
    const double tan_phi = std::tan(std::acos(shape.power_factor));
    for (int j = 0; j < 24; ++j)
        CHECK(d[j].q_d(shape.load_bus) ==
              doctest::Approx(d[j].p_d(shape.load_bus) * tan_phi));

    CHECK_THROWS_AS(make_nominal_profile(10, 1.0, 6, shape), ModelError);
}

TEST_CASE("nominal timeline wraps the periodic profile") {
    auto d = make_nominal_profile(24, 1.0, 6);
    ScenarioTimeline t = make_nominal_timeline(d, 24, 30, 12, 5);
    REQUIRE(t.forecast.size() == 30);
    for (int s = 0; s < 30; ++s) {
        REQUIRE(t.forecast[s].size() == 13);
        for (int i = 0; i <= 12; ++i) {
            const auto& want = d[(5 + s + i) % 24];
            CHECK((t.forecast[s][i].p_d - want.p_d).lpNorm<Eigen::Infinity>() ==
                  0.0);
        }
    }
}

TEST_CASE("perturbed timeline: determinism, consistency and day-2 drop") {
    ProfileShape shape;
    auto d = make_nominal_profile(24, 1.0, 6, shape);
    PerturbationParams prm;
    ScenarioTimeline a = make_perturbed_profile(d, 24, 48, 12, shape, 42, prm);
    ScenarioTimeline b = make_perturbed_profile(d, 24, 48, 12, shape, 42, prm);
    ScenarioTimeline c = make_perturbed_profile(d, 24, 48, 12, shape, 43, prm);
    REQUIRE(a.forecast.size() == 48);

    bool differs = false;
    for (int s = 0; s < 48; ++s)
        for (int i = 0; i <= 12; ++i) {
            CHECK((a.forecast[s][i].p_d - b.forecast[s][i].p_d)
                      .lpNorm<Eigen::Infinity>() == 0.0);
            if ((a.forecast[s][i].p_d - c.forecast[s][i].p_d)
                    .lpNorm<Eigen::Infinity>() > 0.0)
                differs = true;
        }
    CHECK(differs);

    // forecasts agree with the next step's realization except at the clamped end
    for (int s = 0; s + 1 < 48; ++s)
        for (int i = 1; i < 12; ++i)
            CHECK((a.forecast[s][i].p_d - a.forecast[s + 1][i - 1].p_d)
                      .lpNorm<Eigen::Infinity>() == 0.0);
    for (int s = 0; s < 48; ++s) {
        CHECK((a.forecast[s][12].p_d - d[(s + 12) % 24].p_d)
                  .lpNorm<Eigen::Infinity>() == 0.0);
        CHECK(a.forecast[s][0].p_d(shape.load_bus) >= 0.0);
    }

    // day-2 realizations carry less load and more solar on average
    double l1 = 0.0, l2 = 0.0, pv1 = 0.0, pv2 = 0.0;
    for (int s = 0; s < 24; ++s) {
        l1 += a.forecast[s][0].p_d(shape.load_bus);
        pv1 -= a.forecast[s][0].p_d(shape.pv_bus);
        l2 += a.forecast[24 + s][0].p_d(shape.load_bus);
        pv2 -= a.forecast[24 + s][0].p_d(shape.pv_bus);
    }
    CHECK(l2 < l1);
    CHECK(pv2 > pv1);

    // zero noise outside the day-2 window reduces to the nominal profile
    PerturbationParams quiet;
    quiet.noise = 0.0;
    ScenarioTimeline q = make_perturbed_profile(d, 24, 24, 6, shape, 1, quiet);
    for (int s = 0; s < 24; ++s)
        CHECK((q.forecast[s][0].p_d - d[s % 24].p_d).lpNorm<Eigen::Infinity>() ==
              0.0);

    PerturbationParams bad;
    bad.noise = 1.5;
    CHECK_THROWS_AS(make_perturbed_profile(d, 24, 8, 4, shape, 1, bad),
                    ModelError);
}

TEST_CASE("config parsing fills grid, devices and profile") {
    std::istringstream is(kConfig);
    RunConfig cfg = load_config(is);
    CHECK(cfg.n_per == 24);
    CHECK(cfg.dt == 1.0);
    CHECK(cfg.spec.n_buses == 6);
    CHECK(cfg.spec.reference_bus == 5);
    REQUIRE(cfg.spec.lines.size() == 5);
    CHECK(cfg.spec.lines[0].g == doctest::Approx(3.8462).epsilon(1e-4));
    CHECK(cfg.spec.lines[0].b == doctest::Approx(-19.2308).epsilon(1e-4));
    CHECK(cfg.spec.v_min(0) == 0.95);
    CHECK(cfg.spec.v_min(5) == 1.0);
    CHECK(cfg.spec.v_max(5) == 1.0);
    CHECK(cfg.spec.theta_max(0) == doctest::Approx(5.0 * M_PI / 180.0));
    CHECK(cfg.spec.theta_min(5) == 0.0);
    REQUIRE(cfg.params.generators.size() == 2);
    CHECK(cfg.params.generators[0].cost_fuel == 20.0);   // defaults kept
    CHECK(cfg.params.generators[1].cost_fuel == 19.9);
    CHECK(cfg.params.generators[1].cost_startup == 5.5);
    REQUIRE(cfg.params.batteries.size() == 1);
    CHECK(cfg.params.batteries[0].eta == 0.95);
    CHECK(cfg.shape.load_bus == 5);

    std::istringstream broken("{not json");
    CHECK_THROWS_AS(load_config(broken), ModelError);
}

TEST_CASE("reference file round trip preserves trajectory and tables") {
    PeriodicReference ref;
    ref.n_per = 4;
    ref.dt = 1.0;
    ref.objective = 123.456789012345;
    for (int j = 0; j < 4; ++j) {
        DispatchState x = DispatchState::Zero(2, 1);
        x.p_g << 1.5 + 0.1 * j, 2.0;
        x.q_g << 0.3, -0.2;
        x.on = {1, j % 2};
        x.counter = {j + 3, 1};
        x.p_b << 0.25 * j - 0.3;
        x.q_b << 0.1;
        x.soc << 2.0 + 0.01 * j;
        ref.x.push_back(x);
        ControlInput u = ControlInput::Zero(2, 1);
        u.dp_g << 0.1, 0.0;
        u.dq_g << 0.0, 0.05;
        u.sw = {0, 1};
        u.dp_b << 0.25;
        u.dq_b << 0.0;
        ref.u.push_back(u);
        ref.lift.push_back(Eigen::VectorXd::LinSpaced(5, 0.0, 1.0 + j));
    }
    ref.build_tables();

    std::stringstream ss;
    save_reference(ref, ss);
    PeriodicReference back = load_reference(ss);
    CHECK(back.n_per == ref.n_per);
    CHECK(back.dt == ref.dt);
    CHECK(back.objective == ref.objective);
    for (int j = 0; j < 4; ++j) {
        CHECK((back.x[j].p_g - ref.x[j].p_g).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK((back.x[j].soc - ref.x[j].soc).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK(back.x[j].on == ref.x[j].on);
        CHECK(back.x[j].counter == ref.x[j].counter);
        CHECK(back.u[j].sw == ref.u[j].sw);
        CHECK((back.u[j].dp_b - ref.u[j].dp_b).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK((back.lift[j] - ref.lift[j]).lpNorm<Eigen::Infinity>() == 0.0);
    }
    // tables rebuilt on load
    CHECK(back.time_to_next_switch(1, 0) == ref.time_to_next_switch(1, 0));
    CHECK(back.switch_count(1, 0, 7) == ref.switch_count(1, 0, 7));
}

TEST_CASE("closed-loop CSV has a header and one row per step") {
    MicrogridSpec s;
    s.n_buses = 2;
    s.generators = {0};
    s.reference_bus = 1;
    ClosedLoopRecord rec;
    StepRecord r;
    r.k = 7;
    r.state = DispatchState::Zero(1, 0);
    r.state.p_g << 1.5;
    r.input = ControlInput::Zero(1, 0);
    r.stage_cost = 35.0;
    r.cumulative_cost = 35.0;
    r.status = conic::SolveStatus::Optimal;
    rec.steps.push_back(r);
    ScenarioTimeline t;
    DemandSnapshot d = DemandSnapshot::Zero(2);
    d.p_d(1) = 1.5;
    t.forecast.push_back({d});

    std::ostringstream os;
    write_closed_loop_csv(rec, t, s, os);
    std::istringstream is(os.str());
    std::string header, row, extra;
    REQUIRE(std::getline(is, header));
    CHECK(header ==
          "step,p_load,q_load,p_pv,p_g0,q_g0,on0,cnt0,sw0,"
          "stage_cost,cumulative_cost,v_check,distance,status,nodes");
    REQUIRE(std::getline(is, row));
    CHECK(row.substr(0, 10) == "7,1.5,0,0,");
    CHECK_FALSE(std::getline(is, extra));
}
