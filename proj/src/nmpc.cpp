#include "mgrid/nmpc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mg {

using conic::ConicProgram;
using conic::LinExpr;

int PeriodicReference::time_to_next_switch(int l, int j) const {
    return tau_[l][mod(j)];
}

int PeriodicReference::switch_count(int l, int j_start, int j_end) const {
    if (j_start > j_end) throw ModelError("switch_count: inverted interval");
    // prefix over whole periods plus the two partial ends
    auto upto = [&](int j) {  // switches at instants 0..j-1 (j may exceed n_per)
        const int full = j / n_per, rest = j % n_per;
        return full * prefix_[l][n_per] + prefix_[l][rest];
    };
    return upto(j_end + 1) - upto(j_start);
}

void PeriodicReference::build_tables() {
    const int n_gen = static_cast<int>(u.empty() ? 0 : u[0].sw.size());
    tau_.assign(n_gen, std::vector<int>(n_per, -1));
    prefix_.assign(n_gen, std::vector<int>(n_per + 1, 0));
    for (int l = 0; l < n_gen; ++l) {
        for (int j = 0; j < n_per; ++j)
            prefix_[l][j + 1] = prefix_[l][j] + u[j].sw[l];
        if (prefix_[l][n_per] == 0) continue;  // never switches
        for (int j = 0; j < n_per; ++j)
            for (int s = 0; s < n_per; ++s)
                if (u[mod(j + s)].sw[l]) {
                    tau_[l][j] = s;
                    break;
                }
    }
}

namespace {

int lift_width(const MicrogridSpec& spec) {
    return 3 * spec.n_buses + 10 * static_cast<int>(spec.lines.size());
}

void pin_state(ConicProgram& prog, const HorizonEncoding& enc,
               const DispatchState& x0, int i) {
    for (int g = 0; g < enc.n_gen; ++g) {
        prog.set_bounds(enc.p_g(i, g), x0.p_g(g), x0.p_g(g));
        prog.set_bounds(enc.q_g(i, g), x0.q_g(g), x0.q_g(g));
        prog.set_bounds(enc.on(i, g), x0.on[g], x0.on[g]);
        prog.set_bounds(enc.cnt(i, g), x0.counter[g], x0.counter[g]);
    }
    for (int b = 0; b < enc.n_bat; ++b) {
        prog.set_bounds(enc.p_b(i, b), x0.p_b(b), x0.p_b(b));
        prog.set_bounds(enc.q_b(i, b), x0.q_b(b), x0.q_b(b));
        prog.set_bounds(enc.soc(i, b), x0.soc(b), x0.soc(b));
    }
}

// The reference orbit itself, with mode counters propagated forward from x0,
// assembled as a full-length assignment for a subproblem that starts on the
// orbit. Seeds the first closed-loop search the same way shifted solutions
// seed all later ones.
Eigen::VectorXd orbit_candidate(const Subproblem& sub, int k,
                                const PeriodicReference& ref,
                                const DispatchState& x0) {
    const HorizonEncoding& enc = sub.enc;
    const int M = enc.M;
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(sub.prog.num_vars());
    const int lw = enc.qc.empty() ? 0 : static_cast<int>(ref.lift[0].size());
    std::vector<int> cnt = x0.counter;
    for (int i = 0; i <= M; ++i) {
        const DispatchState& xr = i == 0 ? x0 : ref.x[ref.mod(k + i)];
        for (int g = 0; g < enc.n_gen; ++g) {
            cand(enc.p_g(i, g)) = xr.p_g(g);
            cand(enc.q_g(i, g)) = xr.q_g(g);
            cand(enc.on(i, g)) = xr.on[g];
            cand(enc.cnt(i, g)) = cnt[g];
        }
        for (int b = 0; b < enc.n_bat; ++b) {
            cand(enc.p_b(i, b)) = xr.p_b(b);
            cand(enc.q_b(i, b)) = xr.q_b(b);
            cand(enc.soc(i, b)) = xr.soc(b);
        }
        if (!enc.qc.empty())
            cand.segment(enc.qc[i].v0, lw) = ref.lift[ref.mod(k + i)];
        if (i == M) break;
        const ControlInput& ur = ref.u[ref.mod(k + i)];
        const DispatchState& xn = ref.x[ref.mod(k + i + 1)];
        for (int g = 0; g < enc.n_gen; ++g) {
            cand(enc.dp_g(i, g)) = xn.p_g(g) - xr.p_g(g);
            cand(enc.dq_g(i, g)) = xn.q_g(g) - xr.q_g(g);
            cand(enc.sw(i, g)) = ur.sw[g];
            cnt[g] = ur.sw[g] ? 0 : cnt[g] + 1;
        }
        for (int b = 0; b < enc.n_bat; ++b) {
            cand(enc.dp_b(i, b)) = xn.p_b(b) - xr.p_b(b);
            cand(enc.dq_b(i, b)) = xn.q_b(b) - xr.q_b(b);
            cand(enc.abs_p_b(i, b)) = std::abs(xn.p_b(b));
        }
    }
    return cand;
}

}  // namespace

PeriodicReference solve_periodic_ocp(const MicrogridSpec& spec,
                                     const DeviceParams& params,
                                     const std::vector<DemandSnapshot>& d_per,
                                     int n_per, double dt, const OcpOptions& opts) {
    if (static_cast<int>(d_per.size()) != n_per + 1)
        throw ModelError("solve_periodic_ocp: demand needs n_per+1 entries");
    for (int l = 0; l < spec.n_buses; ++l)
        if (std::abs(d_per[0].p_d(l) - d_per[n_per].p_d(l)) > 1e-12 ||
            std::abs(d_per[0].q_d(l) - d_per[n_per].q_d(l)) > 1e-12)
            throw ModelError("solve_periodic_ocp: demand endpoints differ");

    ConicProgram prog;
    EncodeOptions eo;
    eo.counter_cap = opts.counter_cap;
    HorizonEncoding enc = encode_horizon(prog, spec, params, d_per, n_per, dt, eo);
    const int M = n_per;

    std::vector<int> mods;
    for (int g = 0; g < enc.n_gen; ++g) {
        prog.add_eq({{enc.p_g(M, g), 1.0}, {enc.p_g(0, g), -1.0}}, 0.0, "periodic");
        prog.add_eq({{enc.q_g(M, g), 1.0}, {enc.q_g(0, g), -1.0}}, 0.0, "periodic");
        prog.add_eq({{enc.on(M, g), 1.0}, {enc.on(0, g), -1.0}}, 0.0, "periodic");
        const double cap = static_cast<double>(eo.counter_cap);
        const int mod = prog.add_var("cntmod" + std::to_string(g), -cap / M,
                                     cap / M, conic::VarType::Integer);
        mods.push_back(mod);
        prog.add_eq({{enc.cnt(M, g), 1.0}, {enc.cnt(0, g), -1.0},
                     {mod, -static_cast<double>(M)}}, 0.0, "periodic");

        LinExpr budget{{enc.on(M, g), 1.0}, {enc.on(0, g), -1.0}};
        for (int j = 0; j < M; ++j) budget.push_back({enc.sw(j, g), 1.0});
        prog.add_le(std::move(budget),
                    2.0 * params.generators[g].max_startups, "window");
    }
    for (int b = 0; b < enc.n_bat; ++b) {
        prog.add_eq({{enc.p_b(M, b), 1.0}, {enc.p_b(0, b), -1.0}}, 0.0, "periodic");
        prog.add_eq({{enc.q_b(M, b), 1.0}, {enc.q_b(0, b), -1.0}}, 0.0, "periodic");
        prog.add_eq({{enc.soc(M, b), 1.0}, {enc.soc(0, b), -1.0}}, 0.0, "periodic");
    }

    // Seed the search with the cheapest feasible switch-free commitment: for
    // each nonempty generator subset, fix the schedule and solve the
    // continuous remainder. Gives the tree an incumbent before any branching.
    conic::BnBOptions bnb = opts.bnb;
    if (!bnb.incumbent_hint.has_value() && enc.n_gen <= 8) {
        double best = conic::kInf;
        for (unsigned mask = 1; mask < (1u << enc.n_gen); ++mask) {
            ConicProgram fixed = prog;
            for (int g = 0; g < enc.n_gen; ++g) {
                const double on = (mask >> g) & 1u ? 1.0 : 0.0;
                for (int i = 0; i <= M; ++i) {
                    fixed.set_bounds(enc.on(i, g), on, on);
                    fixed.set_bounds(enc.cnt(i, g), i + 1.0, i + 1.0);
                }
                for (int j = 0; j < M; ++j)
                    fixed.set_bounds(enc.sw(j, g), 0.0, 0.0);
                fixed.set_bounds(mods[g], 1.0, 1.0);
            }
            conic::Solution h = conic::solve_continuous(fixed, bnb.ipm);
            if (h.status == conic::SolveStatus::Optimal &&
                prog.max_violation(h.x) <= bnb.feas_tol && h.objective < best) {
                best = h.objective;
                bnb.incumbent_hint = h.x;
            }
        }
    }

    conic::Solution sol = conic::solve_miqcp(prog, bnb);
    if (sol.status != conic::SolveStatus::Optimal &&
        sol.status != conic::SolveStatus::GapLimit)
        throw ModelError(std::string("solve_periodic_ocp: ") + conic::to_string(sol.status));

    PeriodicReference ref;
    ref.n_per = n_per;
    ref.dt = dt;
    ref.objective = sol.objective;
    const int w = lift_width(spec);
    for (int j = 0; j < n_per; ++j) {
        ref.x.push_back(enc.state_at(sol.x, j));
        ref.u.push_back(enc.control_at(sol.x, j));
        ref.lift.push_back(sol.x.segment(enc.qc[j].v0, w));
    }
    ref.build_tables();
    return ref;
}

Subproblem build_subproblem(const DispatchState& x0, int k,
                            const std::vector<DemandSnapshot>& forecast,
                            const PeriodicReference& ref,
                            const MicrogridSpec& spec, const DeviceParams& params,
                            const NmpcConfig& cfg) {
    const int M = cfg.M, n_per = ref.n_per;
    if (static_cast<int>(forecast.size()) != M + 1)
        throw ModelError("build_subproblem: forecast needs M+1 entries");

    Subproblem sub;
    EncodeOptions eo;
    int max_cnt = 0;
    for (int c : x0.counter) max_cnt = std::max(max_cnt, c);
    eo.counter_cap = std::max(cfg.counter_cap, max_cnt + M + 1);
    eo.first_balance_instant = 1;  // instant 0 is the already-realized state
    sub.enc = encode_horizon(sub.prog, spec, params, forecast, M, cfg.dt, eo);
    const HorizonEncoding& enc = sub.enc;
    ConicProgram& prog = sub.prog;

    pin_state(prog, enc, x0, 0);

    const int wt = ref.mod(M + k);  // reference instant at the horizon end
    const DispatchState xt = ref.x[wt];
    for (int g = 0; g < enc.n_gen; ++g) {
        prog.add_eq({{enc.p_g(M, g), 1.0}}, xt.p_g(g), "terminal");
        prog.add_eq({{enc.q_g(M, g), 1.0}}, xt.q_g(g), "terminal");
        prog.add_eq({{enc.on(M, g), 1.0}}, xt.on[g], "terminal");
    }
    for (int b = 0; b < enc.n_bat; ++b) {
        if (cfg.terminal_soc_equality)
            prog.add_eq({{enc.soc(M, b), 1.0}}, xt.soc(b), "terminal");
        else
            prog.add_le({{enc.soc(M, b), -1.0}}, -xt.soc(b), "terminal");
    }

    // the next reference switch must not arrive at a forbidden dwell
    for (int g = 0; g < enc.n_gen; ++g) {
        const GeneratorParams& gp = params.generators[g];
        const int tau = ref.time_to_next_switch(g, wt);
        if (tau < 0) continue;
        const bool leaving_off = xt.on[g] == 0;
        const int lo = leaving_off ? gp.min_off : gp.min_on;
        const int hi = leaving_off ? gp.max_off : gp.max_on;
        prog.add_le({{enc.cnt(M, g), -1.0}}, static_cast<double>(tau - lo),
                    "extend");
        if (hi >= 0)
            prog.add_le({{enc.cnt(M, g), 1.0}}, static_cast<double>(hi - tau),
                        "extend");
    }

    // day-long sliding startup windows, tail counted on the reference
    for (int g = 0; g < enc.n_gen; ++g)
        for (int i = 0; i < M; ++i) {
            LinExpr row{{enc.on(i, g), -1.0}};
            double rhs = 2.0 * params.generators[g].max_startups;
            for (int j = i; j < std::min(i + n_per, M); ++j)
                row.push_back({enc.sw(j, g), 1.0});
            if (i + n_per > M)
                rhs -= ref.switch_count(g, M + k, i + n_per - 1 + k);
            if (i + n_per <= M)
                row.push_back({enc.on(i + n_per, g), 1.0});
            else
                rhs -= ref.x[ref.mod(i + n_per + k)].on[g];
            prog.add_le(std::move(row), rhs, "window");
        }

    return sub;
}

Eigen::VectorXd extend_with_reference(const Eigen::VectorXd& sol,
                                      const Subproblem& sub, int k,
                                      const PeriodicReference& ref,
                                      const DeviceParams& params) {
    const HorizonEncoding& enc = sub.enc;
    const int M = enc.M;
    const int ss = enc.state_stride(), cs = enc.control_stride();
    Eigen::VectorXd cand = sol;

    for (int i = 0; i < M; ++i)
        cand.segment(enc.state0 + i * ss, ss) =
            sol.segment(enc.state0 + (i + 1) * ss, ss);
    for (int i = 0; i + 1 < M; ++i)
        cand.segment(enc.control0 + i * cs, cs) =
            sol.segment(enc.control0 + (i + 1) * cs, cs);
    const int lw = enc.qc.empty() ? 0 : static_cast<int>(ref.lift[0].size());
    for (int i = 0; i < M && !enc.qc.empty(); ++i)
        cand.segment(enc.qc[i].v0, lw) = sol.segment(enc.qc[i + 1].v0, lw);

    // appended interval: reference controls; battery deltas close the gap
    // between the free terminal battery power and the reference
    const int w = ref.mod(k + M);
    const DispatchState xM = enc.state_at(sol, M);
    const DispatchState xn = ref.x[ref.mod(k + M + 1)];
    ControlInput ua = ControlInput::Zero(enc.n_gen, enc.n_bat);
    for (int g = 0; g < enc.n_gen; ++g) {
        ua.dp_g(g) = xn.p_g(g) - xM.p_g(g);
        ua.dq_g(g) = xn.q_g(g) - xM.q_g(g);
        ua.sw[g] = ref.u[w].sw[g];
    }
    for (int b = 0; b < enc.n_bat; ++b) {
        ua.dp_b(b) = xn.p_b(b) - xM.p_b(b);
        ua.dq_b(b) = xn.q_b(b) - xM.q_b(b);
    }
    const DispatchState xM1 = step_dynamics(xM, ua, params, ref.dt);

    for (int g = 0; g < enc.n_gen; ++g) {
        cand(enc.p_g(M, g)) = xM1.p_g(g);
        cand(enc.q_g(M, g)) = xM1.q_g(g);
        cand(enc.on(M, g)) = xM1.on[g];
        cand(enc.cnt(M, g)) = xM1.counter[g];
        cand(enc.dp_g(M - 1, g)) = ua.dp_g(g);
        cand(enc.dq_g(M - 1, g)) = ua.dq_g(g);
        cand(enc.sw(M - 1, g)) = ua.sw[g];
    }
    for (int b = 0; b < enc.n_bat; ++b) {
        cand(enc.p_b(M, b)) = xM1.p_b(b);
        cand(enc.q_b(M, b)) = xM1.q_b(b);
        cand(enc.soc(M, b)) = xM1.soc(b);
        cand(enc.dp_b(M - 1, b)) = ua.dp_b(b);
        cand(enc.dq_b(M - 1, b)) = ua.dq_b(b);
        cand(enc.abs_p_b(M - 1, b)) = std::abs(xM1.p_b(b));
    }
    if (!enc.qc.empty())
        cand.segment(enc.qc[M].v0, lw) = ref.lift[ref.mod(k + M + 1)];
    return cand;
}

FeasibilityReport check_feasible(const Eigen::VectorXd& candidate,
                                 const Subproblem& sub, double tol) {
    FeasibilityReport rep;
    std::map<std::string, double> worst;
    const ConicProgram& prog = sub.prog;
    for (int k = 0; k < prog.num_rows(); ++k) {
        const double v = prog.row_violation(k, candidate);
        if (v > tol) {
            double& w = worst[prog.row(k).block.empty() ? "(unnamed)"
                                                        : prog.row(k).block];
            w = std::max(w, v);
        }
    }
    for (int j = 0; j < prog.num_vars(); ++j) {
        const conic::Variable& v = prog.var(j);
        const double d =
            std::max(v.lb - candidate(j), candidate(j) - v.ub);
        if (d > tol) {
            double& w = worst["bounds:" + v.name];
            w = std::max(w, d);
        }
        if (v.type != conic::VarType::Continuous &&
            std::abs(candidate(j) - std::round(candidate(j))) > tol) {
            double& w = worst["integrality:" + v.name];
            w = std::max(w, std::abs(candidate(j) - std::round(candidate(j))));
        }
    }
    for (auto& [b, v] : worst) rep.violations.push_back({b, v});
    rep.ok = rep.violations.empty();
    return rep;
}

double distance_to_reference(const DispatchState& x, const PeriodicReference& ref) {
    double best = conic::kInf;
    for (int j = 0; j < ref.n_per; ++j) {
        const DispatchState& r = ref.x[j];
        double d = (x.p_g - r.p_g).squaredNorm() + (x.q_g - r.q_g).squaredNorm() +
                   (x.p_b - r.p_b).squaredNorm() + (x.q_b - r.q_b).squaredNorm() +
                   (x.soc - r.soc).squaredNorm();
        for (size_t g = 0; g < x.on.size(); ++g) {
            const double e = x.on[g] - r.on[g];
            d += e * e;
        }
        best = std::min(best, d);
    }
    return best;
}

double ClosedLoopRecord::total_cost() const {
    return steps.empty() ? 0.0 : steps.back().cumulative_cost;
}

ClosedLoopRecord closed_loop_simulate(const MicrogridSpec& spec,
                                      const DeviceParams& params,
                                      const PeriodicReference& ref,
                                      const ScenarioTimeline& scenario,
                                      int steps, const DispatchState& x0, int k0,
                                      const NmpcConfig& cfg) {
    if (static_cast<int>(scenario.forecast.size()) < steps)
        throw ModelError("closed_loop_simulate: scenario shorter than the run");

    ClosedLoopRecord rec;
    DispatchState x = x0;
    double cum = 0.0;
    Eigen::VectorXd candidate;
    bool have_candidate = false;

    for (int s = 0; s < steps; ++s) {
        const int k = k0 + s;
        StepRecord r;
        r.k = k;
        r.state = x;

        Subproblem sub =
            build_subproblem(x, k, scenario.forecast[s], ref, spec, params, cfg);
        conic::BnBOptions bo = cfg.bnb;
        if (!have_candidate) {
            candidate = orbit_candidate(sub, k, ref, x);
            have_candidate = true;
        }
        FeasibilityReport fr =
            check_feasible(candidate, sub, cfg.bnb.feas_tol * 10);
        r.candidate_checked = true;
        r.candidate_ok = fr.ok;
        // Pass the candidate even when its continuous part is stale
        // (perturbed demand): the search revalidates the hint by fixing
        // its integer schedule and re-solving the continuous remainder.
        bo.incumbent_hint = candidate;

        conic::Solution sol = conic::solve_miqcp(sub.prog, bo);
        r.status = sol.status;
        r.nodes = sol.nodes;
        if (sol.status != conic::SolveStatus::Optimal &&
            sol.status != conic::SolveStatus::GapLimit) {
            rec.aborted = true;
            rec.abort_reason = "subproblem at step " + std::to_string(k) + ": " + std::string() +
                               conic::to_string(sol.status);
            rec.steps.push_back(r);
            return rec;
        }

        ControlInput u = sub.enc.control_at(sol.x, 0);
        r.input = u;
        r.stage_cost = stage_cost(x, u, params, cfg.dt);
        cum += r.stage_cost;
        r.cumulative_cost = cum;
        DispatchState next = step_dynamics(x, u, params, cfg.dt);

        r.v_check = -1.0;
        if (cfg.run_deviation_check) {
            PowerSetpoint y;
            y.p_g = next.p_g;
            y.q_g = next.q_g;
            y.p_b = next.p_b;
            y.q_b = next.q_b;
            GridAlgebraicState hint = GridAlgebraicState::Flat(spec.n_buses);
            const QcLayout& lay = sub.enc.qc[1];
            for (int l = 0; l < spec.n_buses; ++l) {
                hint.v(l) = sol.x(lay.v(l));
                hint.theta(l) = sol.x(lay.theta(l));
            }
            DeviationOptions dopt;
            dopt.random_starts = 2;
            dopt.seed = 7u * (k + 1);
            dopt.hint = &hint;
            r.v_check =
                deviation_check(y, scenario.forecast[s][1], spec, dopt).v_check;
        }

        candidate = extend_with_reference(sol.x, sub, k, ref, params);
        have_candidate = true;

        x = next;
        r.distance = distance_to_reference(x, ref);
        rec.steps.push_back(r);
    }
    return rec;
}

}  // namespace mg
