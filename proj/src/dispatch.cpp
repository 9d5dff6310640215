#include "mgrid/dispatch.hpp"

#include <cmath>

namespace mg {

using conic::ConicProgram;
using conic::LinExpr;
using conic::RowFamily;

DispatchState DispatchState::Zero(int n_gen, int n_bat) {
    DispatchState x;
    x.p_g = VectorXd::Zero(n_gen);
    x.q_g = VectorXd::Zero(n_gen);
    x.p_b = VectorXd::Zero(n_bat);
    x.q_b = VectorXd::Zero(n_bat);
    x.on.assign(n_gen, 0);
    x.counter.assign(n_gen, 0);
    x.soc = VectorXd::Zero(n_bat);
    return x;
}

ControlInput ControlInput::Zero(int n_gen, int n_bat) {
    ControlInput u;
    u.dp_g = VectorXd::Zero(n_gen);
    u.dq_g = VectorXd::Zero(n_gen);
    u.dp_b = VectorXd::Zero(n_bat);
    u.dq_b = VectorXd::Zero(n_bat);
    u.sw.assign(n_gen, 0);
    return u;
}

DispatchState step_dynamics(const DispatchState& x, const ControlInput& u,
                            const DeviceParams& params, double dt) {
    const int n_gen = static_cast<int>(x.on.size());
    const int n_bat = static_cast<int>(x.soc.size());
    if (static_cast<int>(u.sw.size()) != n_gen ||
        u.dp_b.size() != n_bat || x.p_g.size() != n_gen)
        throw ModelError("step_dynamics: dimension mismatch");

    DispatchState y = x;
    y.p_g += u.dp_g;
    y.q_g += u.dq_g;
    y.p_b += u.dp_b;
    y.q_b += u.dq_b;
    for (int g = 0; g < n_gen; ++g) {
        y.on[g] = u.sw[g] ? 1 - x.on[g] : x.on[g];
        y.counter[g] = u.sw[g] ? 0 : x.counter[g] + 1;
    }
    for (int b = 0; b < n_bat; ++b) {
        const BatteryParams& bp = params.batteries[b];
        y.soc(b) = (1.0 - bp.rho * dt) * x.soc(b) -
                   dt * (y.p_b(b) + (1.0 - bp.eta) * std::abs(y.p_b(b)));
    }
    return y;
}

double stage_cost(const DispatchState& x, const ControlInput& u,
                  const DeviceParams& params, double dt) {
    DispatchState y = step_dynamics(x, u, params, dt);
    double c = 0.0;
    for (size_t g = 0; g < params.generators.size(); ++g) {
        const GeneratorParams& gp = params.generators[g];
        c += (y.on[g] * gp.cost_base + y.p_g(g) * gp.cost_fuel) * dt;
        if (x.on[g] == 0 && u.sw[g] == 1) c += gp.cost_startup;
    }
    for (size_t b = 0; b < params.batteries.size(); ++b) {
        const BatteryParams& bp = params.batteries[b];
        c += (std::abs(y.p_b(b)) * bp.cost_throughput +
              y.soc(b) * bp.cost_soc_aging) * dt;
    }
    return c;
}

int startup_count(int on_start, int on_end, const std::vector<int>& switches) {
    int total = 0;
    for (int s : switches) total += s;
    if (((on_start + total) & 1) != (on_end & 1))
        throw ModelError("startup_count: switch parity contradicts boundary modes");
    return (on_end - on_start + total) / 2;
}

namespace {

// Supremum of a'x - rhs over the variable boxes, used to pick tight big-M.
double box_sup(const ConicProgram& prog, const LinExpr& a, double rhs) {
    double s = -rhs;
    for (const conic::LinTerm& t : a) {
        const conic::Variable& v = prog.var(t.var);
        s += t.coeff > 0 ? t.coeff * v.ub : t.coeff * v.lb;
    }
    return std::max(0.0, s);
}

std::vector<double> tight_ms(const ConicProgram& prog, const RowFamily& fam) {
    std::vector<double> ms;
    ms.reserve(fam.size());
    for (const auto& [a, rhs] : fam) ms.push_back(box_sup(prog, a, rhs));
    return ms;
}

void indicator(ConicProgram& prog, int S, const RowFamily& fam0,
               const RowFamily& fam1, std::string block) {
    big_m_indicator(prog, S, fam0, fam1, tight_ms(prog, fam0),
                    tight_ms(prog, fam1), std::move(block));
}

}  // namespace

HorizonEncoding encode_horizon(ConicProgram& prog, const MicrogridSpec& spec,
                               const DeviceParams& params,
                               const std::vector<DemandSnapshot>& demand, int M,
                               double dt, const EncodeOptions& opts) {
    const int n_gen = static_cast<int>(spec.generators.size());
    const int n_bat = static_cast<int>(spec.batteries.size());
    if (static_cast<int>(params.generators.size()) != n_gen ||
        static_cast<int>(params.batteries.size()) != n_bat)
        throw ModelError("encode_horizon: parameter set does not match the grid");
    if (static_cast<int>(demand.size()) != M + 1)
        throw ModelError("encode_horizon: demand series must have M+1 entries");
    if (M < 1 || dt <= 0.0) throw ModelError("encode_horizon: bad time grid");
    for (const GeneratorParams& gp : params.generators)
        if (gp.p_min <= 0.0 || gp.min_on < 1 || gp.min_off < 1)
            throw ModelError("encode_horizon: invalid generator parameters");

    HorizonEncoding enc;
    enc.M = M;
    enc.dt = dt;
    enc.n_gen = n_gen;
    enc.n_bat = n_bat;

    enc.state0 = prog.num_vars();
    for (int i = 0; i <= M; ++i) {
        const std::string t = "[" + std::to_string(i) + "]";
        for (int g = 0; g < n_gen; ++g)
            prog.add_var("pg" + t + std::to_string(g), 0.0,
                         params.generators[g].p_max);
        for (int g = 0; g < n_gen; ++g)
            prog.add_var("qg" + t + std::to_string(g),
                         std::min(0.0, params.generators[g].q_min),
                         std::max(0.0, params.generators[g].q_max));
        for (int g = 0; g < n_gen; ++g)
            prog.add_var("on" + t + std::to_string(g), 0.0, 1.0,
                         conic::VarType::Binary);
        for (int g = 0; g < n_gen; ++g)
            prog.add_var("cnt" + t + std::to_string(g), 0.0,
                         static_cast<double>(opts.counter_cap),
                         conic::VarType::Integer);
        for (int b = 0; b < n_bat; ++b)
            prog.add_var("pb" + t + std::to_string(b), params.batteries[b].p_min,
                         params.batteries[b].p_max);
        for (int b = 0; b < n_bat; ++b)
            prog.add_var("qb" + t + std::to_string(b), params.batteries[b].q_min,
                         params.batteries[b].q_max);
        for (int b = 0; b < n_bat; ++b)
            prog.add_var("soc" + t + std::to_string(b),
                         params.batteries[b].soc_min, params.batteries[b].soc_max);
    }

    enc.control0 = prog.num_vars();
    for (int i = 0; i < M; ++i) {
        const std::string t = "[" + std::to_string(i) + "]";
        for (int g = 0; g < n_gen; ++g) {
            const double r = params.generators[g].ramp *
                             params.generators[g].p_max * dt;
            prog.add_var("dpg" + t + std::to_string(g), -r, r);
        }
        for (int g = 0; g < n_gen; ++g) {
            const double w = params.generators[g].q_max - params.generators[g].q_min;
            prog.add_var("dqg" + t + std::to_string(g), -w, w);
        }
        for (int g = 0; g < n_gen; ++g)
            prog.add_var("sw" + t + std::to_string(g), 0.0, 1.0,
                         conic::VarType::Binary);
        for (int b = 0; b < n_bat; ++b) {
            const double w = params.batteries[b].p_max - params.batteries[b].p_min;
            prog.add_var("dpb" + t + std::to_string(b), -w, w);
        }
        for (int b = 0; b < n_bat; ++b) {
            const double w = params.batteries[b].q_max - params.batteries[b].q_min;
            prog.add_var("dqb" + t + std::to_string(b), -w, w);
        }
        for (int b = 0; b < n_bat; ++b)
            prog.add_var("apb" + t + std::to_string(b), 0.0,
                         std::max(params.batteries[b].p_max,
                                  -params.batteries[b].p_min));
    }

    // interval dynamics
    for (int i = 0; i < M; ++i) {
        for (int g = 0; g < n_gen; ++g) {
            prog.add_eq({{enc.p_g(i + 1, g), 1.0}, {enc.p_g(i, g), -1.0},
                         {enc.dp_g(i, g), -1.0}}, 0.0, "dyn.pow");
            prog.add_eq({{enc.q_g(i + 1, g), 1.0}, {enc.q_g(i, g), -1.0},
                         {enc.dq_g(i, g), -1.0}}, 0.0, "dyn.pow");

            const int s = enc.sw(i, g), on0 = enc.on(i, g), on1 = enc.on(i + 1, g);
            indicator(prog, s,
                      {{{{on1, 1.0}, {on0, -1.0}}, 0.0},
                       {{{on1, -1.0}, {on0, 1.0}}, 0.0}},
                      {{{{on1, 1.0}, {on0, 1.0}}, 1.0},
                       {{{on1, -1.0}, {on0, -1.0}}, -1.0}},
                      "dyn.switch");

            const int c0 = enc.cnt(i, g), c1 = enc.cnt(i + 1, g);
            indicator(prog, s,
                      {{{{c1, 1.0}, {c0, -1.0}}, 1.0},
                       {{{c1, -1.0}, {c0, 1.0}}, -1.0}},
                      {{{{c1, 1.0}}, 0.0},
                       {{{c1, -1.0}}, 0.0}},
                      "dyn.counter");
        }
        for (int b = 0; b < n_bat; ++b) {
            prog.add_eq({{enc.p_b(i + 1, b), 1.0}, {enc.p_b(i, b), -1.0},
                         {enc.dp_b(i, b), -1.0}}, 0.0, "dyn.pow");
            prog.add_eq({{enc.q_b(i + 1, b), 1.0}, {enc.q_b(i, b), -1.0},
                         {enc.dq_b(i, b), -1.0}}, 0.0, "dyn.pow");

            // epigraph of |p_b(i+1)|; exact at any optimum since fictitious
            // battery loss is never beneficial under the costs used here
            const int a = enc.abs_p_b(i, b), p1 = enc.p_b(i + 1, b);
            prog.add_le({{p1, 1.0}, {a, -1.0}}, 0.0, "abs");
            prog.add_le({{p1, -1.0}, {a, -1.0}}, 0.0, "abs");

            const BatteryParams& bp = params.batteries[b];
            prog.add_eq({{enc.soc(i + 1, b), 1.0},
                         {enc.soc(i, b), -(1.0 - bp.rho * dt)},
                         {p1, dt}, {a, dt * (1.0 - bp.eta)}},
                        0.0, "dyn.soc");
        }
    }

    // mode-dependent power bounds
    for (int i = 0; i <= M; ++i)
        for (int g = 0; g < n_gen; ++g) {
            const GeneratorParams& gp = params.generators[g];
            const int p = enc.p_g(i, g), q = enc.q_g(i, g);
            indicator(prog, enc.on(i, g),
                      {{{{p, 1.0}}, 0.0}, {{{p, -1.0}}, 0.0},
                       {{{q, 1.0}}, 0.0}, {{{q, -1.0}}, 0.0}},
                      {{{{p, 1.0}}, gp.p_max}, {{{p, -1.0}}, -gp.p_min},
                       {{{q, 1.0}}, gp.q_max}, {{{q, -1.0}}, -gp.q_min}},
                      "mode");
        }

    // dwell-time rows
    for (int i = 0; i <= M; ++i)
        for (int g = 0; g < n_gen; ++g) {
            const GeneratorParams& gp = params.generators[g];
            const int c = enc.cnt(i, g), s = enc.on(i, g);
            const bool fin_on = gp.max_on >= 0, fin_off = gp.max_off >= 0;
            if (fin_on && fin_off) {
                prog.add_le({{c, 1.0}, {s, static_cast<double>(gp.max_off - gp.max_on)}},
                            static_cast<double>(gp.max_off), "dwell.max");
            } else if (fin_off) {
                indicator(prog, s,
                          {{{{c, 1.0}}, static_cast<double>(gp.max_off)}}, {},
                          "dwell.max");
            } else if (fin_on) {
                indicator(prog, s, {},
                          {{{{c, 1.0}}, static_cast<double>(gp.max_on)}},
                          "dwell.max");
            }
        }
    for (int i = 0; i < M; ++i)
        for (int g = 0; g < n_gen; ++g) {
            const GeneratorParams& gp = params.generators[g];
            indicator(prog, enc.sw(i, g), {},
                      {{{{enc.cnt(i, g), -1.0},
                         {enc.on(i, g), static_cast<double>(gp.min_on - gp.min_off)}},
                        static_cast<double>(-gp.min_off)}},
                      "dwell.min");
        }

    // per-instant network lift and nodal balance
    if (opts.include_qc) {
        const AdmittanceMatrix Y = build_admittance(spec);
        for (int i = 0; i <= M; ++i) {
            enc.qc.push_back(assemble_qc(prog, spec, "qc" + std::to_string(i)));
            if (i < opts.first_balance_instant) continue;
            const QcLayout& lay = enc.qc.back();
            for (int l = 0; l < spec.n_buses; ++l) {
                LinExpr ep = lifted_injection_p(lay, Y, l);
                LinExpr eq = lifted_injection_q(lay, Y, l);
                for (int g = 0; g < n_gen; ++g)
                    if (spec.generators[g] == l) {
                        ep.push_back({enc.p_g(i, g), -1.0});
                        eq.push_back({enc.q_g(i, g), -1.0});
                    }
                for (int b = 0; b < n_bat; ++b)
                    if (spec.batteries[b] == l) {
                        ep.push_back({enc.p_b(i, b), -1.0});
                        eq.push_back({enc.q_b(i, b), -1.0});
                    }
                prog.add_eq(std::move(ep), -demand[i].p_d(l), "bal");
                prog.add_eq(std::move(eq), -demand[i].q_d(l), "bal");
            }
        }
    }

    if (opts.add_objective) {
        for (int k = 0; k < M; ++k) {
            for (int g = 0; g < n_gen; ++g) {
                const GeneratorParams& gp = params.generators[g];
                prog.add_obj(enc.on(k + 1, g), gp.cost_base * dt);
                prog.add_obj(enc.p_g(k + 1, g), gp.cost_fuel * dt);
            }
            for (int b = 0; b < n_bat; ++b) {
                const BatteryParams& bp = params.batteries[b];
                prog.add_obj(enc.abs_p_b(k, b), bp.cost_throughput * dt);
                prog.add_obj(enc.soc(k + 1, b), bp.cost_soc_aging * dt);
            }
        }
        // total startup cost via the event-count identity over [0, M]
        for (int g = 0; g < n_gen; ++g) {
            const double c = params.generators[g].cost_startup;
            prog.add_obj(enc.on(M, g), 0.5 * c);
            prog.add_obj(enc.on(0, g), -0.5 * c);
            for (int k = 0; k < M; ++k) prog.add_obj(enc.sw(k, g), 0.5 * c);
        }
    }

    return enc;
}

DispatchState HorizonEncoding::state_at(const Eigen::VectorXd& x, int i) const {
    DispatchState s = DispatchState::Zero(n_gen, n_bat);
    for (int g = 0; g < n_gen; ++g) {
        s.p_g(g) = x(p_g(i, g));
        s.q_g(g) = x(q_g(i, g));
        s.on[g] = static_cast<int>(std::lround(x(on(i, g))));
        s.counter[g] = static_cast<int>(std::lround(x(cnt(i, g))));
    }
    for (int b = 0; b < n_bat; ++b) {
        s.p_b(b) = x(p_b(i, b));
        s.q_b(b) = x(q_b(i, b));
        s.soc(b) = x(soc(i, b));
    }
    return s;
}

ControlInput HorizonEncoding::control_at(const Eigen::VectorXd& x, int i) const {
    ControlInput u = ControlInput::Zero(n_gen, n_bat);
    for (int g = 0; g < n_gen; ++g) {
        u.dp_g(g) = x(dp_g(i, g));
        u.dq_g(g) = x(dq_g(i, g));
        u.sw[g] = static_cast<int>(std::lround(x(sw(i, g))));
    }
    for (int b = 0; b < n_bat; ++b) {
        u.dp_b(b) = x(dp_b(i, b));
        u.dq_b(b) = x(dq_b(i, b));
    }
    return u;
}

}  // namespace mg
