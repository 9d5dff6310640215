#include "mgrid/qc.hpp"

#include <algorithm>
#include <cmath>

namespace mg {

using conic::AffExpr;
using conic::ConicProgram;
using conic::LinExpr;
using conic::QuadTerm;

int QcLayout::pair_index(int a, int b) const {
    const int lo = std::min(a, b), hi = std::max(a, b);
    for (size_t k = 0; k < pairs.size(); ++k)
        if (pairs[k].i == lo && pairs[k].j == hi) return static_cast<int>(k);
    return -1;
}

void mccormick(ConicProgram& prog, int w, int x, int y, std::string block) {
    const double xl = prog.var(x).lb, xu = prog.var(x).ub;
    const double yl = prog.var(y).lb, yu = prog.var(y).ub;
    if (!std::isfinite(xl) || !std::isfinite(xu) || !std::isfinite(yl) ||
        !std::isfinite(yu))
        throw std::invalid_argument("mccormick: factors must be boxed");
    // w >= xl y + yl x - xl yl   and   w >= xu y + yu x - xu yu
    prog.add_le({{w, -1.0}, {y, xl}, {x, yl}}, xl * yl, block);
    prog.add_le({{w, -1.0}, {y, xu}, {x, yu}}, xu * yu, block);
    // w <= xu y + yl x - xu yl   and   w <= xl y + yu x - xl yu
    prog.add_le({{w, 1.0}, {y, -xu}, {x, -yl}}, -xu * yl, block);
    prog.add_le({{w, 1.0}, {y, -xl}, {x, -yu}}, -xl * yu, block);
}

void square_envelope(ConicProgram& prog, int s, int x, std::string block) {
    const double l = prog.var(x).lb, u = prog.var(x).ub;
    if (!std::isfinite(l) || !std::isfinite(u))
        throw std::invalid_argument("square_envelope: x must be boxed");
    prog.add_quad({{x, x, 1.0}}, {{s, -1.0}}, 0.0, block);      // x^2 <= s
    prog.add_le({{s, 1.0}, {x, -(l + u)}}, -l * u, block);      // secant side
}

void sine_envelope(ConicProgram& prog, int s, const AffExpr& t, double theta_hat,
                   std::string block) {
    if (theta_hat <= 0.0)
        throw std::invalid_argument("sine_envelope: theta_hat must be positive");
    const double c = std::cos(0.5 * theta_hat), sn = std::sin(0.5 * theta_hat);
    const double off = sn - 0.5 * c * theta_hat;
    // s - c t <= off  and  -s + c t <= off
    LinExpr upper{{s, 1.0}}, lower{{s, -1.0}};
    for (const conic::LinTerm& term : t.terms) {
        upper.push_back({term.var, -c * term.coeff});
        lower.push_back({term.var, c * term.coeff});
    }
    prog.add_le(std::move(upper), off + c * t.constant, block);
    prog.add_le(std::move(lower), off - c * t.constant, block);
}

void cosine_envelope(ConicProgram& prog, int c, const AffExpr& t,
                     double theta_hat, std::string block) {
    if (theta_hat <= 0.0)
        throw std::invalid_argument("cosine_envelope: theta_hat must be positive");
    const double k = (1.0 - std::cos(theta_hat)) / (theta_hat * theta_hat);
    // c <= 1 - k t^2  ->  k t^2 + c - 1 <= 0 with t affine
    std::vector<QuadTerm> P;
    for (size_t a = 0; a < t.terms.size(); ++a)
        for (size_t b = a; b < t.terms.size(); ++b) {
            int i = t.terms[a].var, j = t.terms[b].var;
            double co = k * t.terms[a].coeff * t.terms[b].coeff;
            if (a != b && i == j) co *= 2.0;  // merged diagonal contribution
            if (i > j) std::swap(i, j);
            P.push_back({i, j, co});
        }
    LinExpr lin{{c, 1.0}};
    for (const conic::LinTerm& term : t.terms)
        lin.push_back({term.var, 2.0 * k * t.constant * term.coeff});
    prog.add_quad(std::move(P), std::move(lin),
                  k * t.constant * t.constant - 1.0, block);
    prog.add_le({{c, -1.0}}, -std::cos(theta_hat), block);  // c >= cos(theta_hat)
}

void current_cone(ConicProgram& prog, int p, int q, int vsq, int cur,
                  std::string block) {
    prog.add_soc({{{{vsq, 1.0}, {cur, 1.0}}, 0.0},
                  {{{p, 2.0}}, 0.0},
                  {{{q, 2.0}}, 0.0},
                  {{{vsq, 1.0}, {cur, -1.0}}, 0.0}},
                 block);
}

QcLayout assemble_qc(ConicProgram& prog, const MicrogridSpec& spec,
                     const std::string& block) {
    spec.validate();
    QcLayout lay;
    lay.n_buses = spec.n_buses;

    lay.v0 = prog.num_vars();
    for (int l = 0; l < spec.n_buses; ++l)
        prog.add_var(block + ".v" + std::to_string(l), spec.v_min(l), spec.v_max(l));
    lay.th0 = prog.num_vars();
    for (int l = 0; l < spec.n_buses; ++l)
        prog.add_var(block + ".th" + std::to_string(l), spec.theta_min(l),
                     spec.theta_max(l));
    lay.vsq0 = prog.num_vars();
    for (int l = 0; l < spec.n_buses; ++l)
        prog.add_var(block + ".vsq" + std::to_string(l),
                     spec.v_min(l) * spec.v_min(l), spec.v_max(l) * spec.v_max(l));
    for (int l = 0; l < spec.n_buses; ++l)
        square_envelope(prog, lay.vsq(l), lay.v(l),
                        block + ".vsq" + std::to_string(l));

    std::vector<Line> sorted = spec.lines;
    for (Line& ln : sorted)
        if (ln.from > ln.to) std::swap(ln.from, ln.to);
    std::sort(sorted.begin(), sorted.end(), [](const Line& a, const Line& b) {
        return std::make_pair(a.from, a.to) < std::make_pair(b.from, b.to);
    });

    for (const Line& ln : sorted) {
        QcLayout::PairVars pv;
        pv.i = ln.from;
        pv.j = ln.to;
        pv.g = ln.g;
        pv.b = ln.b;
        pv.theta_hat = std::max(
            std::abs(spec.theta_min(pv.i) - spec.theta_max(pv.j)),
            std::abs(spec.theta_max(pv.i) - spec.theta_min(pv.j)));
        const std::string tag =
            block + "." + std::to_string(pv.i) + "-" + std::to_string(pv.j);

        const double vvl = spec.v_min(pv.i) * spec.v_min(pv.j);
        const double vvu = spec.v_max(pv.i) * spec.v_max(pv.j);
        pv.vv = prog.add_var(tag + ".vv", vvl, vvu);
        const double sh = std::sin(pv.theta_hat), ch = std::cos(pv.theta_hat);
        pv.st = prog.add_var(tag + ".st", -sh, sh);
        pv.ct = prog.add_var(tag + ".ct", ch, 1.0);
        pv.wc = prog.add_var(tag + ".wc", std::min(vvl * ch, vvl), vvu);
        pv.ws = prog.add_var(tag + ".ws", -vvu * sh, vvu * sh);
        const double cur_hi = (pv.g * pv.g + pv.b * pv.b) *
                              (spec.v_max(pv.i) * spec.v_max(pv.i) +
                               spec.v_max(pv.j) * spec.v_max(pv.j) -
                               2.0 * vvl * ch);
        pv.cur = prog.add_var(tag + ".cur", 0.0, cur_hi);

        // directed flows, boxed by interval arithmetic over their definitions
        auto flow_box = [&](int bus, double c_vsq, double c_wc, double c_ws) {
            double lo = 0.0, hi = 0.0;
            auto acc = [&](double coef, double bl, double bu) {
                lo += coef > 0 ? coef * bl : coef * bu;
                hi += coef > 0 ? coef * bu : coef * bl;
            };
            acc(c_vsq, spec.v_min(bus) * spec.v_min(bus),
                spec.v_max(bus) * spec.v_max(bus));
            acc(c_wc, vvl * ch, vvu);
            acc(c_ws, -vvu * sh, vvu * sh);
            return std::make_pair(lo, hi);
        };
        const double g = pv.g, b = pv.b;
        auto [plo, phi] = flow_box(pv.i, g, -g, -b);
        pv.p_ij = prog.add_var(tag + ".p_ij", plo, phi);
        auto [plo2, phi2] = flow_box(pv.j, g, -g, b);
        pv.p_ji = prog.add_var(tag + ".p_ji", plo2, phi2);
        auto [qlo, qhi] = flow_box(pv.i, -b, b, -g);
        pv.q_ij = prog.add_var(tag + ".q_ij", qlo, qhi);
        auto [qlo2, qhi2] = flow_box(pv.j, -b, b, g);
        pv.q_ji = prog.add_var(tag + ".q_ji", qlo2, qhi2);

        // product envelopes
        mccormick(prog, pv.vv, lay.v(pv.i), lay.v(pv.j), tag + ".vv");
        AffExpr tdiff{{{lay.theta(pv.i), 1.0}, {lay.theta(pv.j), -1.0}}, 0.0};
        sine_envelope(prog, pv.st, tdiff, pv.theta_hat, tag + ".st");
        cosine_envelope(prog, pv.ct, tdiff, pv.theta_hat, tag + ".ct");
        mccormick(prog, pv.wc, pv.vv, pv.ct, tag + ".wc");
        mccormick(prog, pv.ws, pv.vv, pv.st, tag + ".ws");

        // directed flow definitions over the lift
        prog.add_eq({{pv.p_ij, 1.0}, {lay.vsq(pv.i), -g}, {pv.wc, g}, {pv.ws, b}},
                    0.0, tag + ".flow");
        prog.add_eq({{pv.q_ij, 1.0}, {lay.vsq(pv.i), b}, {pv.wc, -b}, {pv.ws, g}},
                    0.0, tag + ".flow");
        prog.add_eq({{pv.p_ji, 1.0}, {lay.vsq(pv.j), -g}, {pv.wc, g}, {pv.ws, -b}},
                    0.0, tag + ".flow");
        prog.add_eq({{pv.q_ji, 1.0}, {lay.vsq(pv.j), b}, {pv.wc, -b}, {pv.ws, -g}},
                    0.0, tag + ".flow");

        // squared current from the round-trip losses
        prog.add_eq({{pv.cur, 1.0},
                     {pv.p_ij, -g}, {pv.p_ji, -g},
                     {pv.q_ij, b}, {pv.q_ji, b}},
                    0.0, tag + ".cur");

        current_cone(prog, pv.p_ij, pv.q_ij, lay.vsq(pv.i), pv.cur, tag + ".cone");
        current_cone(prog, pv.p_ji, pv.q_ji, lay.vsq(pv.j), pv.cur, tag + ".cone");

        lay.pairs.push_back(pv);
    }

    return lay;
}

LinExpr lifted_injection_p(const QcLayout& lay, const AdmittanceMatrix& Y, int bus) {
    LinExpr e{{lay.vsq(bus), Y.G(bus, bus)}};
    for (const QcLayout::PairVars& pv : lay.pairs) {
        if (pv.i != bus && pv.j != bus) continue;
        const int other = pv.i == bus ? pv.j : pv.i;
        const double sign = pv.i == bus ? 1.0 : -1.0;
        e.push_back({pv.wc, Y.G(bus, other)});
        e.push_back({pv.ws, sign * Y.B(bus, other)});
    }
    return e;
}

LinExpr lifted_injection_q(const QcLayout& lay, const AdmittanceMatrix& Y, int bus) {
    LinExpr e{{lay.vsq(bus), -Y.B(bus, bus)}};
    for (const QcLayout::PairVars& pv : lay.pairs) {
        if (pv.i != bus && pv.j != bus) continue;
        const int other = pv.i == bus ? pv.j : pv.i;
        const double sign = pv.i == bus ? 1.0 : -1.0;
        e.push_back({pv.ws, sign * Y.G(bus, other)});
        e.push_back({pv.wc, -Y.B(bus, other)});
    }
    return e;
}

Eigen::VectorXd lift_ac_point(const QcLayout& lay, const GridAlgebraicState& z,
                              int n_vars) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_vars);
    for (int l = 0; l < lay.n_buses; ++l) {
        x(lay.v(l)) = z.v(l);
        x(lay.theta(l)) = z.theta(l);
        x(lay.vsq(l)) = z.v(l) * z.v(l);
    }
    for (const QcLayout::PairVars& pv : lay.pairs) {
        const double t = z.theta(pv.i) - z.theta(pv.j);
        const double vv = z.v(pv.i) * z.v(pv.j);
        const double st = std::sin(t), ct = std::cos(t);
        const double wc = vv * ct, ws = vv * st;
        const double vi2 = z.v(pv.i) * z.v(pv.i), vj2 = z.v(pv.j) * z.v(pv.j);
        x(pv.vv) = vv;
        x(pv.st) = st;
        x(pv.ct) = ct;
        x(pv.wc) = wc;
        x(pv.ws) = ws;
        x(pv.p_ij) = pv.g * vi2 - pv.g * wc - pv.b * ws;
        x(pv.q_ij) = -pv.b * vi2 + pv.b * wc - pv.g * ws;
        x(pv.p_ji) = pv.g * vj2 - pv.g * wc + pv.b * ws;
        x(pv.q_ji) = -pv.b * vj2 + pv.b * wc + pv.g * ws;
        x(pv.cur) = (pv.g * pv.g + pv.b * pv.b) * (vi2 + vj2 - 2.0 * wc);
    }
    return x;
}

}  // namespace mg
