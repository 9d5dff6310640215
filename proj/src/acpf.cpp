#include "mgrid/acpf.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mg {

double PfResidual::inf_norm() const {
    return std::max(r_p.lpNorm<Eigen::Infinity>(), r_q.lpNorm<Eigen::Infinity>());
}

namespace {

/// Net injections implied by (v, theta) together with their Jacobian wrt the
/// stacked unknowns [theta_nonref; v_nonref]. The Jacobian is optional.
struct FlowEval {
    VectorXd p_calc, q_calc;           // per bus
    MatrixXd dp_dw, dq_dw;             // per bus x unknowns (empty if not requested)
};

FlowEval eval_flows(const MicrogridSpec& spec, const AdmittanceMatrix& Y,
                    const GridAlgebraicState& z, bool with_jacobian,
                    const std::vector<int>& nonref) {
    const int n = spec.n_buses;
    FlowEval ev;
    ev.p_calc = VectorXd::Zero(n);
    ev.q_calc = VectorXd::Zero(n);

    // column index of each bus's theta/v unknown, -1 for the reference bus
    std::vector<int> col(n, -1);
    for (size_t k = 0; k < nonref.size(); ++k) col[nonref[k]] = static_cast<int>(k);
    const int nw = static_cast<int>(nonref.size());

    if (with_jacobian) {
        ev.dp_dw = MatrixXd::Zero(n, 2 * nw);
        ev.dq_dw = MatrixXd::Zero(n, 2 * nw);
    }

    for (int l = 0; l < n; ++l) {
        double p = 0.0, q = 0.0;
        double dp_dtl = 0.0, dq_dtl = 0.0, dp_dvl = 0.0, dq_dvl = 0.0;
        for (int m = 0; m < n; ++m) {
            if (Y.G(l, m) == 0.0 && Y.B(l, m) == 0.0) continue;
            const double t = z.theta(l) - z.theta(m);
            const double ct = std::cos(t), st = std::sin(t);
            const double gc_bs = Y.G(l, m) * ct + Y.B(l, m) * st;
            const double gs_bc = Y.G(l, m) * st - Y.B(l, m) * ct;
            p += z.v(l) * z.v(m) * gc_bs;
            q += z.v(l) * z.v(m) * gs_bc;
            if (!with_jacobian) continue;
            if (m != l) {
                dp_dtl += z.v(l) * z.v(m) * (-gs_bc);
                dq_dtl += z.v(l) * z.v(m) * gc_bs;
                if (col[m] >= 0) {
                    ev.dp_dw(l, col[m]) = z.v(l) * z.v(m) * gs_bc;
                    ev.dq_dw(l, col[m]) = -z.v(l) * z.v(m) * gc_bs;
                    ev.dp_dw(l, nw + col[m]) = z.v(l) * gc_bs;
                    ev.dq_dw(l, nw + col[m]) = z.v(l) * gs_bc;
                }
                dp_dvl += z.v(m) * gc_bs;
                dq_dvl += z.v(m) * gs_bc;
            } else {
                dp_dvl += 2.0 * z.v(l) * Y.G(l, l);
                dq_dvl += -2.0 * z.v(l) * Y.B(l, l);
            }
        }
        ev.p_calc(l) = p;
        ev.q_calc(l) = q;
        if (with_jacobian && col[l] >= 0) {
            ev.dp_dw(l, col[l]) = dp_dtl;
            ev.dq_dw(l, col[l]) = dq_dtl;
            ev.dp_dw(l, nw + col[l]) = dp_dvl;
            ev.dq_dw(l, nw + col[l]) = dq_dvl;
        }
    }
    return ev;
}

std::vector<int> nonref_buses(const MicrogridSpec& spec) {
    std::vector<int> out;
    for (int l = 0; l < spec.n_buses; ++l)
        if (l != spec.reference_bus) out.push_back(l);
    return out;
}

}  // namespace

PfResidual pf_residual(const GridAlgebraicState& z, const AdmittanceMatrix& Y) {
    const int n = static_cast<int>(z.v.size());
    PfResidual r;
    r.r_p = VectorXd::Zero(n);
    r.r_q = VectorXd::Zero(n);
    for (int l = 0; l < n; ++l) {
        double sp = 0.0, sq = 0.0;
        for (int m = 0; m < n; ++m) {
            const double t = z.theta(l) - z.theta(m);
            sp += z.v(l) * z.v(m) * (Y.G(l, m) * std::cos(t) + Y.B(l, m) * std::sin(t));
            sq += z.v(l) * z.v(m) * (Y.G(l, m) * std::sin(t) - Y.B(l, m) * std::cos(t));
        }
        r.r_p(l) = z.p(l) - sp;
        r.r_q(l) = z.q(l) - sq;
    }
    return r;
}

VectorXd balance_residual(const PowerSetpoint& y, const GridAlgebraicState& z,
                          const DemandSnapshot& d, const MicrogridSpec& spec) {
    const int n = spec.n_buses;
    VectorXd r = VectorXd::Zero(2 * n);
    for (int l = 0; l < n; ++l) {
        double pg = 0.0, qg = 0.0, pb = 0.0, qb = 0.0;
        for (size_t k = 0; k < spec.generators.size(); ++k)
            if (spec.generators[k] == l) { pg = y.p_g(k); qg = y.q_g(k); }
        for (size_t k = 0; k < spec.batteries.size(); ++k)
            if (spec.batteries[k] == l) { pb = y.p_b(k); qb = y.q_b(k); }
        r(l) = z.p(l) - (pg + pb - d.p_d(l));
        r(n + l) = z.q(l) - (qg + qb - d.q_d(l));
    }
    return r;
}

NewtonResult newton_solve(const MicrogridSpec& spec, const AdmittanceMatrix& Y,
                          const VectorXd& p_inj, const VectorXd& q_inj,
                          const NewtonOptions& opts) {
    const std::vector<int> nonref = nonref_buses(spec);
    const int nw = static_cast<int>(nonref.size());

    NewtonResult res;
    GridAlgebraicState z = GridAlgebraicState::Flat(spec.n_buses);
    z.v(spec.reference_bus) = spec.v_min(spec.reference_bus);

    auto mismatch = [&](const GridAlgebraicState& zz, bool jac) {
        FlowEval ev = eval_flows(spec, Y, zz, jac, nonref);
        VectorXd F(2 * nw);
        for (int k = 0; k < nw; ++k) {
            F(k) = ev.p_calc(nonref[k]) - p_inj(nonref[k]);
            F(nw + k) = ev.q_calc(nonref[k]) - q_inj(nonref[k]);
        }
        return std::make_pair(F, ev);
    };

    auto [F, ev] = mismatch(z, false);
    double fnorm = F.lpNorm<Eigen::Infinity>();

    for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
        if (fnorm <= opts.tol) break;
        auto [Fj, evj] = mismatch(z, true);
        MatrixXd J(2 * nw, 2 * nw);
        for (int k = 0; k < nw; ++k) {
            J.row(k) = evj.dp_dw.row(nonref[k]);
            J.row(nw + k) = evj.dq_dw.row(nonref[k]);
        }
        VectorXd step = J.fullPivLu().solve(-Fj);
        if (!step.allFinite()) break;

        // halve the step until the residual norm decreases
        double alpha = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            GridAlgebraicState zt = z;
            for (int k = 0; k < nw; ++k) {
                zt.theta(nonref[k]) += alpha * step(k);
                zt.v(nonref[k]) += alpha * step(nw + k);
            }
            auto [Ft, evt] = mismatch(zt, false);
            const double ft = Ft.lpNorm<Eigen::Infinity>();
            if (ft < fnorm) {
                z = zt;
                F = Ft;
                fnorm = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }

    res.residual = fnorm;
    if (fnorm > opts.tol) {
        res.status = NewtonStatus::NoConvergence;
        res.state = z;
        return res;
    }

    // fill the converged algebraic state
    FlowEval fin = eval_flows(spec, Y, z, false, nonref);
    z.p = fin.p_calc;
    z.q = fin.q_calc;
    res.state = z;

    if (opts.enforce_boxes) {
        for (int l = 0; l < spec.n_buses; ++l) {
            const double eps = 1e-9;
            if (z.v(l) < spec.v_min(l) - eps || z.v(l) > spec.v_max(l) + eps ||
                z.theta(l) < spec.theta_min(l) - eps ||
                z.theta(l) > spec.theta_max(l) + eps) {
                res.status = NewtonStatus::OutOfBounds;
                return res;
            }
        }
    }
    res.status = NewtonStatus::Converged;
    return res;
}

namespace {

struct DeviceIndex {
    std::vector<int> device_bus;    // generators first, then batteries
    std::vector<int> constrained;   // buses whose balance is a hard equality
};

DeviceIndex index_devices(const MicrogridSpec& spec) {
    DeviceIndex di;
    std::vector<bool> has_device(spec.n_buses, false);
    for (int g : spec.generators) {
        if (has_device[g]) throw ModelError("deviation_check: two devices on one bus");
        has_device[g] = true;
        di.device_bus.push_back(g);
    }
    for (int b : spec.batteries) {
        if (has_device[b]) throw ModelError("deviation_check: two devices on one bus");
        has_device[b] = true;
        di.device_bus.push_back(b);
    }
    for (int l = 0; l < spec.n_buses; ++l)
        if (!has_device[l]) di.constrained.push_back(l);
    return di;
}

}  // namespace

DeviationResult deviation_check(const PowerSetpoint& y_ref, const DemandSnapshot& d,
                                const MicrogridSpec& spec,
                                const DeviationOptions& opts) {
    spec.validate();
    const AdmittanceMatrix Y = build_admittance(spec);
    const DeviceIndex di = index_devices(spec);
    const std::vector<int> nonref = nonref_buses(spec);
    const int nw = static_cast<int>(nonref.size());
    const int ng = static_cast<int>(spec.generators.size());
    const int ndev = static_cast<int>(di.device_bus.size());
    const int nc = 2 * static_cast<int>(di.constrained.size());

    VectorXd p_ref(ndev);
    for (int k = 0; k < ng; ++k) p_ref(k) = y_ref.p_g(k);
    for (size_t k = 0; k < spec.batteries.size(); ++k) p_ref(ng + k) = y_ref.p_b(k);

    auto make_state = [&](const VectorXd& w) {
        GridAlgebraicState z = GridAlgebraicState::Flat(spec.n_buses);
        z.v(spec.reference_bus) = spec.v_min(spec.reference_bus);
        for (int k = 0; k < nw; ++k) {
            z.theta(nonref[k]) = w(k);
            z.v(nonref[k]) = w(nw + k);
        }
        return z;
    };

    auto clip = [&](VectorXd& w) {
        for (int k = 0; k < nw; ++k) {
            w(k) = std::clamp(w(k), spec.theta_min(nonref[k]), spec.theta_max(nonref[k]));
            w(nw + k) = std::clamp(w(nw + k), spec.v_min(nonref[k]), spec.v_max(nonref[k]));
        }
    };

    // Augmented-Lagrangian Gauss-Newton from one starting point. Returns the
    // final unknown vector; feasibility is judged by the caller.
    auto local_solve = [&](VectorXd w) {
        clip(w);
        VectorXd lambda = VectorXd::Zero(nc);
        double mu = 10.0;
        double c_norm_prev = std::numeric_limits<double>::infinity();

        auto residual = [&](const VectorXd& ww, bool jac) {
            GridAlgebraicState z = make_state(ww);
            FlowEval ev = eval_flows(spec, Y, z, jac, nonref);
            VectorXd r(ndev + nc);
            MatrixXd J;
            if (jac) J = MatrixXd::Zero(ndev + nc, 2 * nw);
            const double smu = std::sqrt(mu);
            for (int k = 0; k < ndev; ++k) {
                const int bus = di.device_bus[k];
                const double p_dev = ev.p_calc(bus) + d.p_d(bus);
                r(k) = p_dev - p_ref(k);
                if (jac) J.row(k) = ev.dp_dw.row(bus);
            }
            for (size_t j = 0; j < di.constrained.size(); ++j) {
                const int bus = di.constrained[j];
                const double cp = ev.p_calc(bus) + d.p_d(bus);
                const double cq = ev.q_calc(bus) + d.q_d(bus);
                r(ndev + 2 * j) = smu * (cp + lambda(2 * j) / mu);
                r(ndev + 2 * j + 1) = smu * (cq + lambda(2 * j + 1) / mu);
                if (jac) {
                    J.row(ndev + 2 * j) = smu * ev.dp_dw.row(bus);
                    J.row(ndev + 2 * j + 1) = smu * ev.dq_dw.row(bus);
                }
            }
            return std::make_pair(r, J);
        };

        auto constraint_norm = [&](const VectorXd& ww) {
            GridAlgebraicState z = make_state(ww);
            FlowEval ev = eval_flows(spec, Y, z, false, nonref);
            double cn = 0.0;
            for (int bus : di.constrained) {
                cn = std::max(cn, std::abs(ev.p_calc(bus) + d.p_d(bus)));
                cn = std::max(cn, std::abs(ev.q_calc(bus) + d.q_d(bus)));
            }
            return cn;
        };

        for (int outer = 0; outer < opts.max_outer; ++outer) {
            // inner Levenberg-Marquardt on the AL least-squares problem
            double lm = 1e-6;
            auto [r, J] = residual(w, true);
            double merit = r.squaredNorm();
            for (int inner = 0; inner < opts.max_inner; ++inner) {
                MatrixXd H = J.transpose() * J;
                H.diagonal().array() += lm;
                VectorXd g = J.transpose() * r;
                VectorXd step = H.ldlt().solve(-g);
                VectorXd wt = w + step;
                clip(wt);
                auto [rt, Jt] = residual(wt, true);
                const double mt = rt.squaredNorm();
                if (mt < merit) {
                    w = wt;
                    r = rt;
                    J = Jt;
                    merit = mt;
                    lm = std::max(lm * 0.3, 1e-12);
                    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
                } else {
                    lm *= 10.0;
                    if (lm > 1e8) break;
                }
            }

            // multiplier and penalty update
            GridAlgebraicState z = make_state(w);
            FlowEval ev = eval_flows(spec, Y, z, false, nonref);
            double cn = 0.0;
            for (size_t j = 0; j < di.constrained.size(); ++j) {
                const int bus = di.constrained[j];
                const double cp = ev.p_calc(bus) + d.p_d(bus);
                const double cq = ev.q_calc(bus) + d.q_d(bus);
                lambda(2 * j) += mu * cp;
                lambda(2 * j + 1) += mu * cq;
                cn = std::max({cn, std::abs(cp), std::abs(cq)});
            }
            if (cn <= 1e-10) break;
            if (cn > 0.25 * c_norm_prev) mu = std::min(mu * 5.0, 1e12);
            c_norm_prev = cn;
        }
        (void)constraint_norm;
        return w;
    };

    DeviationResult best;
    best.v_check = std::numeric_limits<double>::infinity();
    best.projected = PowerSetpoint::Zero(spec);

    auto consider = [&](const VectorXd& w) {
        GridAlgebraicState z = make_state(w);
        FlowEval ev = eval_flows(spec, Y, z, false, nonref);
        double cn = 0.0;
        for (int bus : di.constrained) {
            cn = std::max(cn, std::abs(ev.p_calc(bus) + d.p_d(bus)));
            cn = std::max(cn, std::abs(ev.q_calc(bus) + d.q_d(bus)));
        }
        if (cn > opts.feas_tol) return;
        double vc = 0.0;
        PowerSetpoint y = PowerSetpoint::Zero(spec);
        for (int k = 0; k < ng; ++k) {
            const int bus = spec.generators[k];
            y.p_g(k) = ev.p_calc(bus) + d.p_d(bus);
            y.q_g(k) = ev.q_calc(bus) + d.q_d(bus);
            vc += std::pow(y.p_g(k) - y_ref.p_g(k), 2);
        }
        for (size_t k = 0; k < spec.batteries.size(); ++k) {
            const int bus = spec.batteries[k];
            y.p_b(k) = ev.p_calc(bus) + d.p_d(bus);
            y.q_b(k) = ev.q_calc(bus) + d.q_d(bus);
            vc += std::pow(y.p_b(k) - y_ref.p_b(k), 2);
        }
        if (vc < best.v_check) {
            best.v_check = vc;
            best.projected = y;
            z.p = ev.p_calc;
            z.q = ev.q_calc;
            best.solved_state = z;
            best.feasible = true;
        }
    };

    // start (i): Newton power flow from the reference setpoint itself
    {
        VectorXd p_inj = -d.p_d, q_inj = -d.q_d;
        for (int k = 0; k < ng; ++k) {
            p_inj(spec.generators[k]) += y_ref.p_g(k);
            q_inj(spec.generators[k]) += y_ref.q_g(k);
        }
        for (size_t k = 0; k < spec.batteries.size(); ++k) {
            p_inj(spec.batteries[k]) += y_ref.p_b(k);
            q_inj(spec.batteries[k]) += y_ref.q_b(k);
        }
        NewtonResult nr = newton_solve(spec, Y, p_inj, q_inj);
        if (nr.status == NewtonStatus::Converged) {
            // Newton pins every bus except the reference, which acts as the
            // slack. The setpoint is realizable exactly as given only if the
            // device-free reference-bus balance also closed on its own.
            const int rb = spec.reference_bus;
            const bool bare_ref = !spec.has_generator(rb) && !spec.has_battery(rb);
            if (bare_ref && std::abs(nr.state.p(rb) + d.p_d(rb)) <= opts.feas_tol &&
                std::abs(nr.state.q(rb) + d.q_d(rb)) <= opts.feas_tol) {
                best.v_check = 0.0;  // on the manifold, distance exactly zero
                best.feasible = true;
                best.solved_state = nr.state;
                best.projected = y_ref;
                return best;
            }
        }
        VectorXd w(2 * nw);
        for (int k = 0; k < nw; ++k) {
            w(k) = nr.state.theta(nonref[k]);
            w(nw + k) = nr.state.v(nonref[k]);
        }
        if (nr.status == NewtonStatus::Converged) consider(w);
        consider(local_solve(w));
    }

    // start (ii): supplied hint (e.g. the QC-lift voltage profile)
    if (opts.hint != nullptr) {
        VectorXd w(2 * nw);
        for (int k = 0; k < nw; ++k) {
            w(k) = opts.hint->theta(nonref[k]);
            w(nw + k) = opts.hint->v(nonref[k]);
        }
        consider(local_solve(w));
    }

    // flat start plus seeded random in-box starts
    {
        VectorXd w(2 * nw);
        for (int k = 0; k < nw; ++k) {
            w(k) = 0.0;
            w(nw + k) = 1.0;
        }
        consider(local_solve(w));
    }
    std::mt19937 rng(opts.seed);
    for (int s = 0; s < opts.random_starts; ++s) {
        VectorXd w(2 * nw);
        for (int k = 0; k < nw; ++k) {
            std::uniform_real_distribution<double> ut(spec.theta_min(nonref[k]),
                                                      spec.theta_max(nonref[k]));
            std::uniform_real_distribution<double> uv(spec.v_min(nonref[k]),
                                                      spec.v_max(nonref[k]));
            w(k) = ut(rng);
            w(nw + k) = uv(rng);
        }
        consider(local_solve(w));
    }

    if (!best.feasible) {
        best.v_check = std::numeric_limits<double>::infinity();
        best.solved_state = GridAlgebraicState::Flat(spec.n_buses);
    }
    return best;
}

}  // namespace mg
