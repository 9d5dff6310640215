#include "mgrid/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mg {

void MicrogridSpec::validate() const {
    if (n_buses <= 0) throw ModelError("spec: n_buses must be positive");
    auto check_bus = [&](int bus, const char* what) {
        if (bus < 0 || bus >= n_buses)
            throw ModelError(std::string("spec: invalid ") + what + " bus index " +
                             std::to_string(bus));
    };
    for (int g : generators) check_bus(g, "generator");
    for (int b : batteries) check_bus(b, "battery");
    check_bus(reference_bus, "reference");
    for (const Line& ln : lines) {
        check_bus(ln.from, "line endpoint");
        check_bus(ln.to, "line endpoint");
        if (ln.from == ln.to) throw ModelError("spec: self-loop line");
    }
    if (v_min.size() != n_buses || v_max.size() != n_buses ||
        theta_min.size() != n_buses || theta_max.size() != n_buses ||
        static_cast<int>(ground_admittance.size()) != n_buses)
        throw ModelError("spec: per-bus arrays must have length n_buses");
    for (int l = 0; l < n_buses; ++l) {
        if (v_min(l) > v_max(l) || theta_min(l) > theta_max(l))
            throw ModelError("spec: inverted bounds at bus " + std::to_string(l));
    }
    if (v_min(reference_bus) != v_max(reference_bus) ||
        theta_min(reference_bus) != 0.0 || theta_max(reference_bus) != 0.0)
        throw ModelError("spec: reference bus must have fixed v and theta = 0");
}

bool MicrogridSpec::has_generator(int bus) const {
    return std::find(generators.begin(), generators.end(), bus) != generators.end();
}

bool MicrogridSpec::has_battery(int bus) const {
    return std::find(batteries.begin(), batteries.end(), bus) != batteries.end();
}

GridAlgebraicState GridAlgebraicState::Flat(int n_buses) {
    GridAlgebraicState z;
    z.p = VectorXd::Zero(n_buses);
    z.q = VectorXd::Zero(n_buses);
    z.v = VectorXd::Ones(n_buses);
    z.theta = VectorXd::Zero(n_buses);
    return z;
}

PowerSetpoint PowerSetpoint::Zero(const MicrogridSpec& spec) {
    PowerSetpoint y;
    y.p_g = VectorXd::Zero(spec.generators.size());
    y.q_g = VectorXd::Zero(spec.generators.size());
    y.p_b = VectorXd::Zero(spec.batteries.size());
    y.q_b = VectorXd::Zero(spec.batteries.size());
    return y;
}

DemandSnapshot DemandSnapshot::Zero(int n_buses) {
    DemandSnapshot d;
    d.p_d = VectorXd::Zero(n_buses);
    d.q_d = VectorXd::Zero(n_buses);
    return d;
}

AdmittanceMatrix build_admittance(const MicrogridSpec& spec) {
    spec.validate();

    std::set<std::pair<int, int>> seen;
    for (const Line& ln : spec.lines) {
        auto key = std::minmax(ln.from, ln.to);
        if (!seen.insert(key).second)
            throw ModelError("build_admittance: duplicate line between buses " +
                             std::to_string(key.first) + " and " +
                             std::to_string(key.second));
    }

    const int n = spec.n_buses;
    AdmittanceMatrix Y;
    Y.G = MatrixXd::Zero(n, n);
    Y.B = MatrixXd::Zero(n, n);
    for (int l = 0; l < n; ++l) {
        Y.G(l, l) = spec.ground_admittance[l].real();
        Y.B(l, l) = spec.ground_admittance[l].imag();
    }
    for (const Line& ln : spec.lines) {
        Y.G(ln.from, ln.to) -= ln.g;
        Y.G(ln.to, ln.from) -= ln.g;
        Y.B(ln.from, ln.to) -= ln.b;
        Y.B(ln.to, ln.from) -= ln.b;
        Y.G(ln.from, ln.from) += ln.g;
        Y.G(ln.to, ln.to) += ln.g;
        Y.B(ln.from, ln.from) += ln.b;
        Y.B(ln.to, ln.to) += ln.b;
    }
    return Y;
}

std::pair<double, double> line_power(const GridAlgebraicState& z, int l, int m,
                                     const AdmittanceMatrix& Y) {
    const double t = z.theta(l) - z.theta(m);
    const double vv = z.v(l) * z.v(m);
    const double p = vv * (Y.G(l, m) * std::cos(t) + Y.B(l, m) * std::sin(t));
    const double q = vv * (Y.G(l, m) * std::sin(t) - Y.B(l, m) * std::cos(t));
    return {p, q};
}

}  // namespace mg
