#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace mg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Thrown on invalid model data (bad bus ids, inverted bounds, ...).
class ModelError : public std::runtime_error {
  public:
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

struct Line {
    int from = 0;  // 0-based bus index
    int to = 0;
    double g = 0.0;  // series conductance [p.u.]
    double b = 0.0;  // series susceptance [p.u.]
};

/// Static description of the microgrid: topology, admittances, operating boxes
/// and device placement. Immutable after construction.
struct MicrogridSpec {
    int n_buses = 0;
    std::vector<int> generators;  // bus indices carrying a generator
    std::vector<int> batteries;   // bus indices carrying a battery
    int reference_bus = 0;
    std::vector<Line> lines;
    std::vector<std::complex<double>> ground_admittance;  // per bus
    VectorXd v_min, v_max;          // [p.u.]
    VectorXd theta_min, theta_max;  // [rad]

    /// Throws ModelError if any structural invariant is violated.
    void validate() const;

    bool has_generator(int bus) const;
    bool has_battery(int bus) const;
};

struct AdmittanceMatrix {
    MatrixXd G;
    MatrixXd B;
};

/// Per-bus (p, q, v, theta) snapshot of one quasi steady state.
struct GridAlgebraicState {
    VectorXd p, q;      // net injected power [p.u.]
    VectorXd v;         // voltage magnitude [p.u.]
    VectorXd theta;     // phase [rad]

    static GridAlgebraicState Flat(int n_buses);
};

/// Controllable device setpoints, ordered as (generators..., batteries...)
/// following the bus order in MicrogridSpec.
struct PowerSetpoint {
    VectorXd p_g, q_g;  // per generator bus
    VectorXd p_b, q_b;  // per battery bus

    static PowerSetpoint Zero(const MicrogridSpec& spec);
};

struct DemandSnapshot {
    VectorXd p_d, q_d;  // per bus; PV injection enters as negative p_d

    static DemandSnapshot Zero(int n_buses);
};

/// Standard bus-admittance assembly: off-diagonal (l,m) is the negated line
/// admittance, diagonals collect ground admittance plus incident lines.
/// Rejects duplicate lines between the same pair and self-loops.
AdmittanceMatrix build_admittance(const MicrogridSpec& spec);

/// Power associated with the (l,m) entry of the admittance matrix:
///   p_lm = v_l v_m (G_lm cos(t_lm) + B_lm sin(t_lm))
///   q_lm = v_l v_m (G_lm sin(t_lm) - B_lm cos(t_lm))
/// with t_lm = theta_l - theta_m. Total function; l == m gives the
/// diagonal contribution (v_l^2 G_ll, -v_l^2 B_ll).
std::pair<double, double> line_power(const GridAlgebraicState& z, int l, int m,
                                     const AdmittanceMatrix& Y);

}  // namespace mg
