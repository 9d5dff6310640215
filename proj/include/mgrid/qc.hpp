#pragma once

#include "mgrid/conic/program.hpp"
#include "mgrid/grid.hpp"

namespace mg {

/// Convex outer approximation of one AC power-flow snapshot. The lift carries,
/// per bus, (v, theta, vsq) and, per line between the ordered pair i < j,
/// the products (vv, st, ct, wc, ws), the squared current magnitude (cur) and
/// the four directed flows (p_ij, p_ji, q_ij, q_ji): 3N + 10L variables.
struct QcLayout {
    struct PairVars {
        int i = 0, j = 0;        // bus pair, i < j
        double g = 0.0, b = 0.0; // series admittance of the connecting line
        double theta_hat = 0.0;  // envelope half-width for theta_i - theta_j
        int vv = -1;             // <v_i v_j>
        int st = -1;             // <sin(theta_i - theta_j)>
        int ct = -1;             // <cos(theta_i - theta_j)>
        int wc = -1;             // <v_i v_j cos(theta_i - theta_j)>
        int ws = -1;             // <v_i v_j sin(theta_i - theta_j)>
        int cur = -1;            // squared current magnitude along the line
        int p_ij = -1, p_ji = -1, q_ij = -1, q_ji = -1;
    };

    int n_buses = 0;
    int v0 = -1, th0 = -1, vsq0 = -1;  // first index of each per-bus block
    std::vector<PairVars> pairs;       // sorted by (i, j)

    int v(int bus) const { return v0 + bus; }
    int theta(int bus) const { return th0 + bus; }
    int vsq(int bus) const { return vsq0 + bus; }
    /// Index into pairs for the unordered bus pair; -1 if no line connects it.
    int pair_index(int a, int b) const;
};

/// Four-plane relaxation of w = x * y over the current boxes of x and y.
void mccormick(conic::ConicProgram& prog, int w, int x, int y,
               std::string block = {});

/// Relaxation of s = x^2 over the current box of x: the convex side is kept
/// exactly, the concave side by its secant.
void square_envelope(conic::ConicProgram& prog, int s, int x,
                     std::string block = {});

/// Tangent-line relaxation of s = sin(t) for the affine angle difference t
/// ranging over [-theta_hat, theta_hat].
void sine_envelope(conic::ConicProgram& prog, int s, const conic::AffExpr& t,
                   double theta_hat, std::string block = {});

/// Relaxation of c = cos(t) over [-theta_hat, theta_hat]: quadratic upper
/// estimator through the box corners, constant lower bound.
void cosine_envelope(conic::ConicProgram& prog, int c, const conic::AffExpr& t,
                     double theta_hat, std::string block = {});

/// Rotated-cone coupling p^2 + q^2 <= vsq * cur of the directed flow with the
/// squared voltage behind it and the squared line current.
void current_cone(conic::ConicProgram& prog, int p, int q, int vsq, int cur,
                  std::string block = {});

/// Appends the full lift for one snapshot of `spec` to `prog` and returns the
/// variable layout. Rows added per line: the five product envelopes, the four
/// directed-flow definitions, the current identity and two rotated cones.
QcLayout assemble_qc(conic::ConicProgram& prog, const MicrogridSpec& spec,
                     const std::string& block = "qc");

/// Net active injection at `bus` as a linear expression over the lift.
conic::LinExpr lifted_injection_p(const QcLayout& layout,
                                  const AdmittanceMatrix& Y, int bus);
conic::LinExpr lifted_injection_q(const QcLayout& layout,
                                  const AdmittanceMatrix& Y, int bus);

/// Exact lift of an AC state: fills the layout's entries of a length-n vector
/// (other entries zero) with the values the lifted variables take at z.
Eigen::VectorXd lift_ac_point(const QcLayout& layout, const GridAlgebraicState& z,
                              int n_vars);

}  // namespace mg
