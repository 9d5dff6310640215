#pragma once

#include <optional>

#include "mgrid/grid.hpp"

namespace mg {

/// Per-bus mismatch between net injections and the flows implied by (v, theta).
/// Zero iff z lies on the AC power flow manifold.
struct PfResidual {
    VectorXd r_p;
    VectorXd r_q;

    double inf_norm() const;
};

PfResidual pf_residual(const GridAlgebraicState& z, const AdmittanceMatrix& Y);

/// Residual of the nodal power balance p_l - (p_l^g + p_l^b - p_l^d) and the
/// reactive analog, stacked as a 2N vector (active first). Buses without a
/// device contribute zero for the missing terms.
VectorXd balance_residual(const PowerSetpoint& y, const GridAlgebraicState& z,
                          const DemandSnapshot& d, const MicrogridSpec& spec);

enum class NewtonStatus { Converged, NoConvergence, OutOfBounds };

struct NewtonOptions {
    double tol = 1e-8;      // infinity norm of the mismatch
    int max_iter = 50;
    int max_halvings = 20;  // step damping
    bool enforce_boxes = true;
};

struct NewtonResult {
    NewtonStatus status = NewtonStatus::NoConvergence;
    GridAlgebraicState state;
    int iterations = 0;
    double residual = 0.0;
};

/// Damped Newton power flow from a flat start. The reference bus is held at
/// its fixed voltage and zero angle; `p_inj`/`q_inj` give the net injection
/// at every non-reference bus (indexed by bus, reference entry ignored).
NewtonResult newton_solve(const MicrogridSpec& spec, const AdmittanceMatrix& Y,
                          const VectorXd& p_inj, const VectorXd& q_inj,
                          const NewtonOptions& opts = {});

struct DeviationResult {
    double v_check = 0.0;         // squared l2 active-power distance [p.u.^2]
    PowerSetpoint projected;      // nearest AC-feasible setpoint found
    GridAlgebraicState solved_state;
    bool feasible = false;        // at least one start reached the manifold
};

struct DeviationOptions {
    int random_starts = 0;
    unsigned seed = 0;
    double feas_tol = 1e-6;   // balance/manifold feasibility at the solution
    int max_outer = 40;       // augmented-Lagrangian rounds
    int max_inner = 60;       // Gauss-Newton steps per round
    const GridAlgebraicState* hint = nullptr;  // e.g. a QC-lift voltage profile
};

/// Projection of a proposed setpoint onto the AC-feasible set: minimizes the
/// squared active-power distance over device setpoints realizable by some
/// in-box (v, theta). Multi-start local method; `feasible` is false when no
/// start reached an AC-feasible point.
DeviationResult deviation_check(const PowerSetpoint& y_ref, const DemandSnapshot& d,
                                const MicrogridSpec& spec,
                                const DeviationOptions& opts = {});

}  // namespace mg
