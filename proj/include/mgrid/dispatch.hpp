#pragma once

#include "mgrid/conic/program.hpp"
#include "mgrid/qc.hpp"

namespace mg {

/// Operating envelope and cost data of one dispatchable generator. Dwell
/// limits are counted in sampling intervals; use a negative value for an
/// unbounded max on/off time.
struct GeneratorParams {
    double p_min = 1.0, p_max = 3.0;   // on-mode active power box [p.u.]
    double q_min = -2.0, q_max = 2.0;  // on-mode reactive power box [p.u.]
    double ramp = 1.0;                 // max |dp| per hour as fraction of p_max
    int min_on = 2, max_on = -1;       // intervals; negative = unbounded
    int min_off = 2, max_off = -1;
    int max_startups = 2;              // per sliding day-long window
    double cost_base = 5.0;            // running cost per hour
    double cost_fuel = 20.0;           // per p.u. and hour
    double cost_startup = 5.0;         // per off->on event
};

struct BatteryParams {
    double p_min = -5.0, p_max = 5.0;  // discharge positive [p.u.]
    double q_min = -5.0, q_max = 5.0;
    double soc_min = 0.5, soc_max = 5.0;  // [p.u. h]
    double eta = 0.95;                    // conversion efficiency
    double rho = 0.04 / 720.0;            // proportional loss per hour
    double cost_throughput = 1.0;         // per p.u. h of |p_b|
    double cost_soc_aging = 1.0;          // per p.u. h of stored energy, per hour
};

/// Device parameter sets, ordered like MicrogridSpec::generators/batteries.
struct DeviceParams {
    std::vector<GeneratorParams> generators;
    std::vector<BatteryParams> batteries;
};

/// Dynamic portion of the system at one time instant.
struct DispatchState {
    VectorXd p_g, q_g;        // per generator
    VectorXd p_b, q_b;        // per battery
    std::vector<int> on;      // generator mode during the preceding interval
    std::vector<int> counter; // intervals spent in the current mode
    VectorXd soc;             // per battery [p.u. h]

    static DispatchState Zero(int n_gen, int n_bat);
};

struct ControlInput {
    VectorXd dp_g, dq_g;      // power deltas applied instantaneously
    VectorXd dp_b, dq_b;
    std::vector<int> sw;      // per-generator mode switch (toggles on)

    static ControlInput Zero(int n_gen, int n_bat);
};

/// Exact simulation-side step: powers pick up their deltas, switched
/// generators toggle and reset their counters, and the state of charge
/// integrates the post-update battery power with conversion loss.
DispatchState step_dynamics(const DispatchState& x, const ControlInput& u,
                            const DeviceParams& params, double dt);

/// Cost accrued over the interval following x under u: generator base and
/// fuel cost on the post-step values, startup cost on off->on events, battery
/// throughput and stored-energy aging.
double stage_cost(const DispatchState& x, const ControlInput& u,
                  const DeviceParams& params, double dt);

/// Number of off->on transitions implied by the boundary modes and the switch
/// sequence: (on_end - on_start + sum(switches)) / 2. Throws ModelError when
/// the parity of the sequence contradicts the boundary modes.
int startup_count(int on_start, int on_end, const std::vector<int>& switches);

struct EncodeOptions {
    int counter_cap = 96;     // box upper bound for the mode counters
    bool include_qc = true;   // per-step network lift + nodal balance rows
    bool add_objective = true;
    // First instant whose nodal balance rows are emitted. A receding-horizon
    // subproblem pins instant 0 to an already-realized state whose injections
    // were dispatched against a possibly different demand, so balance there
    // would be over-determined; the lift variables are still assembled.
    int first_balance_instant = 0;
};

/// Variable layout of one encoded horizon. Time instants i = 0..M carry
/// states, i = 0..M-1 carry controls. All accessors return indices into the
/// ConicProgram the encoding was appended to.
///
/// Variable count: (M+1)(4G + 3B) + M(3G + 3B) plus, when the network lift is
/// included, (M+1)(3N + 10L); G/B generators/batteries, N buses, L lines.
struct HorizonEncoding {
    int M = 0;
    double dt = 0.0;
    int n_gen = 0, n_bat = 0;
    int state0 = 0;    // first state variable of instant 0
    int control0 = 0;  // first control variable of interval 0
    std::vector<QcLayout> qc;  // per instant, empty when not included

    int p_g(int i, int g) const { return state0 + i * state_stride() + g; }
    int q_g(int i, int g) const { return p_g(i, g) + n_gen; }
    int on(int i, int g) const { return p_g(i, g) + 2 * n_gen; }
    int cnt(int i, int g) const { return p_g(i, g) + 3 * n_gen; }
    int p_b(int i, int b) const { return state0 + i * state_stride() + 4 * n_gen + b; }
    int q_b(int i, int b) const { return p_b(i, b) + n_bat; }
    int soc(int i, int b) const { return p_b(i, b) + 2 * n_bat; }

    int dp_g(int i, int g) const { return control0 + i * control_stride() + g; }
    int dq_g(int i, int g) const { return dp_g(i, g) + n_gen; }
    int sw(int i, int g) const { return dp_g(i, g) + 2 * n_gen; }
    int dp_b(int i, int b) const { return control0 + i * control_stride() + 3 * n_gen + b; }
    int dq_b(int i, int b) const { return dp_b(i, b) + n_bat; }
    int abs_p_b(int i, int b) const { return dp_b(i, b) + 2 * n_bat; }

    int state_stride() const { return 4 * n_gen + 3 * n_bat; }
    int control_stride() const { return 3 * n_gen + 3 * n_bat; }

    DispatchState state_at(const Eigen::VectorXd& x, int i) const;
    ControlInput control_at(const Eigen::VectorXd& x, int i) const;
};

/// Appends the multistage block structure to prog: state/control variables,
/// device dynamics, mode-dependent power bounds, dwell-time rows, the
/// per-step network lift with nodal balance against `demand` (length M+1),
/// and the linear stage-cost objective including the aggregated startup term.
/// Initial, terminal and window-coupling rows are left to the caller.
HorizonEncoding encode_horizon(conic::ConicProgram& prog, const MicrogridSpec& spec,
                               const DeviceParams& params,
                               const std::vector<DemandSnapshot>& demand, int M,
                               double dt, const EncodeOptions& opts = {});

}  // namespace mg
