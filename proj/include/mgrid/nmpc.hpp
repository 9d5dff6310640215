#pragma once

#include "mgrid/acpf.hpp"
#include "mgrid/conic/bnb.hpp"
#include "mgrid/dispatch.hpp"

namespace mg {

/// A day-long periodic operating schedule used as terminal anchor for the
/// receding-horizon controller, together with the switch lookup tables needed
/// by the extendability and startup-window rows.
struct PeriodicReference {
    int n_per = 0;
    double dt = 0.0;
    std::vector<DispatchState> x;  // index j = state at t_j, j = 0..n_per-1
    std::vector<ControlInput> u;   // control applied at t_j
    std::vector<Eigen::VectorXd> lift;  // network lift values per instant
    double objective = 0.0;

    DispatchState state(int j) const { return x[mod(j)]; }
    ControlInput input(int j) const { return u[mod(j)]; }
    int mod(int j) const { return ((j % n_per) + n_per) % n_per; }

    /// Intervals until generator l next switches in the reference, seen from
    /// t_j; -1 when the reference never switches it.
    int time_to_next_switch(int l, int j) const;
    /// Switches of generator l over reference instants j_start..j_end
    /// (inclusive, wrapping, j_end may exceed one period).
    int switch_count(int l, int j_start, int j_end) const;

    void build_tables();

  private:
    std::vector<std::vector<int>> tau_;
    std::vector<std::vector<int>> prefix_;  // prefix_[l][j] = sum of sw[0..j-1]
};

struct OcpOptions {
    conic::BnBOptions bnb;
    int counter_cap = 96;
};

/// Globally optimal day-periodic schedule: one horizon of Nper intervals with
/// state periodicity rows, the counter matched modulo the period length, and
/// the per-period startup budget. `d_per` has Nper+1 entries with matching
/// endpoints.
PeriodicReference solve_periodic_ocp(const MicrogridSpec& spec,
                                     const DeviceParams& params,
                                     const std::vector<DemandSnapshot>& d_per,
                                     int n_per, double dt,
                                     const OcpOptions& opts = {});

struct NmpcConfig {
    int M = 48;
    double dt = 1.0;
    conic::BnBOptions bnb;
    int counter_cap = 96;
    bool run_deviation_check = true;
    bool terminal_soc_equality = true;  // inequality (>=) mode when false
};

struct Subproblem {
    conic::ConicProgram prog;
    HorizonEncoding enc;
};

/// The receding-horizon problem at absolute step k: encoded horizon with the
/// initial state pinned, reference-anchored terminal rows, dwell
/// extendability against the next reference switch, and day-long sliding
/// startup windows whose out-of-horizon tail is counted on the reference.
Subproblem build_subproblem(const DispatchState& x0, int k,
                            const std::vector<DemandSnapshot>& forecast,
                            const PeriodicReference& ref,
                            const MicrogridSpec& spec, const DeviceParams& params,
                            const NmpcConfig& cfg);

/// Shift a solved step-k assignment by one interval and append one reference
/// interval, yielding a full-length assignment for the step-(k+1) subproblem.
Eigen::VectorXd extend_with_reference(const Eigen::VectorXd& sol,
                                      const Subproblem& sub, int k,
                                      const PeriodicReference& ref,
                                      const DeviceParams& params);

struct FeasibilityReport {
    bool ok = true;
    struct Violation {
        std::string block;
        double amount = 0.0;
    };
    std::vector<Violation> violations;  // worst violation per offending block
};

/// Evaluates every constraint block of the subproblem at the candidate.
FeasibilityReport check_feasible(const Eigen::VectorXd& candidate,
                                 const Subproblem& sub, double tol = 1e-6);

struct StepRecord {
    int k = 0;
    DispatchState state;   // realized state at t_k (before the step)
    ControlInput input;    // applied control
    double stage_cost = 0.0;
    double cumulative_cost = 0.0;
    conic::SolveStatus status = conic::SolveStatus::NumericalFailure;
    long nodes = 0;
    double v_check = 0.0;       // applied-setpoint deviation, -1 if skipped
    double distance = 0.0;      // squared distance to the reference orbit
    bool candidate_checked = false;
    bool candidate_ok = false;  // extension candidate passed check_feasible
};

struct ClosedLoopRecord {
    std::vector<StepRecord> steps;
    bool aborted = false;
    std::string abort_reason;
    double total_cost() const;
};

/// Demand scenario: per simulation step the forecast over the horizon. The
/// realized demand of step k is forecast[k][0].
struct ScenarioTimeline {
    std::vector<std::vector<DemandSnapshot>> forecast;
};

/// Receding-horizon closed loop: per step build the subproblem, seed it with
/// the previous solution's reference extension, solve, apply the first input
/// through the exact dynamics, and record costs, deviation and distance.
ClosedLoopRecord closed_loop_simulate(const MicrogridSpec& spec,
                                      const DeviceParams& params,
                                      const PeriodicReference& ref,
                                      const ScenarioTimeline& scenario,
                                      int steps, const DispatchState& x0, int k0,
                                      const NmpcConfig& cfg);

/// Squared distance of x to the closest reference state; counters are
/// excluded (a longer dwell than the reference's is not an operating error).
double distance_to_reference(const DispatchState& x, const PeriodicReference& ref);

}  // namespace mg
