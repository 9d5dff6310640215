#pragma once

#include <iosfwd>

#include "mgrid/nmpc.hpp"

namespace mg {

/// Shape parameters of the day-periodic demand profile. The magnitudes are
/// repository defaults (the morning peak of roughly 2.5 p.u. and the 0.95
/// power factor included); only the qualitative shape is externally given.
struct ProfileShape {
    int load_bus = 5;
    int pv_bus = 3;
    double base_load = 1.5;        // overnight floor [p.u.]
    double morning_peak = 1.0;     // extra amplitude peaking at morning_hour
    double morning_hour = 8.0;
    double morning_width = 2.0;
    double evening_peak = 0.5;
    double evening_hour = 20.0;
    double evening_width = 2.5;
    double pv_amplitude = 1.5;     // half-sine between sunrise and sunset
    double sunrise = 6.0, sunset = 18.0;
    double power_factor = 0.95;    // reactive load at fixed power factor
};

/// Day-periodic demand series with n_per+1 entries and equal endpoints: a
/// morning-peaked load with an evening rise plus photovoltaic infeed as
/// negative demand during daylight.
std::vector<DemandSnapshot> make_nominal_profile(int n_per, double dt,
                                                 int n_buses,
                                                 const ProfileShape& shape = {});

struct PerturbationParams {
    double noise = 0.1;            // multiplicative, uniform in [1-a, 1+a]
    int day2_start = 24, day2_end = 48;
    // Chosen so the day-2 midday solar surplus stays within what the battery
    // can absorb: solar is not curtailable here, so too large a boost makes
    // the power balance itself impossible.
    double day2_load_factor = 0.7;
    double day2_pv_factor = 1.25;
};

/// Perturbed timeline over `steps` simulation steps with horizon M: bounded
/// multiplicative noise plus a day-2 demand drop and solar boost. Forecasts
/// equal realizations except the horizon-end entry, which is clamped to the
/// periodic profile. Throws when the noise could make demand negative at a
/// load bus.
ScenarioTimeline make_perturbed_profile(const std::vector<DemandSnapshot>& d_per,
                                        int n_per, int steps, int M,
                                        const ProfileShape& shape,
                                        unsigned seed,
                                        const PerturbationParams& prm = {});

/// Nominal timeline: forecasts read directly off the periodic profile.
ScenarioTimeline make_nominal_timeline(const std::vector<DemandSnapshot>& d_per,
                                       int n_per, int steps, int M, int k0 = 0);

/// Grid, device and profile configuration parsed from the JSON schema
/// documented in the README.
struct RunConfig {
    MicrogridSpec spec;
    DeviceParams params;
    ProfileShape shape;
    int n_per = 24;
    double dt = 1.0;
};

RunConfig load_config(std::istream& is);
RunConfig load_config_file(const std::string& path);

/// Portable reference-trajectory file (JSON). Loading rebuilds the switch
/// tables; a round trip reproduces the object bit-exactly.
void save_reference(const PeriodicReference& ref, std::ostream& os);
PeriodicReference load_reference(std::istream& is);

/// Closed-loop CSV: one row per step with the columns
/// step,p_load,q_load,p_pv,p_g<g>,q_g<g>,on<g>,cnt<g>,sw<g>,
/// p_b<b>,q_b<b>,soc<b>,stage_cost,cumulative_cost,v_check,distance,
/// status,nodes.
void write_closed_loop_csv(const ClosedLoopRecord& rec,
                           const ScenarioTimeline& scenario,
                           const MicrogridSpec& spec, std::ostream& os);

}  // namespace mg
