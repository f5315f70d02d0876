#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qoct/optimizer.hpp"
#include "qoct/resonator.hpp"

namespace qoct {

// A config file resolved into a ready-to-run experiment. Everything is
// validated at load time; commands assume a consistent object.
struct Experiment {
    std::string name;
    std::string resolved;  // full config after defaults, one line, echoed into outputs

    ControlProblem problem;
    bool has_problem = false;

    // input pulse geometry (steps/dt/unit); channel count comes from the
    // problem or the distortion operator
    int steps = 0;
    double dt = 0;
    Unit unit = Unit::rad_per_s;

    std::shared_ptr<const DistortionOperator> distortion;
    const ResonatorOperator* resonator = nullptr;  // set when kind == resonator

    OptimizerConfig optimizer;
    SampleSet samples;

    // distort command: pulse source, either a csv or generated square pulses
    std::string pulse_csv;
    std::vector<double> square_amplitudes;

    struct ScanSpec {
        std::string parameter;  // delta_omega | kappa_err | tau | alpha_L
        std::vector<double> grid;
    };
    std::optional<ScanSpec> scan;

    std::optional<LandscapeConfig> landscape;

    std::optional<ResonatorModel> model;  // for landscape / steady-state / resonator kind
    std::vector<double> steady_volts;     // default 1..10 V
};

// parse + validate; throws IoError / ValidationError / DimensionError with
// field-path diagnostics, never returns a half-built experiment
Experiment load_experiment(const std::string& config_path);

// flag overrides applied after loading
struct CliOverrides {
    std::optional<unsigned long long> seed;
    std::optional<JacobianMode> jacobian;
    std::optional<int> threads;
};
void apply_overrides(Experiment& ex, const CliOverrides& o);

// 0 success, 2 optimizer finished without reaching its target
int run_optimize(const Experiment& ex, const std::string& out_dir);
int run_distort(const Experiment& ex, const std::string& out_dir);
int run_scan(const Experiment& ex, const std::string& out_dir);
int run_landscape(const Experiment& ex, const std::string& out_dir);
int run_steady_state(const Experiment& ex, const std::string& out_dir);

// runrecord serialization shared by run_optimize and the determinism tests
std::string render_run_record(const RunRecord& rec, const Experiment& ex,
                              const std::string& command);

}  // namespace qoct
