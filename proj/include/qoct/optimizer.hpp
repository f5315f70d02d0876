#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qoct/distortion.hpp"
#include "qoct/pulse.hpp"
#include "qoct/quantum.hpp"
#include "qoct/resonator.hpp"

namespace qoct {

// One hardware hypothesis the objective is averaged over: detuning and
// control-power error enter the Hamiltonian, and a sample may bring its own
// distortion operator (e.g. a different rise time); null means the run's
// default operator.
struct HypothesisSample {
    double delta_omega = 0;  // rad/s
    double kappa_err = 0;    // relative control-power error
    std::shared_ptr<const DistortionOperator> distortion;
    double weight = 1;
};

struct SampleSet {
    std::vector<HypothesisSample> samples;

    static SampleSet nominal();  // single zero-error sample, weight 1
    std::size_t size() const { return samples.size(); }
    // non-empty, weights non-negative and summing to one
    void validate() const;
};

enum class JacobianMode { zero_order, exact, exact_every_k };

struct OptimizerConfig {
    double target = 0.99;  // stop once the averaged fidelity reaches this
    int max_iterations = 200;
    int line_search_evals = 20;  // utility evaluations spent per line search
    double bracket_growth = 2.0;
    double bound = 1.0;       // amplitude box half-width, in the pulse unit
    std::uint64_t seed = 1;
    double init_scale = 0.1;  // initial guess drawn from [-scale*bound, scale*bound]
    JacobianMode jacobian = JacobianMode::zero_order;
    int jacobian_refresh = 1;  // rebuild period for exact_every_k
    double stall_step = 1e-10;  // relative to bound
    int stall_iterations = 3;
    double penalty_weight = 0;  // > 0 adds the distorted-tail penalty
    int penalty_start = 0;      // first penalized output sample
    void validate() const;
};

enum class RunStatus { reached_target, stalled, max_iterations, aborted };
const char* run_status_name(RunStatus s);

struct IterationRecord {
    int iteration = 0;
    double utility = 0;  // averaged fidelity after this iteration
    double step = 0;     // largest pulse-entry change the iteration made
    long calls = 0;      // cumulative distortion calls so far
};

// Distortion calls are circuit solves when every sample shares one resonator
// operator, otherwise the number of operator invocations made by the loop.
struct RunRecord {
    std::vector<IterationRecord> trace;
    RunStatus status = RunStatus::aborted;
    std::string message;  // failure diagnostics, empty on a clean exit
    Pulse pulse;          // final clipped pulse
    double utility = 0;   // final averaged fidelity
    std::uint64_t seed = 0;
    long calls_total = 0;
    long calls_jacobian = 0;  // portion spent building jacobians
    long calls_ascent() const { return calls_total - calls_jacobian; }
};

// weighted mean of the conditional fidelities, reduced in sample order
double average_utility(const Pulse& p, const ControlProblem& prob,
                       const DistortionOperator& g, const SampleSet& samples,
                       std::vector<double>* per_sample = nullptr);

// pulls each sample's fidelity gradient back through its jacobian and
// averages; jacobians run parallel to samples
Eigen::MatrixXd average_gradient(const Pulse& p, const ControlProblem& prob,
                                 const DistortionOperator& g,
                                 const SampleSet& samples,
                                 const std::vector<DistortionJacobian>& jacobians,
                                 double* utility = nullptr);

// energy of the distorted pulse from sample `start` on, times `scale`;
// start == q.steps() penalizes nothing
double ringdown_penalty(const DistortedPulse& q, int start, double scale,
                        Eigen::MatrixXd* gradient = nullptr);

// Polak-Ribiere coefficient with the non-negativity clamp; an empty or zero
// previous gradient resets to steepest ascent
double conjugate_beta(const Eigen::MatrixXd& d, const Eigen::MatrixXd& d_prev);

// conjugate-gradient ascent on the averaged fidelity of the distorted pulse
RunRecord grape_optimize(const ControlProblem& prob, const DistortionOperator& g,
                         const OptimizerConfig& cfg,
                         const SampleSet& samples = SampleSet::nominal());

struct ScanPoint {
    double value = 0;
    double fidelity = 0;
};

using DistortionFamily =
    std::function<std::shared_ptr<const DistortionOperator>(double)>;
using ProblemFamily = std::function<ControlProblem(double)>;

// fidelity of one fixed pulse across a parameter grid
std::vector<ScanPoint> robustness_scan(const Pulse& pulse,
                                       const DistortionFamily& make_distortion,
                                       const ProblemFamily& make_problem,
                                       const std::vector<double>& grid);

struct LandscapeConfig {
    std::vector<double> bounds;  // drive-voltage bounds to sweep
    int trials = 16;
    int steps = 16;      // input samples per pulse
    int oversample = 8;  // output samples per input step
    double target = 0.99;
    int max_iterations = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    JacobianMode jacobian = JacobianMode::zero_order;
    void validate() const;
};

struct BoundSummary {
    double bound = 0;
    double f_ss_hz = 0;      // steady-state modulation rate at the bound
    double pulse_time = 0;   // quarter modulation period
    int trials = 0;
    int failures = 0;        // runs that missed the target
    double failure_fraction = 0;
    // 16/50/84 percentiles of ascent-phase distortion calls among successes
    double calls_q16 = 0;
    double calls_q50 = 0;
    double calls_q84 = 0;
    std::vector<long> success_calls;  // sorted raw counts
    long solver_calls = 0;            // circuit solves across the bound's trials
};

struct LandscapeResult {
    std::vector<BoundSummary> bounds;
    long solver_calls = 0;
};

// pulse-search success statistics per voltage bound; pulse time tracks the
// bound through the steady-state response, sample counts stay fixed
LandscapeResult landscape_study(const ResonatorModel& model,
                                const ControlProblem& prob,
                                const LandscapeConfig& cfg);

// linear-interpolation percentile of a sorted sequence, q in [0, 1]
double percentile(const std::vector<long>& sorted, double q);

}  // namespace qoct
