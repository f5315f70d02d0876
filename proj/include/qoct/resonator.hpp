#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "qoct/common.hpp"
#include "qoct/distortion.hpp"
#include "qoct/ode.hpp"
#include "qoct/pulse.hpp"
#include "qoct/ringdown.hpp"

namespace qoct {

// tuned-and-matched resonator with kinetic-inductance nonlinearity,
// expressed in the frame rotating at omega_r
struct ResonatorModel {
    double R0 = 0;       // ohm
    double L0 = 0;       // H
    double alpha_L = 0;  // 1/A^2
    double alpha_R = 0;  // 1/A^eta
    double eta = 2;
    double C_m = 0;      // F, matching capacitor
    double C_t = 0;      // F, tuning capacitor
    double R_L = 0;      // ohm, source impedance
    double omega_r = 0;  // rad/s, carrier
    double kappa = 0;    // rad/s per A, current-to-Rabi factor
    double tau_r = 0;    // s, forcing rise time

    void validate() const;
    double inductance(double i_sq) const { return L0 * (1.0 + alpha_L * i_sq); }
    double resistance(double i_sq) const {
        return R0 * (1.0 + alpha_R * std::pow(i_sq, 0.5 * eta));
    }
};

ResonatorModel load_resonator_model(const std::string& path);

// state x = (I_L, V_Cm, V_Ct) as complex envelopes
Eigen::Matrix3cd circuit_matrix(const ResonatorModel& m, const Eigen::Vector3cd& x);
Eigen::Matrix3cd circuit_matrix_zero(const ResonatorModel& m);
Eigen::Vector3cd circuit_input(const ResonatorModel& m);

// piecewise-constant targets approached with rise time tau_r; amplitude
// continues decaying toward zero past the last edge
struct PiecewiseForcing {
    std::vector<double> edges{0.0};  // segment boundaries, strictly increasing
    std::vector<cplx> amps;          // target amplitude per segment
    double tau_r = 0;

    int segments() const { return static_cast<int>(amps.size()); }
    double t_end() const { return edges.back(); }
    void append(double width, cplx amp);
    cplx eval(double t) const;
    // d eval(t) / d amps[seg]
    double weight(int seg, double t) const;
    static PiecewiseForcing from_pulse(const Pulse& p, double tau_r);
};

struct CircuitSolveOptions {
    double rtol = 1e-8;
    double atol_current = 1e-10;  // A
    double atol_voltage = 1e-8;   // V
    bool store_dense = false;
    long max_steps = 50'000'000;
};

OdeSolution solve_circuit(const PiecewiseForcing& forcing, const ResonatorModel& m, double t0,
                          double t1, const Eigen::Vector3cd& x0,
                          const std::vector<double>& sample_times = {},
                          const CircuitSolveOptions& opt = {});

struct SteadyState {
    double f_ss_hz = 0;      // kappa |I_ss| / 2 pi
    double i_mag = 0;        // A
    double settle_time = 0;  // s
};

// constant drive until |I_L| stops changing between carrier periods
SteadyState steady_state_response(double volts, const ResonatorModel& m, double rel_tol = 1e-6,
                                  double t_max = 0);

struct ResonatorOperatorOptions {
    int steps = 0;      // N input steps
    double dt = 0;      // input step width
    double delta_t = 0; // output sample spacing
    double tail = 0;    // extra covered time after pulse and compensation
    std::optional<RingdownConfig> ringdown;
    double probe_amplitude = 1e-3;  // V, zero-order jacobian probes
    int threads = 1;
    CircuitSolveOptions solver;
};

// the circuit as a distortion operator: volts in, Rabi rad/s out
class ResonatorOperator : public DistortionOperator {
public:
    ResonatorOperator(ResonatorModel model, ResonatorOperatorOptions opt);

    int input_steps() const override { return opt_.steps; }
    int input_channels() const override { return 2; }
    double input_dt() const override { return opt_.dt; }
    Unit input_unit() const override { return Unit::volts; }
    int output_steps() const override { return out_steps_; }
    int output_channels() const override { return 2; }
    double output_dt() const override { return opt_.delta_t; }
    Unit output_unit() const override { return Unit::rad_per_s; }

    DistortedPulse apply(const Pulse& p) const override;
    DistortionJacobian jacobian(const Pulse& p,
                                JacobianKind kind = JacobianKind::exact) const override;
    bool pulse_dependent_jacobian() const override {
        return model_.alpha_L > 0 || model_.alpha_R > 0;
    }

    struct Detail {
        DistortedPulse output;
        std::vector<cplx> compensation;
        Eigen::Vector3cd end_state = Eigen::Vector3cd::Zero();
        double peak_current = 0;      // max |I_L| over the samples
        double terminal_current = 0;  // |I_L| at the end of the covered span
    };
    Detail distort_detailed(const Pulse& p) const;

    // covered span: pulse + compensation + tail
    double covered_time() const { return total_time_; }
    long solve_count() const { return solves_.load(); }
    const ResonatorModel& model() const { return model_; }
    const ResonatorOperatorOptions& options() const { return opt_; }

private:
    struct RunAccess;
    DistortionJacobian jacobian_zero_order(const Pulse& p) const;
    DistortionJacobian jacobian_exact(const Pulse& p) const;

    ResonatorModel model_;
    ResonatorOperatorOptions opt_;
    int out_steps_ = 0;
    double total_time_ = 0;
    mutable std::atomic<long> solves_{0};
};

}  // namespace qoct
