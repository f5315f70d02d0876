#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qoct/common.hpp"

namespace qoct {

struct ResonatorModel;

// compensation steps appended after a pulse to pull the circuit state down
struct RingdownConfig {
    std::vector<double> widths;  // seconds, one per compensation step
    double target_fraction = 0.0;  // r: per-step goal ||P x|| -> r ||P x0||
    Eigen::Matrix3d weight = (Eigen::Matrix3d() << 1, 0, 0, 0, 0, 0, 0, 0, 0).finished();

    int steps() const { return static_cast<int>(widths.size()); }
    void validate() const;
};

// one constant-A compensation step: drive amplitude minimizing ||P(x(w) - r x0)||
struct RingdownStep {
    cplx amplitude;
    Eigen::Vector3cd end_state;
    bool pseudo_inverse = false;
};

RingdownStep ringdown_step(const Eigen::Matrix3cd& A, const Eigen::Vector3cd& b,
                           const Eigen::Matrix3d& weight, const Eigen::Vector3cd& x0,
                           cplx prev_amp, double width, double tau_r, double target_fraction);

struct RingdownResult {
    std::vector<cplx> amplitudes;
    Eigen::Vector3cd end_state;
    bool used_pseudo_inverse = false;
};

// sequential steps; A refrozen at each step's starting state
RingdownResult ringdown_steps(const Eigen::Vector3cd& x0, cplx prev_amp,
                              const RingdownConfig& cfg, const ResonatorModel& model);

}  // namespace qoct
