#pragma once

#include <Eigen/Dense>

#include "qoct/common.hpp"

namespace qoct {

// Unit tag carried by pulse data. Direct control amplitudes are angular
// frequencies; hardware inputs (resonator drive) are volts.
enum class Unit { volts, rad_per_s };

inline const char* unit_name(Unit u) {
    return u == Unit::volts ? "V" : "rad/s";
}

// Piecewise-constant program: values(n, k) holds on [(n-1)*dt, n*dt).
struct Pulse {
    Eigen::MatrixXd values;  // N x K
    double dt = 0;
    Unit unit = Unit::rad_per_s;

    int steps() const { return static_cast<int>(values.rows()); }
    int channels() const { return static_cast<int>(values.cols()); }
    double duration() const { return steps() * dt; }

    void validate() const {
        if (values.rows() < 1 || values.cols() < 1)
            throw DimensionError("pulse needs at least one step and one channel");
        if (!(dt > 0)) throw ValidationError("pulse dt must be positive");
        if (!values.allFinite()) throw ValidationError("pulse contains non-finite values");
    }
};

// Output of a distortion: values(m, l) sampled at t'_m = (m-1/2)*delta_t.
struct DistortedPulse {
    Eigen::MatrixXd values;  // M x L
    double delta_t = 0;
    Unit unit = Unit::rad_per_s;

    int steps() const { return static_cast<int>(values.rows()); }
    int channels() const { return static_cast<int>(values.cols()); }

    void validate() const {
        if (values.rows() < 1 || values.cols() < 1)
            throw DimensionError("distorted pulse needs at least one step and one channel");
        if (!(delta_t > 0)) throw ValidationError("distorted pulse delta_t must be positive");
        if (!values.allFinite()) throw ValidationError("distorted pulse contains non-finite values");
    }
};

}  // namespace qoct
