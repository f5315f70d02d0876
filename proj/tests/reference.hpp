#pragma once

#include "qoct/resonator.hpp"

// the documented reference resonator: a heavily loaded 1.87 GHz drive tank,
// Q ~ 7.7 (1.3 ns envelope decay), 10 V drive well into the nonlinear regime
inline qoct::ResonatorModel reference_model() {
    qoct::ResonatorModel m;
    m.R0 = 6.0;
    m.L0 = 1e-9;
    m.alpha_L = 0.02;
    m.alpha_R = 0.05;
    m.eta = 2;
    m.C_m = 5e-12;
    m.C_t = 1e-11;
    m.R_L = 10.0;
    m.omega_r = 11725732098.26;
    m.kappa = 1.4e8;
    m.tau_r = 2e-11;
    return m;
}

inline qoct::ResonatorModel reference_model_linear() {
    qoct::ResonatorModel m = reference_model();
    m.alpha_L = 0;
    m.alpha_R = 0;
    return m;
}
