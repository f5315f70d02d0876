#include "qoct/ringdown.hpp"

#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <limits>

#include "qoct/resonator.hpp"

namespace qoct {

void RingdownConfig::validate() const {
    for (double w : widths)
        if (!(w > 0)) throw ValidationError("compensation widths must be positive");
    if (!(target_fraction >= 0.0 && target_fraction <= 1.0))
        throw ValidationError("target fraction must lie in [0, 1]");
    const double scale = std::max(1.0, weight.cwiseAbs().maxCoeff());
    if ((weight - weight.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw ValidationError("weighting matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(weight);
    if (es.eigenvalues().minCoeff() < -1e-12 * scale)
        throw ValidationError("weighting matrix must be positive semi-definite");
}

namespace {

Eigen::Matrix3cd inverse_apply(const Eigen::Matrix3cd& a, const Eigen::Matrix3cd& rhs,
                               bool* fell_back) {
    Eigen::FullPivLU<Eigen::Matrix3cd> lu(a);
    lu.setThreshold(1e-13);
    if (lu.isInvertible()) return lu.solve(rhs);
    if (fell_back) *fell_back = true;
    return a.completeOrthogonalDecomposition().pseudoInverse() * rhs;
}

}  // namespace

RingdownStep ringdown_step(const Eigen::Matrix3cd& A, const Eigen::Vector3cd& b,
                           const Eigen::Matrix3d& weight, const Eigen::Vector3cd& x0,
                           cplx prev_amp, double width, double tau_r, double target_fraction) {
    if (!(width > 0)) throw ValidationError("compensation width must be positive");
    const Eigen::Matrix3cd I = Eigen::Matrix3cd::Identity();
    const Eigen::Matrix3cd E = (width * A).exp();

    RingdownStep out;
    Eigen::Matrix3cd G = Eigen::Matrix3cd::Zero();
    if (tau_r > 0) {
        const Eigen::Matrix3cd shifted = A + I / tau_r;
        G = inverse_apply(shifted, E - std::exp(-width / tau_r) * I, &out.pseudo_inverse);
    }
    const Eigen::Matrix3cd ainv_em1 = inverse_apply(A, E - I, &out.pseudo_inverse);

    const Eigen::Matrix3cd P = weight.cast<cplx>();
    const Eigen::Vector3cd w = P * ((E - target_fraction * I) * x0 + prev_amp * (G * b));
    const Eigen::Vector3cd v = P * ((G - ainv_em1) * b);
    const double vv = v.squaredNorm();
    if (!(vv > std::numeric_limits<double>::min()))
        throw ConvergenceError("compensation drive direction is degenerate");

    const cplx amp = v.dot(w) / vv;
    out.amplitude = amp;
    out.end_state = E * x0 + amp * (ainv_em1 * b) + (prev_amp - amp) * (G * b);
    return out;
}

RingdownResult ringdown_steps(const Eigen::Vector3cd& x0, cplx prev_amp,
                              const RingdownConfig& cfg, const ResonatorModel& model) {
    cfg.validate();
    model.validate();
    RingdownResult res;
    res.end_state = x0;
    const Eigen::Vector3cd b = circuit_input(model);
    cplx prev = prev_amp;
    for (double w : cfg.widths) {
        const Eigen::Matrix3cd A = circuit_matrix(model, res.end_state);
        RingdownStep s =
            ringdown_step(A, b, cfg.weight, res.end_state, prev, w, model.tau_r, cfg.target_fraction);
        res.amplitudes.push_back(s.amplitude);
        res.end_state = s.end_state;
        res.used_pseudo_inverse = res.used_pseudo_inverse || s.pseudo_inverse;
        prev = s.amplitude;
    }
    return res;
}

}  // namespace qoct
