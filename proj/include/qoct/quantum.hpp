#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qoct/common.hpp"
#include "qoct/pulse.hpp"

namespace qoct {

using Mat = Eigen::MatrixXcd;

bool is_hermitian(const Mat& A, double tol = kHermitianTol);
bool is_unitary(const Mat& U, double tol = kUnitaryTol);

// Piecewise-constant bilinear control problem: H(t) = H0 + sum_l q(t,l) * H_l.
// All generators in rad/s; propagation steps use the delta_t of the distorted
// pulse handed to the evaluation calls. `detuning` (optional, empty if unused)
// is the generator multiplied by a hypothesis detuning when building sample
// variants; kept here so problem variants stay self-describing.
struct ControlProblem {
    Mat H0;
    std::vector<Mat> controls;
    Mat U_target;
    Mat detuning;  // 0x0 when absent

    int dim() const { return static_cast<int>(H0.rows()); }
    void validate() const;

    // variant with H0 + dw*detuning and controls scaled by (1 + kappa_err)
    ControlProblem with_hypothesis(double delta_omega, double kappa_err) const;
};

// exp(-i * t * H) for Hermitian H, via eigendecomposition
Mat unitary_exp(const Mat& H, double t);

// step propagators U_m for a distorted pulse (q in rad/s)
std::vector<Mat> propagators(const ControlProblem& prob, const DistortedPulse& q);

// Phi = |Tr(U_target^dag U_M ... U_1)|^2 / d^2, in [0, 1]
double fidelity(const ControlProblem& prob, const DistortedPulse& q);
double fidelity_from_propagators(const ControlProblem& prob, const std::vector<Mat>& U);

// Gradient of the objective with respect to q(m, l). Uses the adjoint
// forward/backward propagator split and the exact directional derivative of
// each step exponential (eigenbasis divided differences), so it agrees with
// finite differences at any step size, not just to first order in delta_t.
// Returns Phi; grad must be non-null.
double fidelity_and_gradient(const ControlProblem& prob, const DistortedPulse& q,
                             Eigen::MatrixXd* grad);

// common generators
namespace pauli {
Mat I();
Mat X();
Mat Y();
Mat Z();
}  // namespace pauli

// n-qubit operator with `op` at position `pos` (0-based), identity elsewhere
Mat embed_qubit_op(const Mat& op, int pos, int n_qubits);

}  // namespace qoct
