#include "qoct/quantum.hpp"

#include <cmath>

namespace qoct {

namespace {

constexpr cplx kImag{0.0, 1.0};

// divided difference of f(x) = exp(-i*t*x) between eigenvalues a and b.
// Direct quotient loses accuracy when t*(a-b) is small; switch to the
// midpoint form there (error ~ (t*h)^2/24, crossover tuned for doubles).
cplx exp_divided_difference(double a, double b, double t) {
    double h = a - b;
    if (std::abs(t * h) < 1e-5) {
        return -kImag * t * std::exp(-kImag * t * (0.5 * (a + b)));
    }
    return (std::exp(-kImag * t * a) - std::exp(-kImag * t * b)) / cplx(h);
}

void check_pulse_against(const ControlProblem& prob, const DistortedPulse& q) {
    q.validate();
    if (q.unit != Unit::rad_per_s)
        throw ValidationError("propagation needs control amplitudes in rad/s");
    if (q.channels() != static_cast<int>(prob.controls.size()))
        throw DimensionError("distorted pulse channel count does not match control count");
}

}  // namespace

bool is_hermitian(const Mat& A, double tol) {
    if (A.rows() != A.cols()) return false;
    return (A - A.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

bool is_unitary(const Mat& U, double tol) {
    if (U.rows() != U.cols()) return false;
    Mat G = U.adjoint() * U;
    G.diagonal().array() -= 1.0;
    return G.cwiseAbs().maxCoeff() <= tol;
}

void ControlProblem::validate() const {
    const int d = dim();
    if (d < 2) throw DimensionError("problem dimension must be at least 2");
    if (H0.cols() != d) throw DimensionError("H0 must be square");
    if (!is_hermitian(H0)) throw ValidationError("H0 is not Hermitian");
    if (controls.empty()) throw ValidationError("problem has no control generators");
    for (const auto& Hl : controls) {
        if (Hl.rows() != d || Hl.cols() != d)
            throw DimensionError("control generator dimension mismatch");
        if (!is_hermitian(Hl)) throw ValidationError("control generator is not Hermitian");
    }
    if (U_target.rows() != d || U_target.cols() != d)
        throw DimensionError("target dimension mismatch");
    if (!is_unitary(U_target)) throw ValidationError("target is not unitary");
    if (detuning.size() > 0) {
        if (detuning.rows() != d || detuning.cols() != d)
            throw DimensionError("detuning generator dimension mismatch");
        if (!is_hermitian(detuning)) throw ValidationError("detuning generator is not Hermitian");
    }
}

ControlProblem ControlProblem::with_hypothesis(double delta_omega, double kappa_err) const {
    ControlProblem out = *this;
    if (delta_omega != 0.0) {
        if (detuning.size() == 0)
            throw ValidationError("sample has delta_omega but problem has no detuning generator");
        out.H0 = H0 + delta_omega * detuning;
    }
    if (kappa_err != 0.0) {
        for (auto& Hl : out.controls) Hl *= (1.0 + kappa_err);
    }
    return out;
}

Mat unitary_exp(const Mat& H, double t) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    if (es.info() != Eigen::Success)
        throw ValidationError("eigendecomposition failed in unitary_exp");
    const auto& lam = es.eigenvalues();
    Eigen::VectorXcd phases(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        phases(i) = std::exp(-kImag * t * lam(i));
    return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

std::vector<Mat> propagators(const ControlProblem& prob, const DistortedPulse& q) {
    check_pulse_against(prob, q);
    const int M = q.steps();
    const int L = q.channels();
    std::vector<Mat> U(M);
    Mat H(prob.dim(), prob.dim());
    for (int m = 0; m < M; ++m) {
        H = prob.H0;
        for (int l = 0; l < L; ++l) H += q.values(m, l) * prob.controls[l];
        U[m] = unitary_exp(H, q.delta_t);
    }
    return U;
}

double fidelity_from_propagators(const ControlProblem& prob, const std::vector<Mat>& U) {
    const int d = prob.dim();
    Mat X = Mat::Identity(d, d);
    for (const auto& Um : U) X = Um * X;
    cplx c = (prob.U_target.adjoint() * X).trace();
    return std::norm(c) / (static_cast<double>(d) * d);
}

double fidelity(const ControlProblem& prob, const DistortedPulse& q) {
    return fidelity_from_propagators(prob, propagators(prob, q));
}

double fidelity_and_gradient(const ControlProblem& prob, const DistortedPulse& q,
                             Eigen::MatrixXd* grad) {
    check_pulse_against(prob, q);
    if (!grad) throw ValidationError("fidelity_and_gradient needs a gradient output");
    const int M = q.steps();
    const int L = q.channels();
    const int d = prob.dim();
    const double dt = q.delta_t;

    std::vector<Mat> V(M);             // eigenvectors per step
    std::vector<Eigen::VectorXd> lam(M);
    std::vector<Mat> U(M);

    Mat H(d, d);
    for (int m = 0; m < M; ++m) {
        H = prob.H0;
        for (int l = 0; l < L; ++l) H += q.values(m, l) * prob.controls[l];
        Eigen::SelfAdjointEigenSolver<Mat> es(H);
        if (es.info() != Eigen::Success)
            throw ValidationError("eigendecomposition failed in fidelity_and_gradient");
        V[m] = es.eigenvectors();
        lam[m] = es.eigenvalues();
        Eigen::VectorXcd phases(d);
        for (int i = 0; i < d; ++i) phases(i) = std::exp(-kImag * dt * lam[m](i));
        U[m] = V[m] * phases.asDiagonal() * V[m].adjoint();
    }

    // forward products X_m = U_m ... U_1 (X[0] = identity)
    std::vector<Mat> X(M + 1);
    X[0] = Mat::Identity(d, d);
    for (int m = 0; m < M; ++m) X[m + 1] = U[m] * X[m];

    // suffix products S_m = U_M ... U_{m+1} (S[M] = identity)
    std::vector<Mat> S(M + 1);
    S[M] = Mat::Identity(d, d);
    for (int m = M - 1; m >= 0; --m) S[m] = S[m + 1] * U[m];

    const cplx c = (prob.U_target.adjoint() * X[M]).trace();
    const double d2 = static_cast<double>(d) * d;
    const double phi = std::norm(c) / d2;

    grad->resize(M, L);
    const Mat Ut_adj = prob.U_target.adjoint();
    Mat DD(d, d);
    for (int m = 0; m < M; ++m) {
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                DD(a, b) = exp_divided_difference(lam[m](a), lam[m](b), dt);
        // dc/dq(m,l) = Tr(Ut^dag S_m dU_m X_{m-1}) = Tr(W D) with the cyclic
        // reorder below; D = V (DD o (V^dag H_l V)) V^dag is the exact
        // derivative of the step exponential along H_l.
        Mat W = V[m].adjoint() * (X[m] * Ut_adj * S[m + 1]) * V[m];
        for (int l = 0; l < L; ++l) {
            Mat C = V[m].adjoint() * prob.controls[l] * V[m];
            cplx tr = (W.transpose().cwiseProduct(DD.cwiseProduct(C))).sum();
            (*grad)(m, l) = 2.0 / d2 * std::real(std::conj(c) * tr);
        }
    }
    return phi;
}

namespace pauli {
Mat I() { return Mat::Identity(2, 2); }
Mat X() {
    Mat m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}
Mat Y() {
    Mat m(2, 2);
    m << cplx(0, 0), cplx(0, -1), cplx(0, 1), cplx(0, 0);
    return m;
}
Mat Z() {
    Mat m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}
}  // namespace pauli

Mat embed_qubit_op(const Mat& op, int pos, int n_qubits) {
    if (pos < 0 || pos >= n_qubits) throw DimensionError("qubit index out of range");
    Mat out = Mat::Identity(1, 1);
    for (int i = 0; i < n_qubits; ++i) {
        const Mat& factor = (i == pos) ? op : pauli::I();
        Mat next(out.rows() * factor.rows(), out.cols() * factor.cols());
        for (Eigen::Index r = 0; r < out.rows(); ++r)
            for (Eigen::Index s = 0; s < out.cols(); ++s)
                next.block(r * factor.rows(), s * factor.cols(), factor.rows(), factor.cols()) =
                    out(r, s) * factor;
        out = std::move(next);
    }
    return out;
}

}  // namespace qoct
