#include "qoct/distortion.hpp"

#include <cmath>
#include <sstream>

#include "qoct/io.hpp"
#include "qoct/quadrature.hpp"

namespace qoct {

Eigen::MatrixXd DistortionJacobian::apply(const Eigen::MatrixXd& p) const {
    if (p.rows() != N || p.cols() != K)
        throw DimensionError("jacobian apply: pulse shape mismatch");
    Eigen::MatrixXd q(M, L);
    const double* d = a.data();
    for (int m = 0; m < M; ++m) {
        for (int l = 0; l < L; ++l) {
            double s = 0.0;
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) s += *d++ * p(n, k);
            q(m, l) = s;
        }
    }
    return q;
}

Eigen::MatrixXd DistortionJacobian::contract_gradient(const Eigen::MatrixXd& g) const {
    if (g.rows() != M || g.cols() != L)
        throw DimensionError("jacobian pullback: gradient shape mismatch");
    Eigen::MatrixXd gp = Eigen::MatrixXd::Zero(N, K);
    const double* d = a.data();
    for (int m = 0; m < M; ++m) {
        for (int l = 0; l < L; ++l) {
            const double gml = g(m, l);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) gp(n, k) += gml * *d++;
        }
    }
    return gp;
}

DistortionJacobian DistortionJacobian::chain(const DistortionJacobian& j2,
                                             const DistortionJacobian& j1) {
    if (j2.N != j1.M || j2.K != j1.L)
        throw DimensionError("jacobian chain: inner shape mismatch");
    DistortionJacobian out;
    out.resize(j2.M, j2.L, j1.N, j1.K);
    out.kind = (j2.kind == JacobianKind::exact && j1.kind == JacobianKind::exact)
                   ? JacobianKind::exact
                   : JacobianKind::zero_order;
    const int inner = j2.N * j2.K;
    const int right = j1.N * j1.K;
    // both factors are row-major matrices in their flattened index pairs
    for (int row = 0; row < j2.M * j2.L; ++row) {
        const double* a2 = j2.a.data() + static_cast<std::size_t>(row) * inner;
        double* o = out.a.data() + static_cast<std::size_t>(row) * right;
        for (int mid = 0; mid < inner; ++mid) {
            const double v = a2[mid];
            if (v == 0.0) continue;
            const double* a1 = j1.a.data() + static_cast<std::size_t>(mid) * right;
            for (int c = 0; c < right; ++c) o[c] += v * a1[c];
        }
    }
    return out;
}

void save_tensor_csv(const DistortionJacobian& j, const std::string& path) {
    std::string out;
    out += "# rank4 tensor, row-major (m,l,n,k); one line per (m,l)\n";
    out += std::string("# kind ") + (j.kind == JacobianKind::exact ? "exact" : "zero-order") + "\n";
    out += "# shape " + std::to_string(j.M) + " " + std::to_string(j.L) + " " +
           std::to_string(j.N) + " " + std::to_string(j.K) + "\n";
    const double* d = j.a.data();
    for (int m = 0; m < j.M; ++m) {
        for (int l = 0; l < j.L; ++l) {
            for (int c = 0; c < j.N * j.K; ++c) {
                if (c) out += ',';
                out += format_double(*d++);
            }
            out += '\n';
        }
    }
    atomic_write_text(path, out);
}

DistortionJacobian load_tensor_csv(const std::string& path) {
    CsvTable t = parse_csv(read_text(path));
    DistortionJacobian j;
    int M = 0, L = 0, N = 0, K = 0;
    for (const auto& m : t.meta) {
        std::istringstream ms(m);
        std::string key;
        ms >> key;
        if (key == "shape") ms >> M >> L >> N >> K;
        if (key == "kind") {
            std::string k;
            ms >> k;
            j.kind = (k == "zero-order") ? JacobianKind::zero_order : JacobianKind::exact;
        }
    }
    if (M < 1 || L < 1 || N < 1 || K < 1) throw IoError("tensor csv missing shape: " + path);
    const JacobianKind kind = j.kind;
    j.resize(M, L, N, K);
    j.kind = kind;
    if (static_cast<int>(t.rows.size()) != M * L)
        throw IoError("tensor csv row count mismatch: " + path);
    double* d = j.a.data();
    for (const auto& row : t.rows) {
        if (static_cast<int>(row.size()) != N * K)
            throw IoError("tensor csv column count mismatch: " + path);
        for (double v : row) *d++ = v;
    }
    return j;
}

void DistortionOperator::check_input(const Pulse& p) const {
    p.validate();
    if (p.steps() != input_steps() || p.channels() != input_channels())
        throw DimensionError("pulse shape does not match operator domain");
    if (std::abs(p.dt - input_dt()) > 1e-12 * std::max(1.0, std::abs(input_dt())))
        throw ValidationError("pulse dt does not match operator domain");
    if (p.unit != input_unit()) throw ValidationError("pulse unit does not match operator domain");
}

LinearDistortion::LinearDistortion(DistortionJacobian tensor, double dt, double delta_t, Unit unit)
    : j_(std::move(tensor)), dt_(dt), delta_t_(delta_t), unit_(unit) {
    if (!(dt_ > 0) || !(delta_t_ > 0))
        throw ValidationError("linear distortion needs positive step widths");
    if (j_.M < 1 || j_.L < 1 || j_.N < 1 || j_.K < 1)
        throw DimensionError("linear distortion tensor is empty");
}

DistortedPulse LinearDistortion::apply(const Pulse& p) const {
    check_input(p);
    DistortedPulse q;
    q.values = j_.apply(p.values);
    q.delta_t = delta_t_;
    q.unit = unit_;
    return q;
}

DistortionJacobian LinearDistortion::jacobian(const Pulse&, JacobianKind) const {
    return j_;  // pulse independent; requested kind is irrelevant for linear maps
}

ComposedDistortion::ComposedDistortion(std::shared_ptr<const DistortionOperator> second,
                                       std::shared_ptr<const DistortionOperator> first)
    : second_(std::move(second)), first_(std::move(first)) {
    if (!first_ || !second_) throw ValidationError("compose: null operator");
    if (first_->output_steps() != second_->input_steps() ||
        first_->output_channels() != second_->input_channels())
        throw DimensionError("compose: inner shapes do not match");
    const double a = first_->output_dt(), b = second_->input_dt();
    if (std::abs(a - b) > 1e-12 * std::max(std::abs(a), std::abs(b)))
        throw ValidationError("compose: inner step widths do not match");
    if (first_->output_unit() != second_->input_unit())
        throw ValidationError("compose: inner units do not match");
}

Pulse as_pulse(const DistortedPulse& q) {
    Pulse p;
    p.values = q.values;
    p.dt = q.delta_t;
    p.unit = q.unit;
    return p;
}

DistortedPulse ComposedDistortion::apply(const Pulse& p) const {
    return second_->apply(as_pulse(first_->apply(p)));
}

DistortionJacobian ComposedDistortion::jacobian(const Pulse& p, JacobianKind kind) const {
    DistortionJacobian j1 = first_->jacobian(p, kind);
    DistortionJacobian j2 = second_->jacobian(as_pulse(first_->apply(p)), kind);
    return DistortionJacobian::chain(j2, j1);
}

std::shared_ptr<DistortionOperator> compose(std::shared_ptr<const DistortionOperator> second,
                                            std::shared_ptr<const DistortionOperator> first) {
    return std::make_shared<ComposedDistortion>(std::move(second), std::move(first));
}

std::shared_ptr<LinearDistortion> identity_resample(int N, int K, double dt, int substeps,
                                                    Unit unit) {
    if (N < 1 || K < 1 || substeps < 1) throw DimensionError("identity_resample: bad shape");
    DistortionJacobian j;
    j.resize(N * substeps, K, N, K);
    for (int m = 0; m < N * substeps; ++m) {
        const int n = m / substeps;
        for (int k = 0; k < K; ++k) j.at(m, k, n, k) = 1.0;
    }
    return std::make_shared<LinearDistortion>(std::move(j), dt, dt / substeps, unit);
}

DistortionJacobian convolution_tensor(const ConvolutionKernel& kernel, int L, int K, int N,
                                      double dt, int M, double delta_t, double abs_tol) {
    if (L < 1 || K < 1 || N < 1 || M < 1) throw DimensionError("convolution_tensor: bad shape");
    if (!(dt > 0) || !(delta_t > 0))
        throw ValidationError("convolution_tensor: step widths must be positive");
    DistortionJacobian j;
    j.resize(M, L, N, K);
    for (int m = 0; m < M; ++m) {
        const double tm = (m + 0.5) * delta_t;
        for (int n = 0; n < N; ++n) {
            // integral over the input step of phi(t'_m - tau); substitute
            // u = t'_m - tau and clip to the kernel support
            double lo = std::max(tm - (n + 1) * dt, kernel.support_lo);
            double hi = std::min(tm - n * dt, kernel.support_hi);
            if (!(hi > lo)) continue;
            for (int l = 0; l < L; ++l)
                for (int k = 0; k < K; ++k)
                    j.at(m, l, n, k) = integrate(
                        [&](double u) { return kernel.phi(l, k, u); }, lo, hi, abs_tol);
        }
    }
    return j;
}

std::shared_ptr<LinearDistortion> risetime_distortion(const std::vector<double>& taus, int N,
                                                      double dt, double delta_t, int M,
                                                      Unit unit) {
    const int K = static_cast<int>(taus.size());
    if (K < 1 || N < 1) throw DimensionError("risetime_distortion: bad shape");
    if (!(dt > 0) || !(delta_t > 0))
        throw ValidationError("risetime_distortion: step widths must be positive");
    double tau_max = 0.0;
    for (double t : taus) {
        if (!(t > 0)) throw ValidationError("risetime_distortion: tau must be positive");
        tau_max = std::max(tau_max, t);
    }
    if (M < 0) M = static_cast<int>(std::ceil((N * dt + 10.0 * tau_max) / delta_t));

    DistortionJacobian j;
    j.resize(M, K, N, K);
    for (int m = 0; m < M; ++m) {
        const double tm = (m + 0.5) * delta_t;
        for (int n = 0; n < N; ++n) {
            const double tn = (n + 1) * dt;
            const double tn_prev = n * dt;
            for (int k = 0; k < K; ++k) {
                const double tau = taus[k];
                double v = 0.0;
                if (tn < tm) {
                    // whole step before the sample; both exponents <= 0
                    v = std::exp((tn - tm) / tau) - std::exp((tn_prev - tm) / tau);
                } else if (tn_prev < tm) {
                    // sample inside (tn_prev, tn]
                    v = 1.0 - std::exp((tn_prev - tm) / tau);
                }
                j.at(m, k, n, k) = v;
            }
        }
    }
    return std::make_shared<LinearDistortion>(std::move(j), dt, delta_t, unit);
}

std::shared_ptr<LinearDistortion> crosstalk_distortion(const Eigen::MatrixXd& chi, int N,
                                                       double dt, Unit unit) {
    const int C = static_cast<int>(chi.rows());
    if (C < 1 || chi.cols() != C) throw DimensionError("crosstalk matrix must be square");
    if (N < 1) throw DimensionError("crosstalk_distortion: bad step count");
    DistortionJacobian j;
    j.resize(N, C, N, C);
    for (int n = 0; n < N; ++n)
        for (int l = 0; l < C; ++l)
            for (int k = 0; k < C; ++k) j.at(n, l, n, k) = chi(l, k);
    return std::make_shared<LinearDistortion>(std::move(j), dt, dt, unit);
}

Eigen::MatrixXd load_crosstalk_csv(const std::string& path) {
    CsvTable t = parse_csv(read_text(path));
    if (t.rows.empty()) throw IoError("crosstalk csv has no rows: " + path);
    const int C = static_cast<int>(t.rows.size());
    Eigen::MatrixXd chi(C, C);
    for (int r = 0; r < C; ++r) {
        if (static_cast<int>(t.rows[r].size()) != C)
            throw IoError("crosstalk csv is not square: " + path);
        for (int c = 0; c < C; ++c) chi(r, c) = t.rows[r][c];
    }
    return chi;
}

void save_crosstalk_csv(const Eigen::MatrixXd& chi, const std::string& path) {
    std::string out = "# crosstalk matrix, subsystem-major channel order\n";
    for (Eigen::Index r = 0; r < chi.rows(); ++r) {
        for (Eigen::Index c = 0; c < chi.cols(); ++c) {
            if (c) out += ',';
            out += format_double(chi(r, c));
        }
        out += '\n';
    }
    atomic_write_text(path, out);
}

}  // namespace qoct
