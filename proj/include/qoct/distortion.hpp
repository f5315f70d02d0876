#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "qoct/common.hpp"
#include "qoct/pulse.hpp"

namespace qoct {

enum class JacobianKind { exact, zero_order };

// Rank-4 derivative dq(m,l)/dp(n,k), stored dense and row-major in
// (m, l, n, k). This index order is fixed across the whole project; channel
// pairs flatten subsystem-major, e.g. (Q1,x),(Q1,y),(Q2,x),... for chains.
struct DistortionJacobian {
    int M = 0, L = 0, N = 0, K = 0;
    JacobianKind kind = JacobianKind::exact;
    std::vector<double> a;

    void resize(int m, int l, int n, int k) {
        M = m;
        L = l;
        N = n;
        K = k;
        a.assign(static_cast<std::size_t>(m) * l * n * k, 0.0);
    }

    double& at(int m, int l, int n, int k) {
        return a[((static_cast<std::size_t>(m) * L + l) * N + n) * K + k];
    }
    double at(int m, int l, int n, int k) const {
        return a[((static_cast<std::size_t>(m) * L + l) * N + n) * K + k];
    }

    // q(m,l) = sum_{n,k} J(m,l,n,k) p(n,k)
    Eigen::MatrixXd apply(const Eigen::MatrixXd& p) const;

    // pullback of an objective gradient: gp(n,k) = sum_{m,l} g(m,l) J(m,l,n,k)
    Eigen::MatrixXd contract_gradient(const Eigen::MatrixXd& g) const;

    // composition: (j2 . j1)(m,l,n,k) = sum_{n',k'} j2(m,l,n',k') j1(n',k',n,k)
    static DistortionJacobian chain(const DistortionJacobian& j2, const DistortionJacobian& j1);
};

void save_tensor_csv(const DistortionJacobian& j, const std::string& path);
DistortionJacobian load_tensor_csv(const std::string& path);

// Discretized distortion g: (N steps, K channels, width dt) ->
// (M samples, L channels, spacing delta_t). Output samples live at
// t'_m = (m - 1/2) delta_t on the same time axis as the input steps.
class DistortionOperator {
public:
    virtual ~DistortionOperator() = default;

    virtual int input_steps() const = 0;
    virtual int input_channels() const = 0;
    virtual double input_dt() const = 0;
    virtual Unit input_unit() const = 0;
    virtual int output_steps() const = 0;
    virtual int output_channels() const = 0;
    virtual double output_dt() const = 0;
    virtual Unit output_unit() const = 0;

    virtual DistortedPulse apply(const Pulse& p) const = 0;
    virtual DistortionJacobian jacobian(const Pulse& p,
                                        JacobianKind kind = JacobianKind::exact) const = 0;

    // false when the Jacobian never depends on the pulse (linear maps)
    virtual bool pulse_dependent_jacobian() const { return false; }

    void check_input(const Pulse& p) const;
};

// dense linear map defined by its tensor
class LinearDistortion : public DistortionOperator {
public:
    LinearDistortion(DistortionJacobian tensor, double dt, double delta_t,
                     Unit unit = Unit::volts);

    int input_steps() const override { return j_.N; }
    int input_channels() const override { return j_.K; }
    double input_dt() const override { return dt_; }
    Unit input_unit() const override { return unit_; }
    int output_steps() const override { return j_.M; }
    int output_channels() const override { return j_.L; }
    double output_dt() const override { return delta_t_; }
    Unit output_unit() const override { return unit_; }

    DistortedPulse apply(const Pulse& p) const override;
    DistortionJacobian jacobian(const Pulse&,
                                JacobianKind kind = JacobianKind::exact) const override;
    const DistortionJacobian& tensor() const { return j_; }

private:
    DistortionJacobian j_;
    double dt_, delta_t_;
    Unit unit_;
};

// g2 after g1; Jacobian is the chained contraction
class ComposedDistortion : public DistortionOperator {
public:
    ComposedDistortion(std::shared_ptr<const DistortionOperator> second,
                       std::shared_ptr<const DistortionOperator> first);

    int input_steps() const override { return first_->input_steps(); }
    int input_channels() const override { return first_->input_channels(); }
    double input_dt() const override { return first_->input_dt(); }
    Unit input_unit() const override { return first_->input_unit(); }
    int output_steps() const override { return second_->output_steps(); }
    int output_channels() const override { return second_->output_channels(); }
    double output_dt() const override { return second_->output_dt(); }
    Unit output_unit() const override { return second_->output_unit(); }

    DistortedPulse apply(const Pulse& p) const override;
    DistortionJacobian jacobian(const Pulse& p,
                                JacobianKind kind = JacobianKind::exact) const override;
    bool pulse_dependent_jacobian() const override {
        return first_->pulse_dependent_jacobian() || second_->pulse_dependent_jacobian();
    }

private:
    std::shared_ptr<const DistortionOperator> second_, first_;
};

std::shared_ptr<DistortionOperator> compose(std::shared_ptr<const DistortionOperator> second,
                                            std::shared_ptr<const DistortionOperator> first);

// intermediate hand-off inside compositions
Pulse as_pulse(const DistortedPulse& q);

// each input step repeated `substeps` times; M = N * substeps
std::shared_ptr<LinearDistortion> identity_resample(int N, int K, double dt, int substeps,
                                                    Unit unit = Unit::volts);

// channel-diagonal causal kernel phi(t) with a support window; entries are
// integrals of the kernel over input steps, evaluated by adaptive quadrature
struct ConvolutionKernel {
    std::function<double(int l, int k, double t)> phi;
    double support_lo = 0.0;
    double support_hi = std::numeric_limits<double>::infinity();
};

DistortionJacobian convolution_tensor(const ConvolutionKernel& kernel, int L, int K, int N,
                                      double dt, int M, double delta_t, double abs_tol = 1e-10);

// first-order low-pass response, phi_l(t) = exp(-t/tau_l)/tau_l, in closed
// form (no quadrature); the half-open sample convention puts a sample lying
// exactly on an input edge with the step that ends there
std::shared_ptr<LinearDistortion> risetime_distortion(const std::vector<double>& taus, int N,
                                                      double dt, double delta_t, int M = -1,
                                                      Unit unit = Unit::volts);

// static mixing matrix chi (IK x IK, subsystem-major) lifted pointwise in time
std::shared_ptr<LinearDistortion> crosstalk_distortion(const Eigen::MatrixXd& chi, int N,
                                                       double dt,
                                                       Unit unit = Unit::volts);

Eigen::MatrixXd load_crosstalk_csv(const std::string& path);
void save_crosstalk_csv(const Eigen::MatrixXd& chi, const std::string& path);

}  // namespace qoct
