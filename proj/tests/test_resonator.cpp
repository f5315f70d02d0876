#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "qoct/io.hpp"
#include "qoct/resonator.hpp"
#include "reference.hpp"

using namespace qoct;
using Eigen::Matrix3cd;
using Eigen::MatrixXd;
using Eigen::Vector3cd;

namespace {

Pulse make_volt_pulse(int n, double dt, unsigned seed, double scale) {
    Rng rng(seed);
    Pulse p;
    p.values.resize(n, 2);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 2; ++k) p.values(i, k) = scale * rng.uniform_symmetric();
    p.dt = dt;
    p.unit = Unit::volts;
    return p;
}

double tensor_rel_err(const DistortionJacobian& a, const DistortionJacobian& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.a.size(); ++i) {
        num += (a.a[i] - b.a[i]) * (a.a[i] - b.a[i]);
        den += b.a[i] * b.a[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("model validation and json loading") {
    ResonatorModel m = reference_model();
    m.validate();
    ResonatorModel bad = m;
    bad.L0 = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = m;
    bad.alpha_L = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    const std::string path = "test_model.json";
    atomic_write_text(path,
                      "{\"R0\":6.0,\"L0\":1e-9,\"alpha_L\":0.02,\"alpha_R\":0.05,\"eta\":2,"
                      "\"C_m\":5e-12,\"C_t\":1e-11,\"R_L\":10.0,"
                      "\"omega_r\":11725732098.26,\"kappa\":1.4e8,\"tau_r\":2e-11}");
    ResonatorModel loaded = load_resonator_model(path);
    CHECK(loaded.R0 == m.R0);
    CHECK(loaded.C_m == m.C_m);
    CHECK(loaded.omega_r == m.omega_r);
    atomic_write_text(path, "{\"R0\":0.1}");
    CHECK_THROWS_AS(load_resonator_model(path), IoError);
    atomic_write_text(path, "not json");
    CHECK_THROWS_AS(load_resonator_model(path), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("circuit matrix entries follow the component laws") {
    ResonatorModel m = reference_model();
    Matrix3cd a0 = circuit_matrix_zero(m);
    CHECK(a0(0, 0) == cplx(-m.R0 / m.L0, -m.omega_r));
    CHECK(a0(0, 2) == cplx(1.0 / m.L0, 0));
    CHECK(a0(1, 1) == cplx(-1.0 / (m.R_L * m.C_m), -m.omega_r));
    CHECK(a0(2, 0) == cplx(-1.0 / m.C_t, 0));
    CHECK(a0(2, 2) == cplx(1.0 / (m.R_L * m.C_t), -m.omega_r));
    Vector3cd b = circuit_input(m);
    CHECK(b[0] == cplx(0));
    CHECK(b[1] == cplx(1.0 / (m.R_L * m.C_m)));

    // a current of 1 A raises both R and L
    Vector3cd x(cplx(1, 0), cplx(0, 0), cplx(0, 0));
    Matrix3cd a1 = circuit_matrix(m, x);
    const double L1 = m.L0 * (1 + m.alpha_L);
    const double R1 = m.R0 * (1 + m.alpha_R);
    CHECK(a1(0, 0).real() == doctest::Approx(-R1 / L1).epsilon(1e-14));
    CHECK(a1(0, 2).real() == doctest::Approx(1.0 / L1).epsilon(1e-14));
    // rows 2 and 3 are unaffected by the nonlinearity
    CHECK(a1(1, 1) == a0(1, 1));
    CHECK(a1(2, 0) == a0(2, 0));
}

TEST_CASE("piecewise forcing follows targets with the configured rise") {
    Pulse p;
    p.values.resize(2, 2);
    p.values << 1.0, 0.0, -0.5, 0.25;
    p.dt = 1.0;
    p.unit = Unit::volts;

    PiecewiseForcing sharp = PiecewiseForcing::from_pulse(p, 0.0);
    CHECK(sharp.eval(-0.1) == cplx(0));
    CHECK(sharp.eval(0.0) == cplx(1, 0));
    CHECK(sharp.eval(0.99) == cplx(1, 0));
    CHECK(sharp.eval(1.5) == cplx(-0.5, 0.25));
    CHECK(sharp.eval(2.0) == cplx(0));
    CHECK(sharp.eval(50.0) == cplx(0));

    const double tau = 0.01;
    PiecewiseForcing soft = PiecewiseForcing::from_pulse(p, tau);
    CHECK(std::abs(soft.eval(tau) - cplx(1 - std::exp(-1.0), 0)) < 1e-14);
    // nearly continuous at the interior edge
    CHECK(std::abs(soft.eval(1.0) - soft.eval(1.0 - 1e-12)) < 2e-5);
    // decays toward zero past the end
    CHECK(std::abs(soft.eval(2.0)) == doctest::Approx(std::abs(cplx(-0.5, 0.25))).epsilon(1e-9));
    CHECK(std::abs(soft.eval(2.0 + 5 * tau)) ==
          doctest::Approx(std::abs(cplx(-0.5, 0.25)) * std::exp(-5.0)).epsilon(1e-9));

    // weight matches a finite difference of eval in every regime
    for (double t : {0.004, 0.5, 1.003, 1.7, 2.004}) {
        for (int seg = 0; seg < 2; ++seg) {
            const double h = 1e-7;
            PiecewiseForcing up = soft, dn = soft;
            up.amps[seg] += h;
            dn.amps[seg] -= h;
            const double fd = (up.eval(t) - dn.eval(t)).real() / (2 * h);
            CHECK(std::abs(soft.weight(seg, t) - fd) <= 1e-6 * (1e-2 + std::abs(fd)));
        }
    }
    CHECK_THROWS_AS(soft.weight(5, 0.5), DimensionError);
    Pulse one_channel = make_volt_pulse(3, 1.0, 1, 1.0);
    one_channel.values = one_channel.values.col(0).eval();
    CHECK_THROWS_AS(PiecewiseForcing::from_pulse(one_channel, 0.0), DimensionError);
}

TEST_CASE("zero forcing from zero state stays zero") {
    PiecewiseForcing f;
    f.tau_r = reference_model().tau_r;
    f.append(1e-8, cplx(0));
    OdeSolution s = solve_circuit(f, reference_model(), 0, 1e-8, Vector3cd::Zero(),
                                  {2e-9, 5e-9, 9e-9});
    CHECK(s.y_end.norm() == 0.0);
    CHECK(s.samples.norm() == 0.0);
}

TEST_CASE("linear circuit matches the matrix-exponential solution") {
    ResonatorModel m = reference_model_linear();
    const double V = 2.0, T = 2e-8;
    PiecewiseForcing f;
    f.tau_r = 0;
    f.append(2 * T, cplx(V, 0));

    CircuitSolveOptions opt;
    opt.rtol = 1e-10;
    opt.atol_current = 1e-14;
    opt.atol_voltage = 1e-12;
    OdeSolution s = solve_circuit(f, m, 0, T, Vector3cd::Zero(), {}, opt);

    Matrix3cd a = circuit_matrix_zero(m);
    Vector3cd b = circuit_input(m);
    Eigen::MatrixXcd e = oracle::expm_taylor(T * a);
    Vector3cd want = a.partialPivLu().solve((e - Matrix3cd::Identity()) * (V * b));
    CHECK((s.y_end - want).norm() / want.norm() < 1e-8);
}

TEST_CASE("halving the tolerances moves samples by less than the coarse tolerance") {
    ResonatorModel m = reference_model();
    Pulse p = make_volt_pulse(4, 5e-10, 3, 4.0);
    PiecewiseForcing f = PiecewiseForcing::from_pulse(p, m.tau_r);
    const std::vector<double> times{5e-10, 1.1e-9, 1.9e-9};

    CircuitSolveOptions coarse;
    coarse.rtol = 1e-6;
    coarse.atol_current = 1e-8;
    coarse.atol_voltage = 1e-6;
    CircuitSolveOptions fine = coarse;
    fine.rtol /= 2;
    fine.atol_current /= 2;
    fine.atol_voltage /= 2;

    OdeSolution sc = solve_circuit(f, m, 0, 2e-9, Vector3cd::Zero(), times, coarse);
    OdeSolution sf = solve_circuit(f, m, 0, 2e-9, Vector3cd::Zero(), times, fine);
    const double scale = sf.samples.cwiseAbs().maxCoeff();
    CHECK((sc.samples - sf.samples).cwiseAbs().maxCoeff() / scale < 1e-6);
}

TEST_CASE("rotating-frame solution reproduces a lab-frame integration") {
    // slow toy circuit where the lab frame is cheap to integrate directly
    ResonatorModel m;
    m.R0 = 0.5;
    m.L0 = 1.0;
    m.C_m = 1.0;
    m.C_t = 2.0;
    m.R_L = 1.0;
    m.omega_r = 4.0;
    m.kappa = 1.0;
    m.tau_r = 0.05;
    m.alpha_L = 0;
    m.alpha_R = 0;

    Pulse p;
    p.values.resize(2, 2);
    p.values << 1.0, 0.0, -0.4, 0.3;
    p.dt = 1.5;
    p.unit = Unit::volts;
    PiecewiseForcing f = PiecewiseForcing::from_pulse(p, m.tau_r);

    const std::vector<double> times{0.7, 1.5, 2.3, 3.0};
    CircuitSolveOptions opt;
    opt.rtol = 1e-10;
    opt.atol_current = 1e-12;
    opt.atol_voltage = 1e-12;
    OdeSolution rot = solve_circuit(f, m, 0, 3.0, Vector3cd::Zero(), times, opt);

    // same circuit in the lab frame, driven by Re[alpha(t) e^{i w t}]
    Eigen::Matrix3d lab;
    lab << -m.R0 / m.L0, 0, 1 / m.L0, 0, -1 / (m.R_L * m.C_m), 1 / (m.R_L * m.C_m), -1 / m.C_t,
        -1 / (m.R_L * m.C_t), 1 / (m.R_L * m.C_t);
    Vector3cd b = circuit_input(m);
    OdeRhs lab_rhs = [&](double t, const Eigen::VectorXcd& x, Eigen::VectorXcd& dx) {
        const double force = std::real(f.eval(t) * std::exp(cplx(0, m.omega_r * t)));
        dx = lab.cast<cplx>() * x + force * b;
    };
    OdeOptions oo;
    oo.rtol = 1e-10;
    oo.atol = 1e-12;
    OdeSolution labsol =
        solve_ode(lab_rhs, 0, 3.0, Vector3cd::Zero(), {1.5, 3.0}, times, oo);

    for (std::size_t i = 0; i < times.size(); ++i) {
        Vector3cd back = rot.samples.col(static_cast<Eigen::Index>(i)) *
                         std::exp(cplx(0, m.omega_r * times[i]));
        CHECK((back.real() - labsol.samples.col(static_cast<Eigen::Index>(i)).real()).norm() <
              1e-6);
    }
}

TEST_CASE("distortion operator shapes, zero pulse, and linear scaling") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 6;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    CHECK(op.input_steps() == 6);
    CHECK(op.input_channels() == 2);
    CHECK(op.input_unit() == Unit::volts);
    CHECK(op.output_unit() == Unit::rad_per_s);
    CHECK(op.output_steps() == 12);
    CHECK(op.covered_time() == doctest::Approx(3e-9).scale(0).epsilon(1e-12));
    CHECK(op.pulse_dependent_jacobian());

    Pulse zero = make_volt_pulse(6, 5e-10, 1, 0.0);
    CHECK(op.apply(zero).values.cwiseAbs().maxCoeff() == 0.0);

    // small pulses respond linearly
    ResonatorOperator lin(reference_model_linear(), opt);
    Pulse p = make_volt_pulse(6, 5e-10, 7, 0.5);
    Pulse p3 = p;
    p3.values *= 3.0;
    MatrixXd q1 = lin.apply(p).values;
    MatrixXd q3 = lin.apply(p3).values;
    CHECK((q3 - 3.0 * q1).cwiseAbs().maxCoeff() / q3.cwiseAbs().maxCoeff() < 1e-6);

    Pulse wrong = make_volt_pulse(5, 5e-10, 1, 1.0);
    CHECK_THROWS_AS(op.apply(wrong), DimensionError);
    ResonatorOperatorOptions bad = opt;
    bad.dt = 1e-10;  // tau_r no longer well under dt/10
    CHECK_THROWS_AS(ResonatorOperator(m, bad), ValidationError);
}

TEST_CASE("late input steps cannot influence early output samples") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 6;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    Pulse p = make_volt_pulse(6, 5e-10, 11, 4.0);
    Pulse q = p;
    q.values(5, 0) += 2.0;
    q.values(5, 1) -= 1.0;
    MatrixXd a = op.apply(p).values;
    MatrixXd b = op.apply(q).values;
    // samples strictly before the perturbed step at 2.5 ns: rows 0..9
    const double scale = a.cwiseAbs().maxCoeff();
    CHECK((a.topRows(10) - b.topRows(10)).cwiseAbs().maxCoeff() / scale < 1e-12);
    CHECK((a.bottomRows(2) - b.bottomRows(2)).cwiseAbs().maxCoeff() / scale > 1e-4);
}

TEST_CASE("steady state of the linear circuit is proportional to drive") {
    ResonatorModel m = reference_model_linear();
    SteadyState lo = steady_state_response(0.3, m);
    SteadyState hi = steady_state_response(3.0, m);
    CHECK(hi.i_mag / lo.i_mag == doctest::Approx(10.0).epsilon(1e-6));

    // analytic fixed point of the linear envelope equation
    Matrix3cd a0 = circuit_matrix_zero(m);
    Vector3cd b = circuit_input(m);
    const double per_volt = std::abs(a0.partialPivLu().solve(b)[0]);
    CHECK(lo.i_mag == doctest::Approx(0.3 * per_volt).scale(0).epsilon(1e-3));
    CHECK(lo.f_ss_hz == doctest::Approx(m.kappa * lo.i_mag / (2 * M_PI)).epsilon(1e-12));
    CHECK(lo.settle_time > 0);
}

TEST_CASE("nonlinearity compresses the steady-state response") {
    ResonatorModel m = reference_model();
    SteadyState s01 = steady_state_response(0.1, m);
    SteadyState s1 = steady_state_response(1.0, m);
    SteadyState s10 = steady_state_response(10.0, m);

    // independently computed self-consistent fixed points
    CHECK(s01.i_mag == doctest::Approx(0.035412).scale(0).epsilon(5e-4));
    CHECK(s1.i_mag == doctest::Approx(0.348511).scale(0).epsilon(5e-4));
    CHECK(s10.i_mag == doctest::Approx(2.069914).scale(0).epsilon(5e-4));

    // drive still raises the current, but far below linear scaling
    CHECK(s1.i_mag > s01.i_mag);
    CHECK(s10.i_mag > s1.i_mag);
    CHECK(s10.i_mag < 100.0 * s01.i_mag);
    CHECK(s10.i_mag / 10.0 < s1.i_mag / 1.0);

    // weakening the series loss flips the loaded mode across the axis
    ResonatorModel unstable = m;
    unstable.R0 = 2.0;
    CHECK_THROWS_AS(steady_state_response(1.0, unstable), ConvergenceError);
    CHECK_THROWS_AS(steady_state_response(-1.0, m), ValidationError);
}

TEST_CASE("zero-order jacobian matches the exact one for the linear circuit") {
    ResonatorModel m = reference_model_linear();
    ResonatorOperatorOptions opt;
    opt.steps = 5;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    Pulse p = make_volt_pulse(5, 5e-10, 2, 1.0);
    DistortionJacobian j0 = op.jacobian(p, JacobianKind::zero_order);
    DistortionJacobian je = op.jacobian(p, JacobianKind::exact);
    CHECK(j0.kind == JacobianKind::zero_order);
    CHECK(je.kind == JacobianKind::exact);
    CHECK(tensor_rel_err(j0, je) < 1e-6);

    // time invariance: column n+1 is column n delayed by one input step
    double jscale = 0;
    for (double v : j0.a) jscale = std::max(jscale, std::abs(v));
    const int shift = 2;  // dt / delta_t
    for (int n = 0; n + 1 < 5; ++n)
        for (int k = 0; k < 2; ++k)
            for (int m2 = 0; m2 + shift < j0.M; ++m2)
                for (int l = 0; l < 2; ++l)
                    CHECK(j0.at(m2 + shift, l, n + 1, k) ==
                          doctest::Approx(j0.at(m2, l, n, k)).epsilon(5e-6).scale(jscale));
}

TEST_CASE("zero-order jacobian predicts small-pulse responses") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 5;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    Pulse shape = make_volt_pulse(5, 5e-10, 2, 0.0);
    DistortionJacobian j0 = op.jacobian(shape, JacobianKind::zero_order);

    Pulse dp = make_volt_pulse(5, 5e-10, 19, 0.02);
    MatrixXd predicted = j0.apply(dp.values);
    MatrixXd actual = op.apply(dp).values;
    CHECK((predicted - actual).norm() / actual.norm() < 1e-3);
}

TEST_CASE("exact jacobian agrees with symmetric differences in the nonlinear regime") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 5;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    Pulse p = make_volt_pulse(5, 5e-10, 23, 4.0);
    DistortionJacobian je = op.jacobian(p, JacobianKind::exact);

    Pulse dp = make_volt_pulse(5, 5e-10, 29, 1e-3);
    Pulse up = p, dn = p;
    up.values += dp.values;
    dn.values -= dp.values;
    MatrixXd fd = 0.5 * (op.apply(up).values - op.apply(dn).values);
    MatrixXd predicted = je.apply(dp.values);
    CHECK((predicted - fd).norm() / fd.norm() < 1e-3);
}

TEST_CASE("exact jacobian at zero equals the small-probe limit") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 4;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    Pulse zero = make_volt_pulse(4, 5e-10, 2, 0.0);

    ResonatorOperator op(m, opt);
    DistortionJacobian je = op.jacobian(zero, JacobianKind::exact);

    ResonatorOperatorOptions half = opt;
    half.probe_amplitude = opt.probe_amplitude / 2;
    DistortionJacobian j1 = op.jacobian(zero, JacobianKind::zero_order);
    DistortionJacobian j2 = ResonatorOperator(m, half).jacobian(zero, JacobianKind::zero_order);
    // odd nonlinearity: leading probe error is quadratic, so extrapolate
    DistortionJacobian jx = j1;
    for (std::size_t i = 0; i < jx.a.size(); ++i) jx.a[i] = (4 * j2.a[i] - j1.a[i]) / 3;
    CHECK(tensor_rel_err(jx, je) < 1e-6);
}

TEST_CASE("exact jacobian columns match the linear-circuit closed form") {
    ResonatorModel m = reference_model_linear();
    m.tau_r = 2e-11;
    ResonatorOperatorOptions opt;
    opt.steps = 3;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    opt.tail = 5e-10;
    ResonatorOperator op(m, opt);
    Pulse p = make_volt_pulse(3, 5e-10, 5, 1.0);
    DistortionJacobian je = op.jacobian(p, JacobianKind::exact);

    const Matrix3cd a = circuit_matrix_zero(m);
    const Vector3cd b = circuit_input(m);
    const double dt = opt.dt, tau = m.tau_r;
    auto E = [&](double w) { return Eigen::MatrixXcd(oracle::expm_taylor(w * a)); };
    const Matrix3cd ainv = a.inverse();
    const Matrix3cd shifted_inv = (a + Matrix3cd::Identity() / tau).inverse();
    auto G = [&](double w) {
        return Matrix3cd(shifted_inv * (E(w) - std::exp(-w / tau) * Matrix3cd::Identity()));
    };

    for (int n = 0; n < 3; ++n) {
        for (int k = 0; k < 2; ++k) {
            const cplx drive = k == 0 ? cplx(1, 0) : cplx(0, 1);
            const Vector3cd db = drive * b;
            const double t_n = n * dt, t_n1 = (n + 1) * dt, t_n2 = (n + 2) * dt;
            const bool last = n == 2;
            const Vector3cd y_n1 = (ainv * (E(dt) - Matrix3cd::Identity()) - G(dt)) * db;
            for (int mm = 0; mm < je.M; ++mm) {
                const double t = (mm + 0.5) * opt.delta_t;
                Vector3cd y = Vector3cd::Zero();
                if (t > t_n && t <= t_n1) {
                    const double w = t - t_n;
                    y = (ainv * (E(w) - Matrix3cd::Identity()) - G(w)) * db;
                } else if (t > t_n1 && (last || t <= t_n2)) {
                    const double w = t - t_n1;
                    y = E(w) * y_n1 + G(w) * db;
                } else if (t > t_n1) {
                    const Vector3cd y_n2 = E(dt) * y_n1 + G(dt) * db;
                    y = E(t - t_n2) * y_n2;
                }
                const double scale = std::abs(m.kappa * y_n1[0]) + 1e-6;
                CHECK(je.at(mm, 0, n, k) ==
                      doctest::Approx(m.kappa * y[0].real()).epsilon(1e-6).scale(scale));
                CHECK(je.at(mm, 1, n, k) ==
                      doctest::Approx(m.kappa * y[0].imag()).epsilon(1e-6).scale(scale));
            }
        }
    }
}

TEST_CASE("jacobian columns are identical under different thread counts") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 4;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperatorOptions threaded = opt;
    threaded.threads = 3;
    Pulse p = make_volt_pulse(4, 5e-10, 31, 3.0);
    DistortionJacobian a = ResonatorOperator(m, opt).jacobian(p, JacobianKind::exact);
    DistortionJacobian b = ResonatorOperator(m, threaded).jacobian(p, JacobianKind::exact);
    for (std::size_t i = 0; i < a.a.size(); ++i) CHECK(a.a[i] == b.a[i]);

    DistortionJacobian c = ResonatorOperator(m, opt).jacobian(p, JacobianKind::zero_order);
    DistortionJacobian d = ResonatorOperator(m, threaded).jacobian(p, JacobianKind::zero_order);
    for (std::size_t i = 0; i < c.a.size(); ++i) CHECK(c.a[i] == d.a[i]);
}

TEST_CASE("solve counter tracks the work done") {
    ResonatorModel m = reference_model();
    ResonatorOperatorOptions opt;
    opt.steps = 4;
    opt.dt = 5e-10;
    opt.delta_t = 2.5e-10;
    ResonatorOperator op(m, opt);
    Pulse p = make_volt_pulse(4, 5e-10, 3, 1.0);
    CHECK(op.solve_count() == 0);
    op.apply(p);
    CHECK(op.solve_count() == 1);
    op.jacobian(p, JacobianKind::zero_order);
    CHECK(op.solve_count() == 1 + 8);
    op.jacobian(p, JacobianKind::exact);
    CHECK(op.solve_count() == 1 + 8 + 1 + 8);
}
