#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>

#include "doctest.h"
#include "oracles.hpp"
#include "qoct/ode.hpp"

using namespace qoct;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

MatrixXcd random_decaying(int d, unsigned seed) {
    Rng rng(seed);
    MatrixXcd a(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
            a(r, c) = cplx(rng.uniform_symmetric(), rng.uniform_symmetric());
    // push eigenvalues into the left half plane so norms stay tame
    a -= 1.5 * MatrixXcd::Identity(d, d);
    return a;
}

// x(t) = e^{tA} x0 + alpha A^{-1}(e^{tA} - I) b
VectorXcd affine_exact(const MatrixXcd& a, const VectorXcd& x0, const VectorXcd& b, double alpha,
                       double t) {
    MatrixXcd e = oracle::expm_taylor(t * a);
    const int d = static_cast<int>(a.rows());
    return e * x0 + alpha * a.partialPivLu().solve((e - MatrixXcd::Identity(d, d)) * b);
}

}  // namespace

TEST_CASE("affine systems match the matrix-exponential solution") {
    for (unsigned seed : {1u, 2u, 3u}) {
        MatrixXcd a = random_decaying(3, seed);
        Rng rng(seed + 100);
        VectorXcd x0(3), b(3);
        for (int i = 0; i < 3; ++i) {
            x0[i] = cplx(rng.uniform_symmetric(), rng.uniform_symmetric());
            b[i] = cplx(rng.uniform_symmetric(), rng.uniform_symmetric());
        }
        const double alpha = 0.7;
        OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = a * x + alpha * b; };
        OdeSolution s = solve_ode(f, 0.0, 2.0, x0, {}, {});
        VectorXcd want = affine_exact(a, x0, b, alpha, 2.0);
        CHECK((s.y_end - want).norm() / want.norm() < 1e-8);
    }
}

TEST_CASE("fast oscillation keeps amplitude and phase") {
    const double w = 50.0, T = 10.0;
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = cplx(0, w) * x; };
    VectorXcd x0(1);
    x0[0] = 1.0;
    OdeSolution s = solve_ode(f, 0.0, T, x0, {}, {});
    CHECK(std::abs(std::abs(s.y_end[0]) - 1.0) < 1e-7);
    CHECK(std::abs(s.y_end[0] - std::exp(cplx(0, w * T))) < 1e-6);
    CHECK(s.accepted > 50);
}

TEST_CASE("resonator-scale frequencies integrate accurately") {
    // eigenvalues near +-1e10i with a 3e7 decay, spans of tens of nanoseconds
    const cplx lam(-3e7, 1.0125e10);
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = lam * x; };
    VectorXcd x0(1);
    x0[0] = cplx(0.3, -0.2);
    const double T = 2e-8;
    OdeSolution s = solve_ode(f, 0.0, T, x0, {}, {});
    const cplx want = x0[0] * std::exp(lam * T);
    CHECK(std::abs(s.y_end[0] - want) / std::abs(want) < 1e-7);
}

TEST_CASE("zero state with no forcing stays exactly zero") {
    MatrixXcd a = random_decaying(4, 5);
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = a * x; };
    OdeSolution s =
        solve_ode(f, 0.0, 1.0, VectorXcd::Zero(4), {0.25, 0.5}, {0.1, 0.6, 1.0});
    CHECK(s.y_end.norm() == 0.0);
    CHECK(s.samples.norm() == 0.0);
}

TEST_CASE("piecewise forcing with breakpoints is exact per segment") {
    MatrixXcd a = random_decaying(3, 9);
    VectorXcd b(3);
    b << cplx(1, 0), cplx(0, -1), cplx(0.5, 0.5);
    auto alpha = [](double t) { return t < 0.5 ? 1.0 : -2.0; };
    OdeRhs f = [&](double t, const VectorXcd& x, VectorXcd& dx) { dx = a * x + alpha(t) * b; };
    VectorXcd x0 = VectorXcd::Zero(3);
    OdeSolution s = solve_ode(f, 0.0, 1.0, x0, {0.5}, {0.5});
    VectorXcd mid = affine_exact(a, x0, b, 1.0, 0.5);
    VectorXcd want = affine_exact(a, mid, b, -2.0, 0.5);
    CHECK((s.samples.col(0) - mid).norm() / mid.norm() < 1e-8);
    CHECK((s.y_end - want).norm() / want.norm() < 1e-8);
}

TEST_CASE("breakpoints a few ulp inside the span do not stall the solver") {
    // roundoff in accumulated segment edges can land a breakpoint just past t0;
    // the resulting sliver segment must be merged away, not integrated
    const cplx lam(-2e8, 1.2e10);
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = lam * x; };
    VectorXcd x0(1);
    x0[0] = 1.0;
    const double t0 = 1.5e-7, t1 = 1.7e-7;
    double sliver = t0;
    for (int i = 0; i < 3; ++i) sliver = std::nextafter(sliver, 1.0);
    OdeSolution s = solve_ode(f, t0, t1, x0, {sliver, 1.6e-7}, {});
    const cplx want = std::exp(lam * (t1 - t0));
    CHECK(std::abs(s.y_end[0] - want) < 1e-6);
}

TEST_CASE("sampled values agree with separate short integrations") {
    MatrixXcd a = random_decaying(3, 21);
    VectorXcd x0(3);
    x0 << cplx(1, 0), cplx(0, 1), cplx(-0.5, 0.25);
    OdeRhs f = [&](double t, const VectorXcd& x, VectorXcd& dx) {
        dx = a * x;
        dx[0] += cplx(std::sin(3 * t), 0);
    };
    const std::vector<double> times{0.15, 0.4, 0.77, 1.0};
    OdeSolution s = solve_ode(f, 0.0, 1.0, x0, {}, times);
    for (std::size_t i = 0; i < times.size(); ++i) {
        OdeSolution direct = solve_ode(f, 0.0, times[i], x0, {}, {});
        CHECK((s.samples.col(static_cast<Eigen::Index>(i)) - direct.y_end).norm() < 1e-8);
    }
}

TEST_CASE("dense output interpolates to solver accuracy") {
    MatrixXcd a = random_decaying(2, 33);
    VectorXcd x0(2);
    x0 << cplx(0.2, -1), cplx(1, 0.5);
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = a * x; };
    OdeOptions opt;
    opt.store_dense = true;
    OdeSolution s = solve_ode(f, 0.0, 3.0, x0, {}, {}, opt);
    CHECK_FALSE(s.dense.empty());
    CHECK(s.dense.t_begin() == 0.0);
    CHECK(s.dense.t_end() == doctest::Approx(3.0));
    for (double t : {0.0, 0.311, 1.0, 1.9999, 2.5, 3.0}) {
        VectorXcd want = oracle::expm_taylor(t * a) * x0;
        CHECK((s.dense.eval(t) - want).norm() < 1e-7);
    }
    CHECK_THROWS_AS(s.dense.eval(-0.5), ValidationError);
    CHECK_THROWS_AS(s.dense.eval(3.5), ValidationError);
}

TEST_CASE("tolerances steer the error") {
    const cplx lam(0, 20.0);
    OdeRhs f = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = lam * x; };
    VectorXcd x0(1);
    x0[0] = 1.0;
    const cplx want = std::exp(lam * 5.0);
    OdeOptions loose, tight;
    loose.rtol = 1e-5;
    loose.atol = 1e-8;
    tight.rtol = 1e-12;
    tight.atol = 1e-14;
    const double e_loose = std::abs(solve_ode(f, 0, 5, x0, {}, {}, loose).y_end[0] - want);
    const double e_tight = std::abs(solve_ode(f, 0, 5, x0, {}, {}, tight).y_end[0] - want);
    CHECK(e_tight < e_loose);
    CHECK(e_tight < 1e-9);
}

TEST_CASE("argument validation") {
    OdeRhs f = [](double, const VectorXcd& x, VectorXcd& dx) { dx = x; };
    VectorXcd x0 = VectorXcd::Ones(2);
    CHECK_THROWS_AS(solve_ode(f, 1.0, 0.0, x0, {}, {}), ValidationError);
    CHECK_THROWS_AS(solve_ode(f, 0.0, 1.0, VectorXcd(), {}, {}), ValidationError);
    CHECK_THROWS_AS(solve_ode(f, 0.0, 1.0, x0, {}, {0.8, 0.2}), ValidationError);
    CHECK_THROWS_AS(solve_ode(f, 0.0, 1.0, x0, {}, {1.5}), ValidationError);
    OdeOptions bad;
    bad.atol_per_component = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(solve_ode(f, 0.0, 1.0, x0, {}, {}, bad), DimensionError);
    OdeOptions tiny;
    tiny.max_steps = 3;
    const cplx lam(0, 500.0);
    OdeRhs fast = [&](double, const VectorXcd& x, VectorXcd& dx) { dx = lam * x; };
    CHECK_THROWS_AS(solve_ode(fast, 0.0, 50.0, x0, {}, {}, tiny), IntegrationError);
    try {
        solve_ode(fast, 0.0, 50.0, x0, {}, {}, tiny);
    } catch (const IntegrationError& e) {
        CHECK(e.t_reached >= 0.0);
        CHECK(e.t_reached < 50.0);
    }
}
