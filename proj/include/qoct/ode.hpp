#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "qoct/common.hpp"

namespace qoct {

// right-hand side: dx = f(t, x), written into the preallocated output
using OdeRhs = std::function<void(double, const Eigen::VectorXcd&, Eigen::VectorXcd&)>;

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    Eigen::VectorXd atol_per_component;  // overrides atol when sized
    double h_max = std::numeric_limits<double>::infinity();
    long max_steps = 50'000'000;
    bool store_dense = false;
};

namespace detail {

// Dormand-Prince 5(4) tableau with the quartic interpolant
struct Dopri5Step {
    double t0 = 0, h = 0;
    Eigen::VectorXcd r1, r2, r3, r4, r5;

    Eigen::VectorXcd eval(double t) const {
        const double th = (t - t0) / h;
        const double th1 = 1.0 - th;
        return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
    }
};

}  // namespace detail

class DenseTrajectory {
  public:
    void reserve(std::size_t n) { steps_.reserve(n); }
    void add(detail::Dopri5Step s) { steps_.push_back(std::move(s)); }
    bool empty() const { return steps_.empty(); }
    double t_begin() const { return steps_.front().t0; }
    double t_end() const { return steps_.back().t0 + steps_.back().h; }

    Eigen::VectorXcd eval(double t) const {
        if (empty()) throw ValidationError("dense trajectory is empty");
        const double lo = t_begin(), hi = t_end();
        const double slack = 1e-9 * std::max(1.0, std::abs(hi - lo));
        if (t < lo - slack || t > hi + slack)
            throw ValidationError("dense trajectory evaluated outside its span");
        t = std::clamp(t, lo, hi);
        // first step whose start lies past t, then back up one
        auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                                   [](double v, const detail::Dopri5Step& s) { return v < s.t0; });
        if (it != steps_.begin()) --it;
        return it->eval(t);
    }

  private:
    std::vector<detail::Dopri5Step> steps_;
};

struct OdeSolution {
    double t_end = 0;
    Eigen::VectorXcd y_end;
    Eigen::MatrixXcd samples;  // one column per requested sample time
    DenseTrajectory dense;     // filled when store_dense is set
    long accepted = 0, rejected = 0, rhs_evals = 0;
};

inline OdeSolution solve_ode(const OdeRhs& f, double t0, double t1, const Eigen::VectorXcd& y0,
                             const std::vector<double>& breakpoints,
                             const std::vector<double>& sample_times, const OdeOptions& opt = {}) {
    using Vec = Eigen::VectorXcd;
    const Eigen::Index dim = y0.size();
    if (dim == 0) throw ValidationError("ode state is empty");
    if (!(t1 > t0)) throw ValidationError("ode span must run forward");
    for (std::size_t i = 1; i < sample_times.size(); ++i)
        if (sample_times[i] < sample_times[i - 1])
            throw ValidationError("ode sample times must be sorted");
    if (!sample_times.empty() && (sample_times.front() < t0 - 1e-12 * (t1 - t0) ||
                                  sample_times.back() > t1 + 1e-12 * (t1 - t0)))
        throw ValidationError("ode sample times must lie inside the span");

    Eigen::VectorXd atol;
    if (opt.atol_per_component.size() == dim)
        atol = opt.atol_per_component;
    else if (opt.atol_per_component.size() != 0)
        throw DimensionError("atol vector does not match the state");
    else
        atol = Eigen::VectorXd::Constant(dim, opt.atol);

    // segment boundaries: restart the integrator at every forcing discontinuity;
    // merge anything closer than the step-underflow scale so accumulated edge
    // roundoff cannot produce a segment too short to integrate
    const double eps = std::numeric_limits<double>::epsilon();
    std::vector<double> edges{t0};
    for (double b : breakpoints)
        if (b > t0 && b < t1) edges.push_back(b);
    edges.push_back(t1);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end(),
                            [&](double a, double b) {
                                const double tol =
                                    std::max(1e-15 * (t1 - t0),
                                             32 * eps * std::max(std::abs(a), std::abs(b)));
                                return std::abs(a - b) <= tol;
                            }),
                edges.end());
    edges.back() = t1;

    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                     a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                     a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                     e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                     d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                     d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

    OdeSolution sol;
    sol.samples.resize(dim, static_cast<Eigen::Index>(sample_times.size()));
    std::size_t next_sample = 0;
    // samples that coincide with t0
    Vec y = y0;
    while (next_sample < sample_times.size() && sample_times[next_sample] <= t0) {
        sol.samples.col(static_cast<Eigen::Index>(next_sample)) = y;
        ++next_sample;
    }

    Vec k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim), ytmp(dim), ynew(dim);
    auto err_norm = [&](const Vec& ya, const Vec& yb, const Vec& e) {
        double acc = 0;
        for (Eigen::Index i = 0; i < dim; ++i) {
            const double sc = atol[i] + opt.rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
            const double q = std::abs(e[i]) / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(dim));
    };

    double t = t0;
    for (std::size_t seg = 0; seg + 1 < edges.size(); ++seg) {
        const double seg_end = edges[seg + 1];
        t = edges[seg];
        f(t, y, k1);
        ++sol.rhs_evals;

        // starting step size from the local derivative scale
        double h;
        {
            double d0 = 0, dd1 = 0;
            for (Eigen::Index i = 0; i < dim; ++i) {
                const double sc = atol[i] + opt.rtol * std::abs(y[i]);
                d0 += std::pow(std::abs(y[i]) / sc, 2);
                dd1 += std::pow(std::abs(k1[i]) / sc, 2);
            }
            d0 = std::sqrt(d0 / dim);
            dd1 = std::sqrt(dd1 / dim);
            double h0 = (d0 < 1e-5 || dd1 < 1e-5) ? 1e-6 * (seg_end - t) : 0.01 * d0 / dd1;
            h0 = std::min(h0, seg_end - t);
            ytmp = y + cplx(h0) * k1;
            f(t + h0, ytmp, k2);
            ++sol.rhs_evals;
            double d2 = 0;
            for (Eigen::Index i = 0; i < dim; ++i) {
                const double sc = atol[i] + opt.rtol * std::abs(y[i]);
                d2 += std::pow(std::abs(k2[i] - k1[i]) / sc, 2);
            }
            d2 = std::sqrt(d2 / dim) / h0;
            const double dm = std::max(dd1, d2);
            double h1 = (dm <= 1e-15) ? std::max(1e-6 * (seg_end - t), h0 * 1e-3)
                                      : std::pow(0.01 / dm, 0.2);
            h = std::min({100 * h0, h1, seg_end - t, opt.h_max});
        }

        bool rejected_last = false;
        while (t < seg_end) {
            if (sol.accepted + sol.rejected > opt.max_steps)
                throw IntegrationError("ode step budget exhausted", t);
            if (h < 16 * eps * std::max(std::abs(t), std::abs(seg_end)))
                throw IntegrationError("ode step size underflow", t);
            bool hit_end = false;
            if (t + h >= seg_end) {
                h = seg_end - t;
                hit_end = true;
            }

            ytmp = y + cplx(h) * (a21 * k1);
            f(t + c2 * h, ytmp, k2);
            ytmp = y + cplx(h) * (a31 * k1 + a32 * k2);
            f(t + c3 * h, ytmp, k3);
            ytmp = y + cplx(h) * (a41 * k1 + a42 * k2 + a43 * k3);
            f(t + c4 * h, ytmp, k4);
            ytmp = y + cplx(h) * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
            f(t + c5 * h, ytmp, k5);
            ytmp = y + cplx(h) * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            f(t + h, ytmp, k6);
            ynew = y + cplx(h) * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
            f(t + h, ynew, k7);
            sol.rhs_evals += 6;

            ytmp = cplx(h) * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            const double err = err_norm(y, ynew, ytmp);

            if (err <= 1.0) {
                const double t_new = hit_end ? seg_end : t + h;
                const bool want_dense =
                    opt.store_dense ||
                    (next_sample < sample_times.size() && sample_times[next_sample] <= t_new);
                if (want_dense) {
                    detail::Dopri5Step ds;
                    ds.t0 = t;
                    ds.h = t_new - t;
                    ds.r1 = y;
                    ds.r2 = ynew - y;
                    ds.r3 = cplx(h) * k1 - ds.r2;
                    ds.r4 = ds.r2 - cplx(h) * k7 - ds.r3;
                    ds.r5 = cplx(h) * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
                    while (next_sample < sample_times.size() &&
                           sample_times[next_sample] <= t_new) {
                        sol.samples.col(static_cast<Eigen::Index>(next_sample)) =
                            ds.eval(sample_times[next_sample]);
                        ++next_sample;
                    }
                    if (opt.store_dense) sol.dense.add(std::move(ds));
                }
                ++sol.accepted;
                t = t_new;
                y.swap(ynew);
                k1.swap(k7);  // first-same-as-last
                double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
                fac = std::min(rejected_last ? 1.0 : 10.0, std::max(0.2, fac));
                h = std::min(h * fac, opt.h_max);
                rejected_last = false;
            } else {
                ++sol.rejected;
                rejected_last = true;
                h *= std::min(1.0, std::max(0.2, 0.9 * std::pow(err, -0.2)));
            }
        }
    }

    // samples at exactly t1 that slipped past the loop's <= comparisons
    while (next_sample < sample_times.size()) {
        if (sample_times[next_sample] < t1 - 1e-9 * (t1 - t0))
            throw IntegrationError("ode sample time was not reached", t);
        sol.samples.col(static_cast<Eigen::Index>(next_sample)) = y;
        ++next_sample;
    }

    sol.t_end = t;
    sol.y_end = std::move(y);
    return sol;
}

}  // namespace qoct
