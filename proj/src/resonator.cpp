#include "qoct/resonator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"
#include "qoct/io.hpp"

namespace qoct {

void ResonatorModel::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0) || !std::isfinite(v))
            throw ValidationError(std::string("resonator model: ") + name + " must be positive");
    };
    positive(R0, "R0");
    positive(L0, "L0");
    positive(C_m, "C_m");
    positive(C_t, "C_t");
    positive(R_L, "R_L");
    positive(omega_r, "omega_r");
    positive(kappa, "kappa");
    positive(eta, "eta");
    if (!(alpha_L >= 0) || !(alpha_R >= 0))
        throw ValidationError("resonator model: nonlinearity coefficients must be >= 0");
    if (!(tau_r >= 0) || !std::isfinite(tau_r))
        throw ValidationError("resonator model: tau_r must be >= 0");
}

ResonatorModel load_resonator_model(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad resonator model json (" + path + "): " + e.what());
    }
    auto get = [&](const char* key) {
        if (!j.contains(key) || !j.at(key).is_number())
            throw IoError(std::string("resonator model field missing or non-numeric: ") + key);
        return j.at(key).get<double>();
    };
    ResonatorModel m;
    m.R0 = get("R0");
    m.L0 = get("L0");
    m.alpha_L = get("alpha_L");
    m.alpha_R = get("alpha_R");
    m.eta = get("eta");
    m.C_m = get("C_m");
    m.C_t = get("C_t");
    m.R_L = get("R_L");
    m.omega_r = get("omega_r");
    m.kappa = get("kappa");
    m.tau_r = get("tau_r");
    m.validate();
    return m;
}

Eigen::Matrix3cd circuit_matrix(const ResonatorModel& m, const Eigen::Vector3cd& x) {
    const double u = std::norm(x[0]);
    const double L = m.inductance(u);
    const double R = m.resistance(u);
    Eigen::Matrix3cd a;
    a << cplx(-R / L), cplx(0), cplx(1.0 / L),
        cplx(0), cplx(-1.0 / (m.R_L * m.C_m)), cplx(1.0 / (m.R_L * m.C_m)),
        cplx(-1.0 / m.C_t), cplx(-1.0 / (m.R_L * m.C_t)), cplx(1.0 / (m.R_L * m.C_t));
    a -= cplx(0, m.omega_r) * Eigen::Matrix3cd::Identity();
    return a;
}

Eigen::Matrix3cd circuit_matrix_zero(const ResonatorModel& m) {
    return circuit_matrix(m, Eigen::Vector3cd::Zero());
}

Eigen::Vector3cd circuit_input(const ResonatorModel& m) {
    return {cplx(0), cplx(1.0 / (m.R_L * m.C_m)), cplx(1.0 / (m.R_L * m.C_t))};
}

void PiecewiseForcing::append(double width, cplx amp) {
    if (!(width > 0)) throw ValidationError("forcing segment width must be positive");
    edges.push_back(edges.back() + width);
    amps.push_back(amp);
}

PiecewiseForcing PiecewiseForcing::from_pulse(const Pulse& p, double tau_r) {
    p.validate();
    if (p.channels() != 2)
        throw DimensionError("circuit forcing needs a two-channel pulse (real, imag)");
    PiecewiseForcing f;
    f.tau_r = tau_r;
    f.edges.reserve(p.steps() + 1);
    f.amps.reserve(p.steps());
    for (int n = 0; n < p.steps(); ++n) f.append(p.dt, cplx(p.values(n, 0), p.values(n, 1)));
    return f;
}

cplx PiecewiseForcing::eval(double t) const {
    if (amps.empty() || t < edges.front()) return {};
    if (t >= edges.back()) {
        if (tau_r <= 0) return {};
        return amps.back() * std::exp(-(t - edges.back()) / tau_r);
    }
    const auto it = std::upper_bound(edges.begin(), edges.end(), t);
    const int seg = static_cast<int>(it - edges.begin()) - 1;
    const cplx cur = amps[static_cast<std::size_t>(seg)];
    if (tau_r <= 0) return cur;
    const cplx prev = seg > 0 ? amps[static_cast<std::size_t>(seg - 1)] : cplx{};
    return prev + (cur - prev) * (1.0 - std::exp(-(t - edges[static_cast<std::size_t>(seg)]) / tau_r));
}

double PiecewiseForcing::weight(int seg, double t) const {
    if (seg < 0 || seg >= segments()) throw DimensionError("forcing segment index out of range");
    const double lo = edges[static_cast<std::size_t>(seg)];
    const double hi = edges[static_cast<std::size_t>(seg) + 1];
    if (t < lo) return 0.0;
    if (tau_r <= 0) return t < hi ? 1.0 : 0.0;
    if (t < hi) return 1.0 - std::exp(-(t - lo) / tau_r);
    // the target of segment seg is the base the next segment relaxes away from
    const bool last = seg + 1 == segments();
    if (!last && t >= edges[static_cast<std::size_t>(seg) + 2]) return 0.0;
    return std::exp(-(t - hi) / tau_r);
}

OdeSolution solve_circuit(const PiecewiseForcing& forcing, const ResonatorModel& m, double t0,
                          double t1, const Eigen::Vector3cd& x0,
                          const std::vector<double>& sample_times,
                          const CircuitSolveOptions& opt) {
    m.validate();
    const double c_m = 1.0 / (m.R_L * m.C_m);
    const double c_t = 1.0 / (m.R_L * m.C_t);
    const double inv_ct = 1.0 / m.C_t;
    const cplx iwr(0, m.omega_r);
    const double L0 = m.L0, R0 = m.R0, aL = m.alpha_L, aR = m.alpha_R, half_eta = 0.5 * m.eta;

    OdeRhs rhs = [&, c_m, c_t, inv_ct, iwr](double t, const Eigen::VectorXcd& x,
                                            Eigen::VectorXcd& dx) {
        const double u = std::norm(x[0]);
        const double L = L0 * (1.0 + aL * u);
        const double R = R0 * (1.0 + aR * std::pow(u, half_eta));
        const cplx a = forcing.eval(t);
        dx[0] = -(R / L) * x[0] + (1.0 / L) * x[2] - iwr * x[0];
        dx[1] = c_m * (x[2] - x[1]) - iwr * x[1] + a * c_m;
        dx[2] = -inv_ct * x[0] - c_t * x[1] + c_t * x[2] - iwr * x[2] + a * c_t;
    };

    OdeOptions oo;
    oo.rtol = opt.rtol;
    oo.atol_per_component =
        (Eigen::VectorXd(3) << opt.atol_current, opt.atol_voltage, opt.atol_voltage).finished();
    oo.store_dense = opt.store_dense;
    oo.max_steps = opt.max_steps;

    std::vector<double> breaks;
    for (double e : forcing.edges)
        if (e > t0 && e < t1) breaks.push_back(e);

    return solve_ode(rhs, t0, t1, x0, breaks, sample_times, oo);
}

SteadyState steady_state_response(double volts, const ResonatorModel& m, double rel_tol,
                                  double t_max) {
    m.validate();
    if (!(volts > 0)) throw ValidationError("steady state drive voltage must be positive");
    if (!(rel_tol > 0)) throw ValidationError("steady state tolerance must be positive");

    const Eigen::Matrix3cd a0 = circuit_matrix_zero(m);
    const Eigen::Vector3cd lam = Eigen::ComplexEigenSolver<Eigen::Matrix3cd>(a0).eigenvalues();
    double gamma_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) gamma_min = std::min(gamma_min, -lam[i].real());
    if (!(gamma_min > 0))
        throw ConvergenceError("circuit is linearly unstable; no steady state exists");

    const double period = 2 * M_PI / m.omega_r;
    if (t_max <= 0) t_max = std::max(60.0 / gamma_min, 20.0 * period);

    PiecewiseForcing f;
    f.tau_r = m.tau_r;
    f.append(t_max + period, cplx(volts, 0));

    CircuitSolveOptions opt;
    Eigen::Vector3cd x = Eigen::Vector3cd::Zero();
    double t = 0;
    double prev_mag = 0;
    double last_change = std::numeric_limits<double>::infinity();
    int chunk = 0;
    int quiet = 0;
    while (t < t_max) {
        OdeSolution s = solve_circuit(f, m, t, t + period, x, {}, opt);
        x = s.y_end;
        t += period;
        ++chunk;
        const double mag = std::abs(x[0]);
        last_change = std::abs(mag - prev_mag) / std::max(mag, 1e-300);
        // a slowly precessing transient can stall |I| for a single period, so
        // demand several consecutive quiet periods before declaring steady
        quiet = last_change < rel_tol ? quiet + 1 : 0;
        if (chunk > 3 && quiet >= 5) return {m.kappa * mag / (2 * M_PI), mag, t};
        prev_mag = mag;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "steady state not reached: t=%.3e s, |I|=%.6e A, last relative change %.3e",
                  t, prev_mag, last_change);
    throw ConvergenceError(buf);
}

ResonatorOperator::ResonatorOperator(ResonatorModel model, ResonatorOperatorOptions opt)
    : model_(std::move(model)), opt_(std::move(opt)) {
    model_.validate();
    if (opt_.steps < 1) throw DimensionError("resonator operator needs at least one input step");
    if (!(opt_.dt > 0) || !(opt_.delta_t > 0))
        throw ValidationError("resonator operator needs positive step widths");
    if (!(opt_.tail >= 0)) throw ValidationError("tail must be >= 0");
    if (!(opt_.probe_amplitude > 0)) throw ValidationError("probe amplitude must be positive");
    if (opt_.threads < 1) throw ValidationError("thread count must be >= 1");
    if (model_.tau_r >= opt_.dt / 10)
        throw ValidationError("forcing rise time must be under a tenth of the step width");
    double total = opt_.steps * opt_.dt + opt_.tail;
    if (opt_.ringdown) {
        opt_.ringdown->validate();
        for (double w : opt_.ringdown->widths) total += w;
    }
    out_steps_ = static_cast<int>(std::ceil(total / opt_.delta_t - 1e-9));
    if (out_steps_ < 1) throw DimensionError("resonator operator output is empty");
    // the sample grid covers the physical span; keep the two aligned
    total_time_ = std::max(total, out_steps_ * opt_.delta_t);
}

namespace {

struct RunOutcome {
    PiecewiseForcing forcing;
    std::vector<cplx> comp;
    Eigen::Vector3cd pulse_end = Eigen::Vector3cd::Zero();
    Eigen::Vector3cd final_state = Eigen::Vector3cd::Zero();
    OdeSolution first, second;
    bool has_second = false;
    double split = 0;
    double peak = 0;
};

}  // namespace

struct ResonatorOperator::RunAccess {
    static RunOutcome run(const ResonatorOperator& op, const Pulse& p, bool dense,
                          const std::vector<double>& samples, bool with_ringdown,
                          const CircuitSolveOptions* solver = nullptr) {
        const double split = op.opt_.steps * op.opt_.dt;
        const double total = op.total_time_;

        RunOutcome o;
        o.split = split;
        o.forcing = PiecewiseForcing::from_pulse(p, op.model_.tau_r);

        std::vector<double> s1, s2;
        for (double t : samples) (t <= split ? s1 : s2).push_back(t);

        CircuitSolveOptions so = solver ? *solver : op.opt_.solver;
        so.store_dense = dense;
        o.first = solve_circuit(o.forcing, op.model_, 0.0, split, Eigen::Vector3cd::Zero(), s1, so);
        o.pulse_end = o.first.y_end;
        o.final_state = o.pulse_end;

        if (with_ringdown && op.opt_.ringdown) {
            RingdownResult rd = ringdown_steps(o.pulse_end, o.forcing.amps.back(),
                                               *op.opt_.ringdown, op.model_);
            for (std::size_t i = 0; i < rd.amplitudes.size(); ++i)
                o.forcing.append(op.opt_.ringdown->widths[i], rd.amplitudes[i]);
            o.comp = rd.amplitudes;
        }
        if (total > split * (1 + 1e-12) || !s2.empty()) {
            o.second = solve_circuit(o.forcing, op.model_, split, total, o.pulse_end, s2, so);
            o.final_state = o.second.y_end;
            o.has_second = true;
        }

        o.peak = std::max(std::abs(o.pulse_end[0]), std::abs(o.final_state[0]));
        for (Eigen::Index c = 0; c < o.first.samples.cols(); ++c)
            o.peak = std::max(o.peak, std::abs(o.first.samples(0, c)));
        for (Eigen::Index c = 0; c < o.second.samples.cols(); ++c)
            o.peak = std::max(o.peak, std::abs(o.second.samples(0, c)));

        op.solves_.fetch_add(1, std::memory_order_relaxed);
        return o;
    }
};

namespace {

std::vector<double> output_sample_times(int m_count, double delta_t) {
    std::vector<double> t(static_cast<std::size_t>(m_count));
    for (int m = 0; m < m_count; ++m) t[static_cast<std::size_t>(m)] = (m + 0.5) * delta_t;
    return t;
}

// q rows from the two solution spans, kappa Re / kappa Im of I_L
void fill_output(const RunOutcome& o, double kappa, Eigen::MatrixXd& q) {
    const Eigen::Index n1 = o.first.samples.cols();
    for (Eigen::Index c = 0; c < n1; ++c) {
        q(c, 0) = kappa * o.first.samples(0, c).real();
        q(c, 1) = kappa * o.first.samples(0, c).imag();
    }
    for (Eigen::Index c = 0; c < o.second.samples.cols(); ++c) {
        q(n1 + c, 0) = kappa * o.second.samples(0, c).real();
        q(n1 + c, 1) = kappa * o.second.samples(0, c).imag();
    }
}

}  // namespace

ResonatorOperator::Detail ResonatorOperator::distort_detailed(const Pulse& p) const {
    check_input(p);
    RunOutcome o = RunAccess::run(*this, p, false, output_sample_times(out_steps_, opt_.delta_t),
                                  true);
    Detail d;
    d.output.values.resize(out_steps_, 2);
    fill_output(o, model_.kappa, d.output.values);
    d.output.delta_t = opt_.delta_t;
    d.output.unit = Unit::rad_per_s;
    d.compensation = std::move(o.comp);
    d.end_state = o.final_state;
    d.peak_current = o.peak;
    d.terminal_current = std::abs(o.final_state[0]);
    return d;
}

DistortedPulse ResonatorOperator::apply(const Pulse& p) const {
    return distort_detailed(p).output;
}

DistortionJacobian ResonatorOperator::jacobian_zero_order(const Pulse&) const {
    const int N = opt_.steps, K = 2, M = out_steps_, L = 2;
    DistortionJacobian j;
    j.resize(M, L, N, K);
    j.kind = JacobianKind::zero_order;

    const double eps = opt_.probe_amplitude;
    const std::vector<double> times = output_sample_times(M, opt_.delta_t);
    std::vector<double> peaks(static_cast<std::size_t>(N) * K, 0.0);

    // the probe response scales with eps, so the error floor must too
    CircuitSolveOptions probe_solver = opt_.solver;
    probe_solver.atol_current *= eps;
    probe_solver.atol_voltage *= eps;

    parallel_for(N * K, opt_.threads, [&](int col) {
        const int n = col / K, k = col % K;
        Pulse probe;
        probe.values = Eigen::MatrixXd::Zero(N, K);
        probe.values(n, k) = eps;
        probe.dt = opt_.dt;
        probe.unit = Unit::volts;
        RunOutcome o = RunAccess::run(*this, probe, false, times, false, &probe_solver);
        Eigen::MatrixXd q(M, 2);
        fill_output(o, model_.kappa, q);
        for (int m = 0; m < M; ++m) {
            j.at(m, 0, n, k) = q(m, 0) / eps;
            j.at(m, 1, n, k) = q(m, 1) / eps;
        }
        peaks[static_cast<std::size_t>(col)] = o.peak;
    });

    const double pk = *std::max_element(peaks.begin(), peaks.end());
    const double metric = std::max(model_.alpha_L * pk * pk,
                                   model_.alpha_R * std::pow(pk, model_.eta));
    if (metric > 1e-3)
        std::fprintf(stderr,
                     "note: zero-order probe amplitude %.3g V leaves the linear regime "
                     "(component shift %.2e)\n",
                     eps, metric);
    return j;
}

DistortionJacobian ResonatorOperator::jacobian_exact(const Pulse& p) const {
    const int N = opt_.steps, K = 2, M = out_steps_, L = 2;
    DistortionJacobian j;
    j.resize(M, L, N, K);
    j.kind = JacobianKind::exact;

    RunOutcome base = RunAccess::run(*this, p, true, {}, true);
    const double split = base.split;
    const double total = total_time_;
    const std::vector<double> times = output_sample_times(M, opt_.delta_t);

    const double c_m = 1.0 / (model_.R_L * model_.C_m);
    const double c_t = 1.0 / (model_.R_L * model_.C_t);
    const double inv_ct = 1.0 / model_.C_t;
    const cplx iwr(0, model_.omega_r);
    const double L0 = model_.L0, R0 = model_.R0, aL = model_.alpha_L, aR = model_.alpha_R;
    const double eta = model_.eta;
    const bool nonlinear = aL > 0 || aR > 0;

    auto x_at = [&](double t) -> Eigen::Vector3cd {
        if (t <= split || !base.has_second) return base.first.dense.eval(t);
        return base.second.dense.eval(t);
    };

    parallel_for(N * K, opt_.threads, [&](int col) {
        const int n = col / K, k = col % K;
        const double t_start = n * opt_.dt;
        const cplx drive = k == 0 ? cplx(1, 0) : cplx(0, 1);

        std::vector<double> sub;
        Eigen::Index first_row = 0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (times[i] > t_start)
                sub.push_back(times[i]);
            else
                ++first_row;
        }
        if (sub.empty()) return;

        OdeRhs rhs = [&](double t, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) {
            const Eigen::Vector3cd x = x_at(t);
            const double u = std::norm(x[0]);
            const double Lv = L0 * (1.0 + aL * u);
            const double Rv = R0 * (1.0 + aR * std::pow(u, 0.5 * eta));
            dy[0] = -(Rv / Lv) * y[0] + (1.0 / Lv) * y[2] - iwr * y[0];
            dy[1] = c_m * (y[2] - y[1]) - iwr * y[1];
            dy[2] = -inv_ct * y[0] - c_t * y[1] + c_t * y[2] - iwr * y[2];
            if (nonlinear) {
                const double Lp = L0 * aL;
                const double ex = 0.5 * eta - 1.0;
                const double Rp = R0 * aR * 0.5 * eta *
                                  (ex == 0 ? 1.0 : (u > 0 ? std::pow(u, ex) : 0.0));
                const cplx coef =
                    (-(Rp * Lv - Rv * Lp) / (Lv * Lv)) * x[0] + (-Lp / (Lv * Lv)) * x[2];
                dy[0] += coef * (2.0 * std::real(std::conj(x[0]) * y[0]));
            }
            const double wv = base.forcing.weight(n, t);
            if (wv != 0.0) {
                dy[1] += wv * drive * c_m;
                dy[2] += wv * drive * c_t;
            }
        };

        OdeOptions oo;
        oo.rtol = opt_.solver.rtol;
        oo.atol_per_component = (Eigen::VectorXd(3) << opt_.solver.atol_current,
                                 opt_.solver.atol_voltage, opt_.solver.atol_voltage)
                                    .finished();
        oo.max_steps = opt_.solver.max_steps;
        std::vector<double> breaks;
        for (double e : base.forcing.edges)
            if (e > t_start && e < total) breaks.push_back(e);

        OdeSolution s = solve_ode(rhs, t_start, total, Eigen::Vector3cd::Zero(), breaks, sub, oo);
        solves_.fetch_add(1, std::memory_order_relaxed);

        for (Eigen::Index c = 0; c < s.samples.cols(); ++c) {
            const int m = static_cast<int>(first_row + c);
            j.at(m, 0, n, k) = model_.kappa * s.samples(0, c).real();
            j.at(m, 1, n, k) = model_.kappa * s.samples(0, c).imag();
        }
    });

    return j;
}

DistortionJacobian ResonatorOperator::jacobian(const Pulse& p, JacobianKind kind) const {
    check_input(p);
    return kind == JacobianKind::zero_order ? jacobian_zero_order(p) : jacobian_exact(p);
}

}  // namespace qoct
