#include "qoct/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "qoct/common.hpp"

namespace qoct {

SampleSet SampleSet::nominal() {
    SampleSet s;
    s.samples.push_back(HypothesisSample{});
    return s;
}

void SampleSet::validate() const {
    if (samples.empty()) throw ValidationError("sample set is empty");
    double sum = 0;
    for (const auto& s : samples) {
        if (!(s.weight >= 0))
            throw ValidationError("sample weights must be non-negative");
        sum += s.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("sample weights must sum to 1");
}

void OptimizerConfig::validate() const {
    if (!(target > 0) || target > 1)
        throw ValidationError("target fidelity must lie in (0, 1]");
    if (max_iterations < 0)
        throw ValidationError("max iterations must be non-negative");
    if (line_search_evals < 3)
        throw ValidationError("line search needs at least 3 evaluations");
    if (!(bracket_growth > 1))
        throw ValidationError("bracket growth must exceed 1");
    if (!(bound > 0)) throw ValidationError("amplitude bound must be positive");
    if (!(init_scale >= 0) || init_scale > 1)
        throw ValidationError("initial-guess scale must lie in [0, 1]");
    if (jacobian_refresh < 1)
        throw ValidationError("jacobian refresh period must be at least 1");
    if (!(stall_step > 0)) throw ValidationError("stall step must be positive");
    if (stall_iterations < 1)
        throw ValidationError("stall iteration count must be at least 1");
    if (penalty_weight < 0)
        throw ValidationError("penalty weight must be non-negative");
    if (penalty_start < 0)
        throw ValidationError("penalty start sample must be non-negative");
}

void LandscapeConfig::validate() const {
    if (bounds.empty()) throw ValidationError("no voltage bounds given");
    for (double b : bounds)
        if (!(b > 0)) throw ValidationError("voltage bounds must be positive");
    if (trials < 1) throw ValidationError("need at least one trial per bound");
    if (steps < 1) throw ValidationError("pulse needs at least one step");
    if (oversample < 1) throw ValidationError("oversample factor must be >= 1");
    if (!(target > 0) || target > 1)
        throw ValidationError("target fidelity must lie in (0, 1]");
    if (max_iterations < 1)
        throw ValidationError("max iterations must be at least 1");
    if (threads < 1) throw ValidationError("thread count must be at least 1");
}

const char* run_status_name(RunStatus s) {
    switch (s) {
        case RunStatus::reached_target: return "reached-target";
        case RunStatus::stalled: return "stalled";
        case RunStatus::max_iterations: return "max-iterations";
        case RunStatus::aborted: return "aborted";
    }
    return "unknown";
}

namespace {

const DistortionOperator* effective(const HypothesisSample& s,
                                    const DistortionOperator& fallback) {
    return s.distortion ? s.distortion.get() : &fallback;
}

// Counts distortion calls. When every sample goes through one shared
// resonator operator the circuit-solve counter is authoritative; otherwise
// each operator invocation counts as one call.
struct CallMeter {
    const ResonatorOperator* rop = nullptr;
    long base = 0;
    long manual = 0;

    long read() const { return rop ? rop->solve_count() - base : manual; }
    void bump() { ++manual; }
};

}  // namespace

double average_utility(const Pulse& p, const ControlProblem& prob,
                       const DistortionOperator& g, const SampleSet& samples,
                       std::vector<double>* per_sample) {
    samples.validate();
    p.validate();
    if (per_sample) {
        per_sample->clear();
        per_sample->reserve(samples.size());
    }
    double phi = 0;
    for (const auto& s : samples.samples) {
        const DistortionOperator* gi = effective(s, g);
        ControlProblem pi = prob.with_hypothesis(s.delta_omega, s.kappa_err);
        double f = fidelity(pi, gi->apply(p));
        if (per_sample) per_sample->push_back(f);
        phi += s.weight * f;
    }
    return phi;
}

Eigen::MatrixXd average_gradient(const Pulse& p, const ControlProblem& prob,
                                 const DistortionOperator& g,
                                 const SampleSet& samples,
                                 const std::vector<DistortionJacobian>& jacobians,
                                 double* utility) {
    samples.validate();
    p.validate();
    if (jacobians.size() != samples.size())
        throw DimensionError("need exactly one jacobian per sample");
    Eigen::MatrixXd total =
        Eigen::MatrixXd::Zero(g.input_steps(), g.input_channels());
    double phi = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples.samples[i];
        if (jacobians[i].N != total.rows() || jacobians[i].K != total.cols())
            throw DimensionError("jacobian input shape differs from the pulse");
        const DistortionOperator* gi = effective(s, g);
        ControlProblem pi = prob.with_hypothesis(s.delta_omega, s.kappa_err);
        DistortedPulse q = gi->apply(p);
        Eigen::MatrixXd gq;
        double f = fidelity_and_gradient(pi, q, &gq);
        total += s.weight * jacobians[i].contract_gradient(gq);
        phi += s.weight * f;
    }
    if (utility) *utility = phi;
    return total;
}

double ringdown_penalty(const DistortedPulse& q, int start, double scale,
                        Eigen::MatrixXd* gradient) {
    q.validate();
    const int m = q.steps();
    if (start < 0 || start > m)
        throw ValidationError("penalty start sample out of range");
    if (scale < 0) throw ValidationError("penalty scale must be non-negative");
    const auto tail = q.values.bottomRows(m - start);
    if (gradient) {
        gradient->setZero(m, q.channels());
        gradient->bottomRows(m - start) = 2.0 * scale * tail;
    }
    return scale * tail.squaredNorm();
}

double conjugate_beta(const Eigen::MatrixXd& d, const Eigen::MatrixXd& d_prev) {
    if (d_prev.size() == 0) return 0;
    if (d.rows() != d_prev.rows() || d.cols() != d_prev.cols())
        throw DimensionError("gradient shapes differ");
    double den = d_prev.squaredNorm();
    if (!(den > 0)) return 0;
    return std::max(0.0, d.cwiseProduct(d - d_prev).sum() / den);
}

RunRecord grape_optimize(const ControlProblem& prob, const DistortionOperator& g,
                         const OptimizerConfig& cfg, const SampleSet& samples) {
    cfg.validate();
    samples.validate();
    prob.validate();

    const int n = g.input_steps();
    const int k = g.input_channels();

    struct Ctx {
        ControlProblem prob;
        const DistortionOperator* g;
        double w;
        DistortionJacobian jac;
    };
    std::vector<Ctx> ctx;
    ctx.reserve(samples.size());
    for (const auto& s : samples.samples) {
        const DistortionOperator* gi = effective(s, g);
        if (gi->input_steps() != n || gi->input_channels() != k)
            throw DimensionError(
                "sample distortion input shape differs from the default operator");
        ctx.push_back({prob.with_hypothesis(s.delta_omega, s.kappa_err), gi,
                       s.weight, {}});
    }

    CallMeter meter;
    meter.rop = dynamic_cast<const ResonatorOperator*>(&g);
    for (const auto& c : ctx)
        if (c.g != &g) meter.rop = nullptr;
    if (meter.rop) meter.base = meter.rop->solve_count();

    RunRecord rec;
    rec.seed = cfg.seed;

    Pulse p;
    p.dt = g.input_dt();
    p.unit = g.input_unit();
    p.values.resize(n, k);
    Rng rng(cfg.seed);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            p.values(i, j) = rng.uniform_symmetric(cfg.init_scale * cfg.bound);

    const JacobianKind kind = cfg.jacobian == JacobianMode::zero_order
                                  ? JacobianKind::zero_order
                                  : JacobianKind::exact;
    auto build_jacobians = [&](const Pulse& at) {
        long before = meter.read();
        for (auto& c : ctx) {
            c.jac = c.g->jacobian(at, kind);
            meter.bump();
        }
        rec.calls_jacobian += meter.read() - before;
    };

    // returns (fidelity average, search objective); they differ only when the
    // tail penalty is on
    auto eval_phi = [&](const Pulse& pl) {
        double phi = 0;
        double pen = 0;
        for (const auto& c : ctx) {
            DistortedPulse q = c.g->apply(pl);
            meter.bump();
            phi += c.w * fidelity(c.prob, q);
            if (cfg.penalty_weight > 0)
                pen += c.w *
                       ringdown_penalty(q, cfg.penalty_start, cfg.penalty_weight);
        }
        return std::pair<double, double>(phi, phi - pen);
    };

    auto eval_grad = [&](const Pulse& pl, double* phi_out, double* score_out) {
        Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, k);
        double phi = 0;
        double pen = 0;
        for (auto& c : ctx) {
            DistortedPulse q = c.g->apply(pl);
            meter.bump();
            Eigen::MatrixXd gq;
            double f = fidelity_and_gradient(c.prob, q, &gq);
            if (cfg.penalty_weight > 0) {
                Eigen::MatrixXd gpen;
                pen += c.w *
                       ringdown_penalty(q, cfg.penalty_start, cfg.penalty_weight,
                                        &gpen);
                gq -= gpen;
            }
            total += c.w * c.jac.contract_gradient(gq);
            phi += c.w * f;
        }
        *phi_out = phi;
        *score_out = phi - pen;
        return total;
    };

    auto clipped = [&](const Eigen::MatrixXd& v) {
        return v.cwiseMax(-cfg.bound).cwiseMin(cfg.bound).eval();
    };

    build_jacobians(p);

    auto [phi0, score0] = eval_phi(p);
    rec.trace.push_back({0, phi0, 0.0, meter.read()});
    double phi_cur = phi0;
    double score_cur = score0;

    auto finalize = [&](RunStatus st, std::string msg = {}) {
        rec.status = st;
        rec.message = std::move(msg);
        rec.pulse = p;
        rec.utility = phi_cur;
        rec.calls_total = meter.read();
        return rec;
    };

    if (!std::isfinite(phi0))
        return finalize(RunStatus::aborted,
                        "non-finite utility at the initial pulse");
    if (phi0 >= cfg.target) return finalize(RunStatus::reached_target);

    struct Best {
        double alpha;
        double score;
        double phi;
    };
    std::string search_abort;

    // golden-section search inside an expanding bracket; spends at most
    // cfg.line_search_evals utility evaluations and returns the best point seen
    auto line_search = [&](const Eigen::MatrixXd& s, double f0,
                           double phi_f0) -> Best {
        Best best{0.0, f0, phi_f0};
        int evals = 0;
        const int budget = cfg.line_search_evals;
        const double smax = s.cwiseAbs().maxCoeff();
        const double cap = 4.0 * cfg.bound / smax;  // box fully saturated

        auto probe = [&](double a) {
            Pulse trial = p;
            trial.values = clipped(p.values + a * s);
            auto [ph, sc] = eval_phi(trial);
            ++evals;
            if (!std::isfinite(sc)) {
                search_abort = "non-finite utility in line search";
                return sc;
            }
            if (sc > best.score) best = {a, sc, ph};
            return sc;
        };

        double a1 = cfg.bound / (10.0 * smax);
        double f1 = probe(a1);
        if (!search_abort.empty()) return best;

        double lo = 0;
        double hi = a1;
        if (f1 > f0) {
            double ca = a1;
            double cf = f1;
            double pa = 0;
            bool bracketed = false;
            while (evals < budget && ca < cap) {
                double na = std::min(ca * cfg.bracket_growth, cap);
                double nf = probe(na);
                if (!search_abort.empty()) return best;
                if (nf <= cf) {
                    lo = pa;
                    hi = na;
                    bracketed = true;
                    break;
                }
                pa = ca;
                ca = na;
                cf = nf;
            }
            if (!bracketed) return best;  // still climbing when budget ran out
        }

        const double r = 0.6180339887498949;
        if (evals >= budget) return best;
        double xa = hi - r * (hi - lo);
        double xb = lo + r * (hi - lo);
        double fa = probe(xa);
        if (!search_abort.empty() || evals >= budget) return best;
        double fb = probe(xb);
        if (!search_abort.empty()) return best;
        while (evals < budget) {
            if (fa < fb) {
                lo = xa;
                xa = xb;
                fa = fb;
                xb = lo + r * (hi - lo);
                fb = probe(xb);
            } else {
                hi = xb;
                xb = xa;
                fb = fa;
                xa = hi - r * (hi - lo);
                fa = probe(xa);
            }
            if (!search_abort.empty()) return best;
        }
        return best;
    };

    Eigen::MatrixXd d_prev;
    int stall = 0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        bool refresh = cfg.jacobian == JacobianMode::exact ||
                       (cfg.jacobian == JacobianMode::exact_every_k &&
                        (it - 1) % cfg.jacobian_refresh == 0);
        if (it > 1 && refresh) build_jacobians(p);

        double phi_at = 0;
        double score_at = 0;
        Eigen::MatrixXd d = eval_grad(p, &phi_at, &score_at);
        if (!d.allFinite() || !std::isfinite(score_at))
            return finalize(RunStatus::aborted,
                            "non-finite gradient at iteration " +
                                std::to_string(it));
        phi_cur = phi_at;
        score_cur = score_at;

        double beta = conjugate_beta(d, d_prev);
        Eigen::MatrixXd s =
            d_prev.size() > 0 ? Eigen::MatrixXd(d + beta * d_prev) : d;
        d_prev = d;

        double step = 0;
        double smax = s.cwiseAbs().maxCoeff();
        if (smax > 0 && std::isfinite(smax)) {
            Best b = line_search(s, score_cur, phi_cur);
            if (!search_abort.empty())
                return finalize(RunStatus::aborted,
                                search_abort + " at iteration " +
                                    std::to_string(it));
            if (b.alpha > 0 && b.score >= score_cur - 1e-12) {
                Eigen::MatrixXd next = clipped(p.values + b.alpha * s);
                step = (next - p.values).cwiseAbs().maxCoeff();
                p.values = next;
                phi_cur = b.phi;
                score_cur = b.score;
            }
        }

        rec.trace.push_back({it, phi_cur, step, meter.read()});
        if (phi_cur >= cfg.target) return finalize(RunStatus::reached_target);
        if (step < cfg.stall_step * cfg.bound) {
            if (++stall >= cfg.stall_iterations)
                return finalize(RunStatus::stalled);
        } else {
            stall = 0;
        }
    }
    return finalize(RunStatus::max_iterations);
}

std::vector<ScanPoint> robustness_scan(const Pulse& pulse,
                                       const DistortionFamily& make_distortion,
                                       const ProblemFamily& make_problem,
                                       const std::vector<double>& grid) {
    if (!make_distortion || !make_problem)
        throw ValidationError("scan needs both a distortion and a problem family");
    pulse.validate();
    std::vector<ScanPoint> out;
    out.reserve(grid.size());
    for (double v : grid) {
        std::shared_ptr<const DistortionOperator> g = make_distortion(v);
        if (!g) throw ValidationError("distortion family returned null");
        ControlProblem pb = make_problem(v);
        out.push_back({v, fidelity(pb, g->apply(pulse))});
    }
    return out;
}

double percentile(const std::vector<long>& sorted, double q) {
    if (sorted.empty()) return 0;
    double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(pos);
    auto hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return (1.0 - frac) * static_cast<double>(sorted[lo]) +
           frac * static_cast<double>(sorted[hi]);
}

LandscapeResult landscape_study(const ResonatorModel& model,
                                const ControlProblem& prob,
                                const LandscapeConfig& cfg) {
    cfg.validate();
    model.validate();
    prob.validate();

    LandscapeResult out;
    for (std::size_t bi = 0; bi < cfg.bounds.size(); ++bi) {
        const double bound = cfg.bounds[bi];
        SteadyState ss = steady_state_response(bound, model);
        const double pulse_time = 0.25 / ss.f_ss_hz;

        ResonatorOperatorOptions ro;
        ro.steps = cfg.steps;
        ro.dt = pulse_time / cfg.steps;
        ro.delta_t = ro.dt / cfg.oversample;
        ro.tail = 0;
        RingdownConfig rd;
        rd.widths = {pulse_time / 2, pulse_time / 4, pulse_time / 8};
        ro.ringdown = rd;

        BoundSummary bs;
        bs.bound = bound;
        bs.f_ss_hz = ss.f_ss_hz;
        bs.pulse_time = pulse_time;
        bs.trials = cfg.trials;

        std::vector<RunRecord> recs(cfg.trials);
        std::vector<long> solves(cfg.trials, 0);
        parallel_for(cfg.trials, cfg.threads, [&](int t) {
            ResonatorOperator op(model, ro);
            OptimizerConfig oc;
            oc.target = cfg.target;
            oc.max_iterations = cfg.max_iterations;
            oc.bound = bound;
            oc.jacobian = cfg.jacobian;
            oc.seed = Rng::substream(cfg.seed, bi * cfg.trials + t);
            recs[t] = grape_optimize(prob, op, oc);
            solves[t] = op.solve_count();
        });

        for (int t = 0; t < cfg.trials; ++t) {
            bs.solver_calls += solves[t];
            if (recs[t].status == RunStatus::reached_target)
                bs.success_calls.push_back(recs[t].calls_ascent());
            else
                ++bs.failures;
        }
        std::sort(bs.success_calls.begin(), bs.success_calls.end());
        bs.failure_fraction =
            static_cast<double>(bs.failures) / static_cast<double>(cfg.trials);
        bs.calls_q16 = percentile(bs.success_calls, 0.16);
        bs.calls_q50 = percentile(bs.success_calls, 0.50);
        bs.calls_q84 = percentile(bs.success_calls, 0.84);
        out.solver_calls += bs.solver_calls;
        out.bounds.push_back(std::move(bs));
    }
    return out;
}

}  // namespace qoct
