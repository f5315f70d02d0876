#include "qoct/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "qoct/distortion.hpp"
#include "qoct/io.hpp"
#include "qoct/quantum.hpp"

namespace qoct {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ValidationError("config field '" + where + "': " + what);
}

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) bad(where, "expected an object");
}

// reject unknown keys so typos fail loudly instead of silently using defaults
void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) bad(where + "." + it.key(), "unknown key");
    }
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

double get_num(const json& j, const std::string& where) {
    if (!j.is_number()) bad(where, "expected a number");
    return j.get<double>();
}

double get_num(const json& obj, const std::string& where, const char* key, double fallback) {
    const json* f = find(obj, key);
    return f ? get_num(*f, where + "." + key) : fallback;
}

int get_int(const json& j, const std::string& where) {
    if (!j.is_number_integer()) bad(where, "expected an integer");
    return j.get<int>();
}

int get_int(const json& obj, const std::string& where, const char* key, int fallback) {
    const json* f = find(obj, key);
    return f ? get_int(*f, where + "." + key) : fallback;
}

std::string get_str(const json& j, const std::string& where) {
    if (!j.is_string()) bad(where, "expected a string");
    return j.get<std::string>();
}

std::vector<double> get_grid(const json& j, const std::string& where) {
    std::vector<double> g;
    if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i)
            g.push_back(get_num(j[i], where + "[" + std::to_string(i) + "]"));
    } else if (j.is_object()) {
        check_keys(j, where, {"from", "to", "points"});
        const double a = get_num(*find(j, "from"), where + ".from");
        const double b = get_num(*find(j, "to"), where + ".to");
        const int n = get_int(*find(j, "points"), where + ".points");
        if (n < 1) bad(where + ".points", "need at least one point");
        for (int i = 0; i < n; ++i)
            g.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
    } else {
        bad(where, "expected an array or {from, to, points}");
    }
    if (g.empty()) bad(where, "grid is empty");
    return g;
}

// matrix entries are numbers (real) or [re, im] pairs
Mat get_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) bad(where, "expected a non-empty array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = j[0].is_array() ? static_cast<int>(j[0].size()) : -1;
    if (cols < 1) bad(where, "rows must be arrays");
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
            bad(where, "ragged matrix");
        for (int c = 0; c < cols; ++c) {
            const json& e = j[r][c];
            const std::string ew = where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]";
            if (e.is_number()) {
                m(r, c) = cplx(e.get<double>(), 0);
            } else if (e.is_array() && e.size() == 2) {
                m(r, c) = cplx(get_num(e[0], ew), get_num(e[1], ew));
            } else {
                bad(ew, "expected a number or [re, im]");
            }
        }
    }
    return m;
}

Mat axis_operator(const std::string& axis, const std::string& where) {
    if (axis == "x") return pauli::X();
    if (axis == "y") return pauli::Y();
    if (axis == "z") return pauli::Z();
    bad(where, "axis must be x, y or z");
}

struct TargetSpec {
    std::string axis = "x";
    double angle = M_PI / 2;
    int qubit = 0;
};

TargetSpec get_target(const json& obj, const std::string& where) {
    TargetSpec t;
    const json* f = find(obj, "target");
    if (!f) return t;
    expect_object(*f, where + ".target");
    check_keys(*f, where + ".target", {"axis", "angle", "qubit"});
    if (const json* a = find(*f, "axis")) t.axis = get_str(*a, where + ".target.axis");
    t.angle = get_num(*f, where + ".target", "angle", t.angle);
    t.qubit = get_int(*f, where + ".target", "qubit", t.qubit);
    axis_operator(t.axis, where + ".target.axis");
    return t;
}

ControlProblem preset_qubit_xy(const TargetSpec& t) {
    ControlProblem p;
    p.H0 = Mat::Zero(2, 2);
    p.controls = {0.5 * pauli::X(), 0.5 * pauli::Y()};
    p.detuning = 0.5 * pauli::Z();
    p.U_target = unitary_exp(0.5 * axis_operator(t.axis, "problem.target.axis"), t.angle);
    return p;
}

ControlProblem preset_cnot_nmr(double w1, double w2, double coupling) {
    const Mat X1 = embed_qubit_op(pauli::X(), 0, 2), X2 = embed_qubit_op(pauli::X(), 1, 2);
    const Mat Y1 = embed_qubit_op(pauli::Y(), 0, 2), Y2 = embed_qubit_op(pauli::Y(), 1, 2);
    const Mat Z1 = embed_qubit_op(pauli::Z(), 0, 2), Z2 = embed_qubit_op(pauli::Z(), 1, 2);
    ControlProblem p;
    p.H0 = 0.5 * w1 * Z1 + 0.5 * w2 * Z2 +
           0.25 * coupling * (X1 * X2 + Y1 * Y2 + Z1 * Z2);
    p.controls = {X1 + X2, Y1 + Y2};
    p.U_target = Mat::Zero(4, 4);
    p.U_target(0, 0) = 1;
    p.U_target(1, 1) = 1;
    p.U_target(2, 3) = 1;
    p.U_target(3, 2) = 1;
    return p;
}

ControlProblem preset_crosstalk_chain(int n_qubits, double coupling, const TargetSpec& t) {
    ControlProblem p;
    const int d = 1 << n_qubits;
    p.H0 = Mat::Zero(d, d);
    for (int i = 0; i + 1 < n_qubits; ++i)
        p.H0 += coupling * embed_qubit_op(pauli::Z(), i, n_qubits) *
                embed_qubit_op(pauli::Z(), i + 1, n_qubits);
    for (int i = 0; i < n_qubits; ++i) {
        p.controls.push_back(embed_qubit_op(pauli::X(), i, n_qubits));
        p.controls.push_back(embed_qubit_op(pauli::Y(), i, n_qubits));
    }
    const Mat ax = axis_operator(t.axis, "problem.target.axis");
    p.U_target = unitary_exp(0.5 * embed_qubit_op(ax, t.qubit, n_qubits), t.angle);
    return p;
}

JacobianMode get_jacobian_mode(const std::string& s, const std::string& where) {
    if (s == "zero-order") return JacobianMode::zero_order;
    if (s == "exact") return JacobianMode::exact;
    if (s == "exact-every-k") return JacobianMode::exact_every_k;
    bad(where, "jacobian must be zero-order, exact or exact-every-k");
}

// output-sample count for a first-order rise: the full pulse plus
// ceil(10 tau / dt) trailing samples of settled decay
int risetime_output_steps(int N, int substeps, double tau, double dt) {
    return substeps * N + static_cast<int>(std::ceil(10.0 * tau / dt - 1e-9));
}

std::string resolve_path(const std::string& p, const fs::path& config_dir) {
    fs::path fp(p);
    if (fp.is_absolute()) return p;
    return (config_dir / fp).string();
}

struct DistortionSpec {
    std::string kind;
    int substeps = 1;
    std::vector<double> taus;
    Eigen::MatrixXd chi;
    std::optional<ResonatorModel> model;
    ResonatorOperatorOptions ropt;
    int output_steps = -1;
};

DistortionSpec parse_distortion(const json& obj, const fs::path& config_dir) {
    const std::string where = "distortion";
    expect_object(obj, where);
    DistortionSpec s;
    const json* kindf = find(obj, "kind");
    if (!kindf) bad(where + ".kind", "missing");
    s.kind = get_str(*kindf, where + ".kind");
    if (s.kind == "identity") {
        check_keys(obj, where, {"kind", "substeps"});
        s.substeps = get_int(obj, where, "substeps", 1);
    } else if (s.kind == "risetime") {
        check_keys(obj, where, {"kind", "taus", "tau", "substeps", "output_steps"});
        s.substeps = get_int(obj, where, "substeps", 2);
        if (const json* tf = find(obj, "taus")) {
            for (std::size_t i = 0; i < tf->size(); ++i)
                s.taus.push_back(get_num((*tf)[i], where + ".taus"));
        } else if (const json* tf1 = find(obj, "tau")) {
            s.taus = {get_num(*tf1, where + ".tau")};
        } else {
            bad(where + ".taus", "missing");
        }
        for (double t : s.taus)
            if (!(t > 0)) bad(where + ".taus", "rise times must be positive");
        s.output_steps = get_int(obj, where, "output_steps", -1);
    } else if (s.kind == "crosstalk") {
        check_keys(obj, where, {"kind", "chi_csv", "chi"});
        if (const json* cf = find(obj, "chi_csv")) {
            s.chi = load_crosstalk_csv(resolve_path(get_str(*cf, where + ".chi_csv"), config_dir));
        } else if (const json* ci = find(obj, "chi")) {
            Mat c = get_matrix(*ci, where + ".chi");
            if (c.imag().norm() != 0) bad(where + ".chi", "crosstalk tensor must be real");
            s.chi = c.real();
        } else {
            bad(where + ".chi_csv", "missing");
        }
    } else if (s.kind == "resonator") {
        check_keys(obj, where,
                   {"kind", "model", "substeps", "tail", "ringdown", "probe_amplitude", "threads"});
        const json* mf = find(obj, "model");
        if (!mf) bad(where + ".model", "missing");
        s.model = load_resonator_model(resolve_path(get_str(*mf, where + ".model"), config_dir));
        s.substeps = get_int(obj, where, "substeps", 8);
        s.ropt.tail = get_num(obj, where, "tail", 0.0);
        s.ropt.probe_amplitude = get_num(obj, where, "probe_amplitude", 1e-3);
        s.ropt.threads = get_int(obj, where, "threads", 1);
        if (const json* rf = find(obj, "ringdown")) {
            expect_object(*rf, where + ".ringdown");
            check_keys(*rf, where + ".ringdown", {"widths", "target_fraction"});
            RingdownConfig rd;
            const json* wf = find(*rf, "widths");
            if (!wf || !wf->is_array()) bad(where + ".ringdown.widths", "expected an array");
            for (std::size_t i = 0; i < wf->size(); ++i)
                rd.widths.push_back(get_num((*wf)[i], where + ".ringdown.widths"));
            rd.target_fraction = get_num(*rf, where + ".ringdown", "target_fraction", 0.0);
            s.ropt.ringdown = rd;
        }
    } else {
        bad(where + ".kind", "must be identity, risetime, crosstalk or resonator");
    }
    if (s.substeps < 1) bad(where + ".substeps", "must be >= 1");
    return s;
}

std::shared_ptr<const DistortionOperator> build_distortion(const DistortionSpec& s, int N,
                                                           double dt, Unit unit, int channels) {
    if (s.kind == "identity") return identity_resample(N, channels, dt, s.substeps, unit);
    if (s.kind == "risetime") {
        std::vector<double> taus = s.taus;
        if (static_cast<int>(taus.size()) == 1 && channels > 1)
            taus.assign(channels, taus[0]);
        if (static_cast<int>(taus.size()) != channels)
            bad("distortion.taus", "need one rise time per channel");
        const double tau_max = *std::max_element(taus.begin(), taus.end());
        const int M = s.output_steps > 0 ? s.output_steps
                                         : risetime_output_steps(N, s.substeps, tau_max, dt);
        return risetime_distortion(taus, N, dt, dt / s.substeps, M, unit);
    }
    if (s.kind == "crosstalk") {
        if (s.chi.cols() != channels) bad("distortion.chi", "column count must match channels");
        return crosstalk_distortion(s.chi, N, dt, unit);
    }
    // resonator
    ResonatorOperatorOptions opt = s.ropt;
    opt.steps = N;
    opt.dt = dt;
    opt.delta_t = dt / s.substeps;
    if (unit != Unit::volts) bad("pulse.unit", "resonator distortion takes volts");
    if (channels != 2) bad("pulse", "resonator distortion takes 2 input channels (x, y)");
    return std::make_shared<ResonatorOperator>(*s.model, opt);
}

OptimizerConfig parse_optimizer(const json* obj) {
    OptimizerConfig c;
    if (!obj) return c;
    const std::string where = "optimizer";
    expect_object(*obj, where);
    check_keys(*obj, where,
               {"target", "max_iterations", "line_search_evals", "bracket_growth", "bound", "seed",
                "init_scale", "jacobian", "jacobian_refresh", "stall_step", "stall_iterations",
                "penalty_weight", "penalty_start"});
    c.target = get_num(*obj, where, "target", c.target);
    c.max_iterations = get_int(*obj, where, "max_iterations", c.max_iterations);
    c.line_search_evals = get_int(*obj, where, "line_search_evals", c.line_search_evals);
    c.bracket_growth = get_num(*obj, where, "bracket_growth", c.bracket_growth);
    c.bound = get_num(*obj, where, "bound", c.bound);
    if (const json* sf = find(*obj, "seed")) {
        if (!sf->is_number_unsigned()) bad(where + ".seed", "expected a non-negative integer");
        c.seed = sf->get<std::uint64_t>();
    }
    c.init_scale = get_num(*obj, where, "init_scale", c.init_scale);
    if (const json* jf = find(*obj, "jacobian"))
        c.jacobian = get_jacobian_mode(get_str(*jf, where + ".jacobian"), where + ".jacobian");
    c.jacobian_refresh = get_int(*obj, where, "jacobian_refresh", c.jacobian_refresh);
    c.stall_step = get_num(*obj, where, "stall_step", c.stall_step);
    c.stall_iterations = get_int(*obj, where, "stall_iterations", c.stall_iterations);
    c.penalty_weight = get_num(*obj, where, "penalty_weight", c.penalty_weight);
    c.penalty_start = get_int(*obj, where, "penalty_start", c.penalty_start);
    return c;
}

}  // namespace

Experiment load_experiment(const std::string& config_path) {
    json j;
    try {
        j = json::parse(read_text(config_path));
    } catch (const json::exception& e) {
        throw IoError("bad experiment config (" + config_path + "): " + e.what());
    }
    expect_object(j, "config");
    check_keys(j, "config",
               {"name", "problem", "pulse", "square", "pulse_csv", "distortion", "optimizer",
                "samples", "scan", "landscape", "model", "steady_state"});
    const fs::path config_dir = fs::path(config_path).parent_path();

    Experiment ex;
    if (const json* nf = find(j, "name")) ex.name = get_str(*nf, "name");
    if (ex.name.empty()) ex.name = fs::path(config_path).stem().string();

    // problem
    if (const json* pf = find(j, "problem")) {
        expect_object(*pf, "problem");
        if (const json* pr = find(*pf, "preset")) {
            const std::string preset = get_str(*pr, "problem.preset");
            const TargetSpec t = get_target(*pf, "problem");
            if (preset == "qubit-xy") {
                check_keys(*pf, "problem", {"preset", "target"});
                ex.problem = preset_qubit_xy(t);
            } else if (preset == "cnot-nmr") {
                check_keys(*pf, "problem", {"preset", "omega_1", "omega_2", "coupling"});
                ex.problem = preset_cnot_nmr(get_num(*pf, "problem", "omega_1", -2 * M_PI * 15),
                                             get_num(*pf, "problem", "omega_2", 2 * M_PI * 15),
                                             get_num(*pf, "problem", "coupling", 2 * M_PI * 50));
            } else if (preset == "crosstalk-chain") {
                check_keys(*pf, "problem", {"preset", "target", "qubits", "coupling"});
                const int nq = get_int(*pf, "problem", "qubits", 4);
                if (nq < 2 || nq > 10) bad("problem.qubits", "chain needs 2..10 qubits");
                if (t.qubit < 0 || t.qubit >= nq) bad("problem.target.qubit", "out of range");
                ex.problem = preset_crosstalk_chain(
                    nq, get_num(*pf, "problem", "coupling", 2 * M_PI * 20e6), t);
            } else {
                bad("problem.preset", "must be qubit-xy, cnot-nmr or crosstalk-chain");
            }
        } else {
            check_keys(*pf, "problem", {"H0", "controls", "U_target", "detuning"});
            const json* h0 = find(*pf, "H0");
            const json* cs = find(*pf, "controls");
            const json* ut = find(*pf, "U_target");
            if (!h0 || !cs || !ut) bad("problem", "needs H0, controls and U_target");
            ex.problem.H0 = get_matrix(*h0, "problem.H0");
            if (!cs->is_array() || cs->empty()) bad("problem.controls", "expected matrices");
            for (std::size_t i = 0; i < cs->size(); ++i)
                ex.problem.controls.push_back(
                    get_matrix((*cs)[i], "problem.controls[" + std::to_string(i) + "]"));
            ex.problem.U_target = get_matrix(*ut, "problem.U_target");
            if (const json* df = find(*pf, "detuning"))
                ex.problem.detuning = get_matrix(*df, "problem.detuning");
        }
        ex.problem.validate();
        ex.has_problem = true;
    }

    // input pulse: explicit geometry, a csv to read, or generated squares
    if (const json* sf = find(j, "pulse_csv")) ex.pulse_csv = resolve_path(get_str(*sf, "pulse_csv"), config_dir);
    std::optional<DistortionSpec> dspec;
    if (const json* df = find(j, "distortion")) dspec = parse_distortion(*df, config_dir);

    int channels = 0;
    if (!ex.pulse_csv.empty()) {
        const Pulse p = read_pulse_csv(ex.pulse_csv);
        ex.steps = p.steps();
        ex.dt = p.dt;
        ex.unit = p.unit;
        channels = p.channels();
        if (find(j, "pulse")) bad("pulse", "give either pulse geometry or pulse_csv, not both");
    } else if (const json* gf = find(j, "pulse")) {
        expect_object(*gf, "pulse");
        check_keys(*gf, "pulse", {"steps", "dt", "unit", "channels"});
        ex.steps = get_int(*gf, "pulse", "steps", 0);
        ex.dt = get_num(*gf, "pulse", "dt", 0.0);
        if (ex.steps < 1) bad("pulse.steps", "must be >= 1");
        if (!(ex.dt > 0)) bad("pulse.dt", "must be positive");
        if (const json* uf = find(*gf, "unit")) {
            const std::string u = get_str(*uf, "pulse.unit");
            if (u == "V") ex.unit = Unit::volts;
            else if (u == "rad/s") ex.unit = Unit::rad_per_s;
            else bad("pulse.unit", "must be V or rad/s");
        } else {
            ex.unit = (dspec && dspec->kind == "resonator") ? Unit::volts : Unit::rad_per_s;
        }
        channels = get_int(*gf, "pulse", "channels", 0);
    }

    if (const json* qf = find(j, "square")) {
        expect_object(*qf, "square");
        check_keys(*qf, "square", {"amplitudes"});
        const json* af = find(*qf, "amplitudes");
        if (!af) bad("square.amplitudes", "missing");
        ex.square_amplitudes = get_grid(*af, "square.amplitudes");
        if (!ex.pulse_csv.empty()) bad("square", "give either square amplitudes or pulse_csv");
        if (ex.steps < 1) bad("pulse", "square pulses need pulse geometry");
    }

    // distortion operator; channel count defaults from the problem
    if (dspec) {
        if (channels == 0) {
            if (dspec->kind == "resonator") channels = 2;
            else if (dspec->kind == "crosstalk") channels = static_cast<int>(dspec->chi.cols());
            else if (ex.has_problem) channels = static_cast<int>(ex.problem.controls.size());
        }
        if (ex.steps < 1) bad("pulse", "distortion needs pulse geometry or pulse_csv");
        if (channels < 1) bad("pulse.channels", "cannot infer the channel count");
        ex.distortion = build_distortion(*dspec, ex.steps, ex.dt, ex.unit, channels);
        ex.resonator = dynamic_cast<const ResonatorOperator*>(ex.distortion.get());
        if (dspec->model) ex.model = dspec->model;
        if (ex.has_problem &&
            ex.distortion->output_channels() != static_cast<int>(ex.problem.controls.size()))
            bad("distortion", "output channels do not match the problem's control count");
    }

    ex.optimizer = parse_optimizer(find(j, "optimizer"));
    if (ex.has_problem) ex.optimizer.validate();

    // sample distribution; a per-sample tau builds that sample's own rise
    if (const json* sf = find(j, "samples")) {
        if (!sf->is_array() || sf->empty()) bad("samples", "expected a non-empty array");
        for (std::size_t i = 0; i < sf->size(); ++i) {
            const json& e = (*sf)[i];
            const std::string where = "samples[" + std::to_string(i) + "]";
            expect_object(e, where);
            check_keys(e, where, {"delta_omega", "kappa_err", "weight", "tau", "taus"});
            HypothesisSample h;
            h.delta_omega = get_num(e, where, "delta_omega", 0.0);
            h.kappa_err = get_num(e, where, "kappa_err", 0.0);
            h.weight = get_num(e, where, "weight", 1.0);
            std::vector<double> taus;
            if (const json* tf = find(e, "tau")) taus = {get_num(*tf, where + ".tau")};
            if (const json* tf = find(e, "taus"))
                for (std::size_t k = 0; k < tf->size(); ++k)
                    taus.push_back(get_num((*tf)[k], where + ".taus"));
            if (!taus.empty()) {
                if (!dspec || dspec->kind != "risetime")
                    bad(where + ".tau", "only valid with a risetime distortion");
                DistortionSpec ds = *dspec;
                ds.taus = taus;
                // keep every sample on the nominal output grid so their
                // propagators cover the same time span
                ds.output_steps = ex.distortion->output_steps();
                h.distortion = build_distortion(ds, ex.steps, ex.dt, ex.unit, channels);
            }
            ex.samples.samples.push_back(std::move(h));
        }
        // weights normalize so configs can use natural ratios
        double wsum = 0;
        for (const auto& h : ex.samples.samples) {
            if (!(h.weight >= 0)) bad("samples", "weights must be >= 0");
            wsum += h.weight;
        }
        if (!(wsum > 0)) bad("samples", "weights sum to zero");
        for (auto& h : ex.samples.samples) h.weight /= wsum;
        ex.samples.validate();
        if (ex.has_problem && ex.problem.detuning.size() == 0)
            for (const auto& h : ex.samples.samples)
                if (h.delta_omega != 0)
                    bad("samples", "delta_omega needs a problem with a detuning generator");
    } else {
        ex.samples = SampleSet::nominal();
    }

    // scan: families are frozen here so running is a pure evaluation
    if (const json* sf = find(j, "scan")) {
        expect_object(*sf, "scan");
        check_keys(*sf, "scan", {"parameter", "grid"});
        const json* pf = find(*sf, "parameter");
        const json* gf = find(*sf, "grid");
        if (!pf || !gf) bad("scan", "needs parameter and grid");
        Experiment::ScanSpec s;
        s.parameter = get_str(*pf, "scan.parameter");
        s.grid = get_grid(*gf, "scan.grid");
        if (s.parameter != "delta_omega" && s.parameter != "kappa_err" && s.parameter != "tau" &&
            s.parameter != "alpha_L")
            bad("scan.parameter", "must be delta_omega, kappa_err, tau or alpha_L");
        if (s.parameter == "tau" && (!dspec || dspec->kind != "risetime"))
            bad("scan.parameter", "tau scan needs a risetime distortion");
        if (s.parameter == "alpha_L" && (!dspec || dspec->kind != "resonator"))
            bad("scan.parameter", "alpha_L scan needs a resonator distortion");
        if (s.parameter == "delta_omega" && (!ex.has_problem || ex.problem.detuning.size() == 0))
            bad("scan.parameter", "delta_omega scan needs a problem with a detuning generator");
        ex.scan = std::move(s);
    }

    // landscape study
    if (const json* lf = find(j, "landscape")) {
        expect_object(*lf, "landscape");
        check_keys(*lf, "landscape",
                   {"bounds", "trials", "steps", "oversample", "target", "max_iterations", "seed",
                    "threads", "jacobian", "model"});
        LandscapeConfig c;
        const json* bf = find(*lf, "bounds");
        if (!bf) bad("landscape.bounds", "missing");
        c.bounds = get_grid(*bf, "landscape.bounds");
        c.trials = get_int(*lf, "landscape", "trials", c.trials);
        c.steps = get_int(*lf, "landscape", "steps", c.steps);
        c.oversample = get_int(*lf, "landscape", "oversample", c.oversample);
        c.target = get_num(*lf, "landscape", "target", c.target);
        c.max_iterations = get_int(*lf, "landscape", "max_iterations", c.max_iterations);
        if (const json* sf = find(*lf, "seed")) {
            if (!sf->is_number_unsigned()) bad("landscape.seed", "expected a non-negative integer");
            c.seed = sf->get<std::uint64_t>();
        }
        c.threads = get_int(*lf, "landscape", "threads", c.threads);
        if (const json* jf = find(*lf, "jacobian"))
            c.jacobian = get_jacobian_mode(get_str(*jf, "landscape.jacobian"), "landscape.jacobian");
        c.validate();
        if (const json* mf = find(*lf, "model"))
            ex.model = load_resonator_model(resolve_path(get_str(*mf, "landscape.model"), config_dir));
        if (!ex.model) bad("landscape.model", "missing (no resonator model in the config)");
        if (!ex.has_problem) bad("problem", "landscape needs a control problem");
        ex.landscape = std::move(c);
    }

    if (const json* mf = find(j, "model"))
        ex.model = load_resonator_model(resolve_path(get_str(*mf, "model"), config_dir));

    // steady-state scan grid; 1..10 V unless the config narrows it
    if (const json* sf = find(j, "steady_state")) {
        expect_object(*sf, "steady_state");
        check_keys(*sf, "steady_state", {"volts"});
        const json* vf = find(*sf, "volts");
        if (!vf) bad("steady_state.volts", "missing");
        ex.steady_volts = get_grid(*vf, "steady_state.volts");
        for (double v : ex.steady_volts)
            if (!(v > 0)) bad("steady_state.volts", "voltages must be positive");
    } else {
        for (int v = 1; v <= 10; ++v) ex.steady_volts.push_back(v);
    }

    // resolved config echoed into every output file
    ex.resolved = j.dump();
    return ex;
}

void apply_overrides(Experiment& ex, const CliOverrides& o) {
    if (o.seed) {
        ex.optimizer.seed = *o.seed;
        if (ex.landscape) ex.landscape->seed = *o.seed;
    }
    if (o.jacobian) {
        ex.optimizer.jacobian = *o.jacobian;
        if (ex.landscape) ex.landscape->jacobian = *o.jacobian;
    }
    if (o.threads) {
        if (*o.threads < 1) throw ValidationError("--threads must be >= 1");
        if (ex.landscape) ex.landscape->threads = *o.threads;
        if (ex.resonator) {
            ResonatorOperatorOptions opt = ex.resonator->options();
            opt.threads = *o.threads;
            auto op = std::make_shared<ResonatorOperator>(*ex.model, opt);
            ex.distortion = op;
            ex.resonator = op.get();
        }
    }
}

namespace {

std::vector<std::string> base_meta(const Experiment& ex, const std::string& command) {
    return {"command " + command, std::string("version ") + version(), "config " + ex.resolved};
}

std::string out_path(const std::string& out_dir, const std::string& file) {
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / file).string();
}

}  // namespace

std::string render_run_record(const RunRecord& rec, const Experiment& ex,
                              const std::string& command) {
    json j;
    j["name"] = ex.name;
    j["command"] = command;
    j["version"] = version();
    j["config"] = json::parse(ex.resolved);
    j["seed"] = rec.seed;
    j["status"] = run_status_name(rec.status);
    j["message"] = rec.message;
    j["utility"] = rec.utility;
    j["calls"] = {{"total", rec.calls_total},
                  {"jacobian", rec.calls_jacobian},
                  {"ascent", rec.calls_ascent()}};
    json trace = json::array();
    for (const IterationRecord& it : rec.trace)
        trace.push_back({it.iteration, it.utility, it.step, it.calls});
    j["trace"] = std::move(trace);
    json rows = json::array();
    for (int n = 0; n < rec.pulse.steps(); ++n) {
        json row = json::array();
        for (int k = 0; k < rec.pulse.channels(); ++k) row.push_back(rec.pulse.values(n, k));
        rows.push_back(std::move(row));
    }
    j["pulse"] = {{"steps", rec.pulse.steps()},
                  {"channels", rec.pulse.channels()},
                  {"dt", rec.pulse.dt},
                  {"unit", unit_name(rec.pulse.unit)},
                  {"values", std::move(rows)}};
    return j.dump(2) + "\n";
}

int run_optimize(const Experiment& ex, const std::string& out_dir) {
    if (!ex.has_problem) throw ValidationError("optimize needs a problem section");
    if (!ex.distortion) throw ValidationError("optimize needs a distortion section");
    const RunRecord rec = grape_optimize(ex.problem, *ex.distortion, ex.optimizer, ex.samples);

    const std::vector<std::string> meta = base_meta(ex, "optimize");
    write_pulse_csv(out_path(out_dir, "pulse.csv"), rec.pulse, meta);
    write_distorted_csv(out_path(out_dir, "distorted.csv"), ex.distortion->apply(rec.pulse), meta);
    atomic_write_text(out_path(out_dir, "record.json"), render_run_record(rec, ex, "optimize"));

    if (rec.status == RunStatus::reached_target) return 0;
    if (rec.status == RunStatus::aborted) throw ConvergenceError("optimization aborted: " + rec.message);
    return 2;
}

int run_distort(const Experiment& ex, const std::string& out_dir) {
    if (!ex.distortion) throw ValidationError("distort needs a distortion section");
    const std::vector<std::string> meta = base_meta(ex, "distort");
    if (!ex.square_amplitudes.empty()) {
        for (double amp : ex.square_amplitudes) {
            Pulse p;
            p.values = Eigen::MatrixXd::Zero(ex.steps, ex.distortion->input_channels());
            p.values.col(0).setConstant(amp);
            p.dt = ex.dt;
            p.unit = ex.unit;
            std::vector<std::string> m = meta;
            m.push_back("amplitude " + format_double(amp));
            write_distorted_csv(out_path(out_dir, "distorted-" + format_double(amp) + "V.csv"),
                                ex.distortion->apply(p), m);
        }
        return 0;
    }
    if (ex.pulse_csv.empty()) throw ValidationError("distort needs pulse_csv or square amplitudes");
    const Pulse p = read_pulse_csv(ex.pulse_csv);
    ex.distortion->check_input(p);
    write_distorted_csv(out_path(out_dir, "distorted.csv"), ex.distortion->apply(p), meta);
    return 0;
}

int run_scan(const Experiment& ex, const std::string& out_dir) {
    if (!ex.scan) throw ValidationError("scan needs a scan section");
    if (!ex.has_problem) throw ValidationError("scan needs a problem section");
    if (ex.pulse_csv.empty()) throw ValidationError("scan needs pulse_csv");
    const Pulse pulse = read_pulse_csv(ex.pulse_csv);
    const Experiment::ScanSpec& s = *ex.scan;

    DistortionFamily make_distortion;
    ProblemFamily make_problem;
    if (s.parameter == "delta_omega") {
        make_distortion = [&ex](double) { return ex.distortion; };
        make_problem = [&ex](double v) { return ex.problem.with_hypothesis(v, 0.0); };
    } else if (s.parameter == "kappa_err") {
        make_distortion = [&ex](double) { return ex.distortion; };
        make_problem = [&ex](double v) { return ex.problem.with_hypothesis(0.0, v); };
    } else if (s.parameter == "tau") {
        const int K = ex.distortion->input_channels();
        const int M = ex.distortion->output_steps();  // fixed grid across the scan
        const int N = ex.steps;
        const double dt = ex.dt;
        const double delta_t = ex.distortion->output_dt();
        const Unit unit = ex.unit;
        make_distortion = [K, M, N, dt, delta_t,
                           unit](double v) -> std::shared_ptr<const DistortionOperator> {
            if (!(v > 0)) throw ValidationError("tau scan needs positive rise times");
            return risetime_distortion(std::vector<double>(K, v), N, dt, delta_t, M, unit);
        };
        make_problem = [&ex](double) { return ex.problem; };
    } else {  // alpha_L
        const ResonatorModel model = *ex.model;
        ResonatorOperatorOptions opt = ex.resonator->options();
        make_distortion = [model, opt](double v) -> std::shared_ptr<const DistortionOperator> {
            ResonatorModel m = model;
            m.alpha_L = v;
            return std::make_shared<ResonatorOperator>(m, opt);
        };
        make_problem = [&ex](double) { return ex.problem; };
    }

    const std::vector<ScanPoint> points = robustness_scan(pulse, make_distortion, make_problem, s.grid);

    CsvTable t;
    t.meta = base_meta(ex, "scan");
    t.meta.push_back("parameter " + s.parameter);
    std::string grid_line = "grid";
    for (double v : s.grid) grid_line += " " + format_double(v);
    t.meta.push_back(grid_line);
    t.header = {s.parameter, "fidelity"};
    for (const ScanPoint& p : points) t.rows.push_back({p.value, p.fidelity});
    atomic_write_text(out_path(out_dir, "scan.csv"), render_csv(t));
    return 0;
}

int run_landscape(const Experiment& ex, const std::string& out_dir) {
    if (!ex.landscape) throw ValidationError("landscape needs a landscape section");
    const LandscapeConfig& cfg = *ex.landscape;
    const LandscapeResult res = landscape_study(*ex.model, ex.problem, cfg);

    CsvTable t;
    t.meta = base_meta(ex, "landscape");
    t.meta.push_back("master_seed " + std::to_string(cfg.seed));
    for (std::size_t bi = 0; bi < cfg.bounds.size(); ++bi) {
        std::string line = "trial_seeds bound=" + format_double(cfg.bounds[bi]);
        for (int tr = 0; tr < cfg.trials; ++tr)
            line += " " + std::to_string(Rng::substream(cfg.seed, bi * cfg.trials + tr));
        t.meta.push_back(line);
    }
    t.header = {"bound_v", "f_ss_hz", "pulse_time_s",     "trials",    "failures",
                "failure_fraction", "calls_q16", "calls_q50", "calls_q84"};
    for (const BoundSummary& b : res.bounds)
        t.rows.push_back({b.bound, b.f_ss_hz, b.pulse_time, static_cast<double>(b.trials),
                          static_cast<double>(b.failures), b.failure_fraction, b.calls_q16,
                          b.calls_q50, b.calls_q84});
    atomic_write_text(out_path(out_dir, "landscape.csv"), render_csv(t));
    return 0;
}

int run_steady_state(const Experiment& ex, const std::string& out_dir) {
    if (!ex.model) throw ValidationError("steady-state needs a resonator model in the config");
    CsvTable t;
    t.meta = base_meta(ex, "steady-state");
    t.header = {"volts", "f_ss_hz", "i_mag_a", "settle_time_s"};
    for (double v : ex.steady_volts) {
        const SteadyState s = steady_state_response(v, *ex.model);
        t.rows.push_back({v, s.f_ss_hz, s.i_mag, s.settle_time});
    }
    atomic_write_text(out_path(out_dir, "steady-state.csv"), render_csv(t));
    return 0;
}

}  // namespace qoct
