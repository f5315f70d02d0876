#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "qoct/experiment.hpp"

using namespace qoct;

int main(int argc, char** argv) {
    CLI::App app{"pulse optimization through classical hardware distortions"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::optional<unsigned long long> seed;
    std::string jacobian;
    std::optional<int> threads;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (json)")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "override the optimizer seed");
        cmd->add_option("--jacobian", jacobian, "override the jacobian mode")
            ->check(CLI::IsMember({"zero-order", "exact"}));
        cmd->add_option("--threads", threads, "override the worker thread count");
    };

    CLI::App* optimize = app.add_subcommand("optimize", "run the pulse optimization");
    CLI::App* distort = app.add_subcommand("distort", "push a pulse through the distortion");
    CLI::App* scan = app.add_subcommand("scan", "fidelity of a fixed pulse over a parameter grid");
    CLI::App* landscape = app.add_subcommand("landscape", "multi-bound optimization study");
    CLI::App* steady = app.add_subcommand("steady-state", "constant-drive steady-state scan");
    for (CLI::App* cmd : {optimize, distort, scan, landscape, steady}) add_common(cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // help exits clean, any parse problem is an error
    }

    try {
        Experiment ex = load_experiment(config_path);
        CliOverrides o;
        o.seed = seed;
        if (jacobian == "zero-order") o.jacobian = JacobianMode::zero_order;
        if (jacobian == "exact") o.jacobian = JacobianMode::exact;
        o.threads = threads;
        apply_overrides(ex, o);

        if (optimize->parsed()) return run_optimize(ex, out_dir);
        if (distort->parsed()) return run_distort(ex, out_dir);
        if (scan->parsed()) return run_scan(ex, out_dir);
        if (landscape->parsed()) return run_landscape(ex, out_dir);
        return run_steady_state(ex, out_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
