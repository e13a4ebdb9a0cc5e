#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "bobw/config.hpp"
#include "bobw/harness.hpp"
#include "certify.hpp"

using namespace bobw;

namespace {

int run(const std::string& path, std::optional<std::uint64_t> seed, std::optional<int> reps,
        std::optional<std::string> out, bool audit) {
    auto config = harness::load_config(path);
    if (seed) config.seed = *seed;
    if (reps) config.replications = *reps;
    if (out) config.output.dir = *out;
    if (audit) config.audit = true;
    config.validate();

    const auto report = harness::run_experiment(config);
    const auto files = harness::write_report(report, config.output, config.output.dir);
    for (const auto& r : report.replications) {
        fmt::print("rep {}: epochs={} A_held={} reg_opt={:.6g}", r.rep, r.epochs, r.a_held, r.reg_opt);
        if (!std::isnan(r.reg_pistar)) fmt::print(" reg_pistar={:.6g} ledger={:.6g}", r.reg_pistar, r.ledger);
        if (r.audit)
            fmt::print(" optimism_violations={} uob_lower_violations={} dominance_violations={}",
                       r.audit->optimism_violations, r.audit->uob_lower_violations, r.audit->dominance_violations);
        fmt::print("\n");
    }
    for (const auto& f : files) fmt::print("wrote {}\n", f.string());
    return 0;
}

int oracle_check(int instances, std::uint64_t seed) {
    bool ok = true;
    auto line = [&](bool pass, const std::string& text) {
        ok = ok && pass;
        fmt::print("[{}] {}\n", pass ? "PASS" : "FAIL", text);
    };
    for (bool shannon : {true, false}) {
        const auto c = oracle::certify_ftrl(shannon, instances, seed);
        line(c.failures == 0 && c.max_objective_gap <= 1e-6 && c.max_flow_residual <= 1e-10,
             fmt::format("ftrl {}: {} instances, objective gap {:.3g}, flow residual {:.3g}, argmin gap {:.3g}, "
                         "solver failures {}",
                         c.regularizer, c.instances, c.max_objective_gap, c.max_flow_residual, c.max_q_gap,
                         c.failures));
    }
    const auto ew = oracle::certify_exponential_weights(instances, seed + 1);
    line(ew.max_error <= 1e-10,
         fmt::format("one-layer shannon vs exponential weights: {} instances, max error {:.3g}", ew.instances,
                     ew.max_error));
    const auto u = oracle::certify_uob(instances, seed + 2);
    line(u.max_box_gap <= 1e-12 && u.max_box_sample_excess <= 1e-12 && u.max_uob_gap <= 1e-10,
         fmt::format("upper occupancy: {} instances, box LP gap {:.3g}, sampled excess {:.3g}, u gap {:.3g}",
                     u.instances, u.max_box_gap, u.max_box_sample_excess, u.max_uob_gap));
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Best-of-both-worlds learners for episodic MDPs"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    std::optional<std::string> out;
    bool audit = false;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment and write CSV/JSON reports");
    run_cmd->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--seed", seed, "Override the seed");
    run_cmd->add_option("--reps", reps, "Override the replication count");
    run_cmd->add_option("--out", out, "Override the output directory");
    run_cmd->add_flag("--audit", audit, "Enable optimism and upper-occupancy audits");

    auto* validate_cmd = app.add_subcommand("validate", "Check an experiment config without running it");
    validate_cmd->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);

    int instances = 50;
    std::uint64_t oracle_seed = 2024;
    auto* oracle_cmd = app.add_subcommand("oracle-check", "Cross-check the FTRL and UOB solvers against oracles");
    oracle_cmd->add_option("--instances", instances, "Random instances per suite");
    oracle_cmd->add_option("--seed", oracle_seed, "Instance seed");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) return run(config_path, seed, reps, out, audit);
        if (*validate_cmd) {
            const auto c = harness::load_config(config_path);
            fmt::print("{}: ok ({} states, {} actions, T={}, reps={}, variant={})\n", config_path,
                       c.mdp->layout().num_states(), c.mdp->layout().num_actions(), c.horizon_T, c.replications,
                       algo::to_string(c.variant));
            return 0;
        }
        if (*oracle_cmd) return oracle_check(instances, oracle_seed);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    }
    return 0;
}
