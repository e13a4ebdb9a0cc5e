#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bobw/environment.hpp"
#include "bobw/learner.hpp"
#include "bobw/mdp.hpp"

namespace bobw::harness {

/**
 * MDP instance file:
 *   { "layers": [1, 2, 1], "actions": 2,
 *     "transition": [[[p, ...], ...], ...],   // [state][action][next-layer state]
 *     "names": ["s0", ...] }                  // optional
 * `transition` lists the non-terminal states in id order; each row is a
 * distribution over the next layer, indexed locally.
 */
mdp::LayeredMdp mdp_from_json(const nlohmann::json& j);
nlohmann::json mdp_to_json(const mdp::LayeredMdp& mdp);
mdp::LayeredMdp load_mdp(const std::filesystem::path& path);

/// Per-pair table given either flat (num_pairs) or nested [state][action].
std::vector<double> table_from_json(const nlohmann::json& j, const mdp::LayerStructure& ls);
nlohmann::json table_to_json(const std::vector<double>& table, const mdp::LayerStructure& ls);

struct OutputOptions {
    std::string dir = "results";
    bool epoch_trace = false;
    bool solver_diagnostics = false;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::string world;  // free-form label copied into reports
    std::shared_ptr<const mdp::LayeredMdp> mdp;
    env::LossGenerator losses;
    algo::Variant variant = algo::Variant::kUnknownFull;
    std::optional<double> delta;
    double gamma = 1.0;
    long long horizon_T = 1;
    int replications = 1;
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency
    bool audit = false;
    OutputOptions output;

    /// Throws ConfigError with an actionable message on any inconsistency.
    void validate() const;
    algo::LearnerConfig learner_config() const;
};

/// Relative paths (MDP file, loss script) resolve against base_dir.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace bobw::harness
