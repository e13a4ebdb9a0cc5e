#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bobw/config.hpp"
#include "bobw/learner.hpp"

namespace bobw::harness {

/// One row of episodes.csv.
struct EpisodeRow {
    int rep = 0;
    long long t = 0;
    int epoch = 1;
    double eta = 0.0;
    double learner_exp_loss = 0.0;      // <q^{P,pi_t}, l_t>
    double learner_sampled_loss = 0.0;  // loss along the sampled trajectory
    double cum_reg_opt = 0.0;           // uses the final hindsight policy
    double cum_reg_pistar = 0.0;        // NaN when pi* is undefined
    double ledger_increment = 0.0;      // NaN when pi* is undefined
    bool a_holds = true;
};

struct AuditSummary {
    long long optimism_violations = 0;
    long long uob_lower_violations = 0;  // u_t(s) < 1/(|S| t)
    long long dominance_violations = 0;  // u_t(s,a) < q_t(s,a) - 1e-9 while A holds
    long long audited_episodes = 0;      // episodes with A holding
    double min_uob_ratio = 0.0;          // min over episodes/states of u_t(s) |S| t
    std::vector<algo::OptimismViolation> first_violations;  // at most 10
};

struct ReplicationResult {
    int rep = 0;
    std::vector<EpisodeRow> rows;  // empty unless requested
    int epochs = 1;
    bool a_held = true;             // A held on every episode
    long long a_episodes = 0;       // episodes on which A held
    double reg_opt = 0.0;           // sum <q_t - q_ring, l_t>
    double reg_opt_vrec = 0.0;      // same through V recursion
    double reg_pistar = 0.0;        // NaN when pi* is undefined
    double ledger = 0.0;            // NaN when pi* is undefined
    double learner_loss = 0.0;
    double realized_corruption = 0.0;
    long long guard_triggers = 0;
    std::vector<int> hindsight_actions;
    std::vector<estimation::EpochTraceEntry> epoch_trace;
    std::vector<std::array<double, 4>> solver_rows;  // t, iterations, residual, objective
    std::optional<AuditSummary> audit;
};

struct RunOptions {
    bool keep_rows = true;
    /// Overrides config.audit when set.
    std::optional<bool> audit;
};

/**
 * Drives one replication for T episodes. Losses and trajectories use separate
 * streams derived from (seed, rep), so replications are independent and the
 * result does not depend on scheduling.
 */
ReplicationResult run_replication(const ExperimentConfig& config, int rep, const RunOptions& options = {});

struct RegretReport {
    std::string name;
    std::string world;
    std::string variant;
    long long horizon_T = 0;
    std::uint64_t seed = 0;
    std::vector<ReplicationResult> replications;  // ordered by rep
};

/// All replications, spread over config.threads worker threads.
RegretReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// sum_{s,a} q(s,a) Delta(s,a): one episode of the gap ledger.
double gap_ledger_increment(const mdp::GapInfo& gap, std::span<const double> q);

/// Gap ledger of a replication; throws ConfigError when pi* is undefined.
double condition_ledger(const ReplicationResult& result);

/**
 * Writes episodes.csv, summary.csv, aggregate.csv and report.json into dir,
 * plus epochs_rep<r>.csv / solver_rep<r>.csv when enabled. Returns the files
 * written.
 */
std::vector<std::filesystem::path> write_report(const RegretReport& report, const OutputOptions& output,
                                                const std::filesystem::path& dir);

inline constexpr const char* kEpisodeColumns =
    "rep,t,epoch,eta,learner_exp_loss,learner_sampled_loss,cum_reg_opt,cum_reg_pistar,ledger_increment,A_holds";

}  // namespace bobw::harness
