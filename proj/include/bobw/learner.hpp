#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bobw/environment.hpp"
#include "bobw/ftrl.hpp"
#include "bobw/mdp.hpp"
#include "bobw/occupancy_bounds.hpp"
#include "bobw/transition_estimation.hpp"

namespace bobw::algo {

enum class Variant { kUnknownFull, kUnknownBandit, kKnownFull, kKnownBandit };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
bool is_bandit(Variant v);
bool is_known(Variant v);

struct LearnerConfig {
    Variant variant = Variant::kUnknownFull;
    long long horizon_T = 1;
    std::optional<double> delta;  // defaults: 1/T^2 (full), 1/T^3 (bandit)
    double gamma = 1.0;           // known_bandit learning-rate scale
    /// Only read by the known-transition variants.
    std::shared_ptr<const mdp::TransitionKernel> known_transition;
    /// Compute u_t every episode even for full information (audits).
    bool compute_upper_occupancy = false;
    ftrl::SolverOptions solver;

    double effective_delta() const;
    ftrl::RegularizerSpec regularizer(const mdp::LayerStructure& ls) const;
};

/// l_hat = observed - bonus, kept in separate components.
struct AdjustedLoss {
    std::vector<double> observed;  // l (full) or l 1{visited} / u (bandit)
    std::vector<double> bonus;     // L * B_i(s,a), zero for known transition

    std::vector<double> value() const;
};

/// Everything the learner produced in one episode.
struct EpisodeRecord {
    long long t = 0;
    int epoch = 1;
    long long epoch_start = 1;
    double eta = 0.0;
    mdp::OccupancyMeasure q_hat;
    mdp::StochasticPolicy policy;
    AdjustedLoss loss_estimate;
    /// Importance-weight denominators (u_t for unknown bandit, q_t for known bandit).
    std::vector<double> denominator;
    std::optional<uob::UpperOccupancy> upper_occupancy;
    estimation::ConfidenceSetPtr confidence;  // null for known transition
    std::shared_ptr<const mdp::TransitionKernel> kernel;  // kernel FTRL optimised over
    bool rollover = false;
    bool guard_triggered = false;
    int solver_iterations = 0;
    double flow_residual = 0.0;
    double objective = 0.0;
    double m_increment = 0.0;
};

/**
 * One of the four learners. The learner only sees the layout, its config and
 * the feedback of each episode; the true kernel is only reachable through the
 * config of the known-transition variants.
 */
class Learner {
public:
    Learner(mdp::StructurePtr structure, LearnerConfig config);

    const LearnerConfig& config() const { return config_; }
    const mdp::LayerStructure& structure() const { return *structure_; }

    /// Solves FTRL for episode t and returns pi_t.
    const mdp::StochasticPolicy& begin_episode(long long t);

    /// Consumes the trajectory and feedback of episode t; returns the record.
    EpisodeRecord end_episode(const env::Trajectory& trajectory, const env::EpisodeFeedback& feedback);

    int epoch() const;
    long long epoch_start() const;
    const estimation::EpochState* epochs() const { return epochs_ ? &*epochs_ : nullptr; }
    const ftrl::FtrlState& ftrl_state() const { return *ftrl_; }
    double current_eta() const { return eta_; }

private:
    void restart_ftrl(long long start);

    mdp::StructurePtr structure_;
    LearnerConfig config_;
    ftrl::RegularizerSpec spec_;
    std::optional<estimation::EpochState> epochs_;
    std::shared_ptr<const mdp::TransitionKernel> kernel_;
    std::optional<ftrl::FtrlState> ftrl_;

    long long t_ = 0;
    double eta_ = 0.0;
    ftrl::SolveResult solve_;
    mdp::StochasticPolicy policy_;
};

/// Bandit estimator mean: (q_t / denominator) l - bonus.
std::vector<double> expected_adjusted_loss(const EpisodeRecord& record, std::span<const double> q_true,
                                           std::span<const double> loss);

struct OptimismViolation {
    long long t = 0;
    std::string policy;
    int state = 0;
    int action = 0;
    double estimated = 0.0;
    double truth = 0.0;
};

/**
 * Checks Q_hat^pi <= Q^pi + 1e-9 for the given policies on an episode whose
 * confidence set contains the truth (other episodes are skipped). Full
 * information uses l_hat, bandit feedback its conditional mean.
 */
std::vector<OptimismViolation> optimism_audit(const EpisodeRecord& record,
                                              const mdp::TransitionKernel& truth,
                                              std::span<const double> true_loss,
                                              const std::vector<std::pair<std::string, mdp::StochasticPolicy>>& policies,
                                              bool bandit);

}  // namespace bobw::algo
