#pragma once

#include <cstdint>
#include <vector>

#include "bobw/mdp.hpp"
#include "bobw/rng.hpp"

namespace bobw::env {

enum class LossKind { kIidStochastic, kAdversarialScripted, kCorruptedIid, kSwitchingAdversary };

/// How an i.i.d. table is realised: Bernoulli(mean) draws or the mean itself.
enum class IidMode { kBernoulli, kMean };

/**
 * Loss-sequence generator for one world.
 *
 * Generators are immutable; next_loss is a pure function of (generator,
 * episode, stream). Corruption replaces the whole table on scheduled episodes
 * and is charged ||replacement - mean||_inf per episode against the budget.
 */
struct LossGenerator {
    LossKind kind = LossKind::kIidStochastic;
    IidMode mode = IidMode::kBernoulli;
    std::vector<double> means;                      // iid / corrupted_iid baseline
    std::vector<std::vector<double>> script;        // adversarial_scripted, one table per episode
    std::vector<double> alternate_means;            // switching_adversary second table
    long long block_length = 1;                     // switching_adversary block size
    double corruption_budget = 0.0;                 // declared C
    std::vector<long long> corruption_episodes;     // sorted, 1-based
    std::vector<double> corruption_table;

    static LossGenerator iid(std::vector<double> means, IidMode mode);
    static LossGenerator scripted(std::vector<std::vector<double>> tables);
    static LossGenerator corrupted(std::vector<double> means, IidMode mode, double budget,
                                   std::vector<long long> episodes, std::vector<double> table);
    static LossGenerator switching(std::vector<double> first, std::vector<double> second,
                                   long long block_length, IidMode mode);

    /// Checks table shapes, ranges, budget and script length against T.
    void validate(const mdp::LayerStructure& ls, long long horizon_T) const;

    /// Whether a mean table exists (stochastic worlds with a gap structure).
    bool has_mean() const {
        return kind == LossKind::kIidStochastic || kind == LossKind::kCorruptedIid;
    }
    /// Corruption charged to episode t (0 if not scheduled).
    double corruption_at(long long t) const;
    /// Total corruption realised over episodes 1..T.
    double realized_corruption(long long horizon_T) const;
};

/// Loss table of episode t (1-based). Entries are in [0,1].
mdp::LossFunction next_loss(const LossGenerator& gen, long long t, const RngStream& rng);

/// States s_0..s_L and actions a_0..a_{L-1} of one episode.
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;

    int length() const { return static_cast<int>(actions.size()); }
};

enum class FeedbackMode { kFull, kBandit };

struct ObservedLoss {
    int state = 0;
    int action = 0;
    double loss = 0.0;
};

/// What the learner is allowed to see after an episode.
struct EpisodeFeedback {
    FeedbackMode mode = FeedbackMode::kFull;
    mdp::LossFunction full;              // full information only
    std::vector<ObservedLoss> visited;   // bandit only, one entry per layer
};

struct RolloutResult {
    Trajectory trajectory;
    EpisodeFeedback feedback;
};

/// Samples one episode from s_0 under (policy, true transition) and builds feedback.
RolloutResult rollout(const mdp::LayeredMdp& mdp, const mdp::StochasticPolicy& policy,
                      const mdp::LossFunction& loss, FeedbackMode mode, RngStream& rng);

/// Random kernel: each row is normalised i.i.d. Exp(1) weights.
mdp::LayeredMdp random_mdp(std::vector<int> layer_sizes, int num_actions, RngStream rng);

/**
 * Mean-loss table with a prescribed gap structure: optimal_actions[s] is the
 * unique optimal action and every other action at s has gap drawn uniformly
 * from [min_gap, max_gap] (the first suboptimal pair gets exactly min_gap).
 * Optimal losses are drawn in [0, 1 - max_gap] and suboptimal losses solved
 * from the Bellman equation; throws ConfigError if an entry leaves [0,1].
 */
std::vector<double> means_with_gaps(const mdp::LayeredMdp& mdp, const std::vector<int>& optimal_actions,
                                    double min_gap, double max_gap, RngStream rng);

}  // namespace bobw::env
