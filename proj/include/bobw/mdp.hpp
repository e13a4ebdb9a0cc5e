#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bobw {

/// Shapes or indices that do not fit the layered structure.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid experiment, generator or learner settings.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace mdp {

/// Tolerance used when building kernels, policies and value functions.
inline constexpr double kConstructionTol = 1e-12;
/// Tolerance used when validating solver outputs (occupancy measures).
inline constexpr double kValidationTol = 1e-9;
/// Row mass at or below this is treated as zero by policy_from_occupancy.
inline constexpr double kUnderflowFloor = 1e-300;

/**
 * Layer layout of a loop-free episodic MDP.
 *
 * States carry dense ids grouped by layer: layer k occupies the contiguous id
 * range [layer_begin(k), layer_end(k)). Layer 0 holds the initial state (id 0)
 * and layer L holds the terminal state (id num_states()-1). Per-pair tables
 * (losses, occupancies, policies) are indexed by pair(s, a) = s * |A| + a over
 * the non-terminal states.
 */
class LayerStructure {
public:
    LayerStructure(std::vector<int> layer_sizes, int num_actions);

    int horizon() const { return static_cast<int>(layer_sizes_.size()) - 1; }
    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    /// Number of non-terminal (state, action) pairs.
    int num_pairs() const { return (num_states_ - 1) * num_actions_; }
    int initial_state() const { return 0; }
    int terminal_state() const { return num_states_ - 1; }

    int layer_size(int k) const { return layer_sizes_[k]; }
    int layer_begin(int k) const { return layer_offset_[k]; }
    int layer_end(int k) const { return layer_offset_[k + 1]; }
    int layer_of(int s) const { return layer_of_[s]; }
    const std::vector<int>& layer_sizes() const { return layer_sizes_; }

    int pair(int s, int a) const { return s * num_actions_ + a; }
    int state_of_pair(int p) const { return p / num_actions_; }
    int action_of_pair(int p) const { return p % num_actions_; }

    /// Offset of the transition row of (s, a) inside a flat kernel array.
    std::size_t row_offset(int s, int a) const { return row_offset_[pair(s, a)]; }
    /// Length of the transition row of a state (size of the next layer).
    int row_size(int s) const { return layer_sizes_[layer_of_[s] + 1]; }
    std::size_t kernel_size() const { return row_offset_.back(); }

    bool operator==(const LayerStructure& other) const {
        return layer_sizes_ == other.layer_sizes_ && num_actions_ == other.num_actions_;
    }

private:
    std::vector<int> layer_sizes_;
    std::vector<int> layer_offset_;
    std::vector<int> layer_of_;
    std::vector<std::size_t> row_offset_;
    int num_states_ = 0;
    int num_actions_ = 0;
};

using StructurePtr = std::shared_ptr<const LayerStructure>;

/**
 * Transition probabilities P(s'|s,a) for every non-terminal pair, stored as
 * one row per pair over the states of the next layer (local indices).
 */
class TransitionKernel {
public:
    TransitionKernel(StructurePtr structure, std::vector<double> values);
    /// Uniform rows over the next layer.
    static TransitionKernel uniform(StructurePtr structure);

    const LayerStructure& structure() const { return *structure_; }
    const StructurePtr& structure_ptr() const { return structure_; }

    std::span<const double> row(int s, int a) const {
        return {values_.data() + structure_->row_offset(s, a),
                static_cast<std::size_t>(structure_->row_size(s))};
    }
    std::span<double> row(int s, int a) {
        return {values_.data() + structure_->row_offset(s, a),
                static_cast<std::size_t>(structure_->row_size(s))};
    }
    /// P(next | s, a) where next is a global state id in the next layer.
    double prob(int s, int a, int next) const {
        return row(s, a)[next - structure_->layer_begin(structure_->layer_of(s) + 1)];
    }
    const std::vector<double>& values() const { return values_; }

    /// Throws StructuralError unless every row is a distribution within tol.
    void validate(double tol = kConstructionTol) const;

private:
    StructurePtr structure_;
    std::vector<double> values_;
};

/// Ground-truth world: layout plus the true transition.
struct LayeredMdp {
    StructurePtr structure;
    TransitionKernel transition;
    std::vector<std::string> state_names;

    LayeredMdp(TransitionKernel kernel, std::vector<std::string> names = {})
        : structure(kernel.structure_ptr()), transition(std::move(kernel)),
          state_names(std::move(names)) {}

    const LayerStructure& layout() const { return *structure; }
};

/// pi(a|s) per non-terminal pair.
struct StochasticPolicy {
    std::vector<double> probs;

    double operator()(const LayerStructure& ls, int s, int a) const {
        return probs[ls.pair(s, a)];
    }
    static StochasticPolicy uniform(const LayerStructure& ls);
    /// Deterministic policy from one action per non-terminal state.
    static StochasticPolicy deterministic(const LayerStructure& ls,
                                          std::span<const int> actions);
    void validate(const LayerStructure& ls, double tol = kConstructionTol) const;
};

/// q(s,a): visit probability of each non-terminal pair.
struct OccupancyMeasure {
    std::vector<double> q;

    /// Sum_a q(s,a).
    double state_mass(const LayerStructure& ls, int s) const;
};

enum class LossRange { kTrue, kEstimated };

/// Per-pair loss. kTrue tables must lie in [0,1].
struct LossFunction {
    std::vector<double> values;
    LossRange range = LossRange::kEstimated;

    void validate(const LayerStructure& ls) const;
};

/// Q per non-terminal pair and V per state (V at the terminal state is 0).
struct ValueFunctions {
    std::vector<double> q_values;
    std::vector<double> v_values;

    double advantage(const LayerStructure& ls, int s, int a) const {
        return q_values[ls.pair(s, a)] - v_values[s];
    }
};

OccupancyMeasure occupancy_of(const TransitionKernel& kernel, const StochasticPolicy& policy);

StochasticPolicy policy_from_occupancy(const LayerStructure& ls, const OccupancyMeasure& q);

ValueFunctions value_functions(const TransitionKernel& kernel, std::span<const double> loss,
                               const StochasticPolicy& policy);

/// <q, loss> over the non-terminal pairs.
double inner(std::span<const double> q, std::span<const double> loss);

/// Max absolute violation of layer mass and flow conservation w.r.t. kernel.
double flow_residual(const TransitionKernel& kernel, std::span<const double> q);

/// Throws StructuralError when q is negative or violates flow beyond tol.
void validate_occupancy(const TransitionKernel& kernel, const OccupancyMeasure& q,
                        double tol = kValidationTol);

struct HindsightSolution {
    std::vector<int> actions;
    StochasticPolicy policy;
    double total_loss = 0.0;
};

/// Deterministic minimiser of <q^{P,pi}, cumulative_loss>; ties go to the lowest action.
HindsightSolution best_policy_in_hindsight(const LayeredMdp& mdp,
                                           std::span<const double> cumulative_loss);

struct GapInfo {
    std::vector<int> actions;   // pi*(s) per non-terminal state
    StochasticPolicy policy;
    std::vector<double> gaps;   // Q*(s,a) - V*(s) per pair
    double min_gap = 0.0;
};

/// Gap structure of the mean loss. Requires a unique optimal action at every
/// state (second best worse by more than 1e-9), otherwise throws ConfigError.
GapInfo gap_function(const LayeredMdp& mdp, std::span<const double> mean_loss);

}  // namespace mdp
}  // namespace bobw
