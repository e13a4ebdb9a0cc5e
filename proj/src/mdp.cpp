#include "bobw/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace bobw::mdp {

LayerStructure::LayerStructure(std::vector<int> layer_sizes, int num_actions)
    : layer_sizes_(std::move(layer_sizes)), num_actions_(num_actions) {
    if (layer_sizes_.size() < 2)
        throw StructuralError("a layered MDP needs at least two layers (horizon >= 1)");
    if (layer_sizes_.front() != 1 || layer_sizes_.back() != 1)
        throw StructuralError("first and last layers must contain exactly one state");
    if (num_actions_ < 1) throw StructuralError("action count must be positive");
    for (int n : layer_sizes_)
        if (n < 1) throw StructuralError("every layer must contain at least one state");

    layer_offset_.resize(layer_sizes_.size() + 1, 0);
    for (std::size_t k = 0; k < layer_sizes_.size(); ++k)
        layer_offset_[k + 1] = layer_offset_[k] + layer_sizes_[k];
    num_states_ = layer_offset_.back();

    layer_of_.resize(num_states_);
    for (std::size_t k = 0; k < layer_sizes_.size(); ++k)
        for (int s = layer_offset_[k]; s < layer_offset_[k + 1]; ++s)
            layer_of_[s] = static_cast<int>(k);

    row_offset_.assign(static_cast<std::size_t>(num_pairs()) + 1, 0);
    for (int s = 0; s + 1 < num_states_; ++s)
        for (int a = 0; a < num_actions_; ++a) {
            const int p = pair(s, a);
            row_offset_[p + 1] = row_offset_[p] + static_cast<std::size_t>(row_size(s));
        }
}

TransitionKernel::TransitionKernel(StructurePtr structure, std::vector<double> values)
    : structure_(std::move(structure)), values_(std::move(values)) {
    if (!structure_) throw StructuralError("transition kernel without a layer structure");
    if (values_.size() != structure_->kernel_size())
        throw StructuralError(fmt::format("kernel has {} entries, layout needs {}",
                                          values_.size(), structure_->kernel_size()));
}

TransitionKernel TransitionKernel::uniform(StructurePtr structure) {
    std::vector<double> values(structure->kernel_size());
    const auto& ls = *structure;
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            const double w = 1.0 / ls.row_size(s);
            std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(ls.row_offset(s, a)),
                        ls.row_size(s), w);
        }
    return TransitionKernel(std::move(structure), std::move(values));
}

void TransitionKernel::validate(double tol) const {
    const auto& ls = *structure_;
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            double sum = 0.0;
            for (double p : row(s, a)) {
                if (!(p >= 0.0) || !std::isfinite(p))
                    throw StructuralError(
                        fmt::format("transition row ({}, {}) has a negative or non-finite entry", s, a));
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol)
                throw StructuralError(
                    fmt::format("transition row ({}, {}) sums to {:.17g}", s, a, sum));
        }
}

StochasticPolicy StochasticPolicy::uniform(const LayerStructure& ls) {
    return {std::vector<double>(ls.num_pairs(), 1.0 / ls.num_actions())};
}

StochasticPolicy StochasticPolicy::deterministic(const LayerStructure& ls,
                                                 std::span<const int> actions) {
    if (static_cast<int>(actions.size()) != ls.terminal_state())
        throw StructuralError("deterministic policy needs one action per non-terminal state");
    StochasticPolicy pi{std::vector<double>(ls.num_pairs(), 0.0)};
    for (int s = 0; s < ls.terminal_state(); ++s) {
        if (actions[s] < 0 || actions[s] >= ls.num_actions())
            throw StructuralError(fmt::format("action {} out of range at state {}", actions[s], s));
        pi.probs[ls.pair(s, actions[s])] = 1.0;
    }
    return pi;
}

void StochasticPolicy::validate(const LayerStructure& ls, double tol) const {
    if (static_cast<int>(probs.size()) != ls.num_pairs())
        throw StructuralError("policy size does not match the layout");
    for (int s = 0; s < ls.terminal_state(); ++s) {
        double sum = 0.0;
        for (int a = 0; a < ls.num_actions(); ++a) {
            const double p = probs[ls.pair(s, a)];
            if (!(p >= 0.0)) throw StructuralError(fmt::format("negative policy entry at state {}", s));
            sum += p;
        }
        if (std::abs(sum - 1.0) > tol)
            throw StructuralError(fmt::format("policy row {} sums to {:.17g}", s, sum));
    }
}

double OccupancyMeasure::state_mass(const LayerStructure& ls, int s) const {
    double sum = 0.0;
    for (int a = 0; a < ls.num_actions(); ++a) sum += q[ls.pair(s, a)];
    return sum;
}

void LossFunction::validate(const LayerStructure& ls) const {
    if (static_cast<int>(values.size()) != ls.num_pairs())
        throw StructuralError("loss table size does not match the layout");
    for (double v : values) {
        if (!std::isfinite(v)) throw StructuralError("loss table has a non-finite entry");
        if (range == LossRange::kTrue && (v < 0.0 || v > 1.0))
            throw StructuralError(fmt::format("true loss entry {} outside [0,1]", v));
    }
}

namespace {

void check_pair_table(const LayerStructure& ls, std::size_t size, const char* what) {
    if (static_cast<int>(size) != ls.num_pairs())
        throw StructuralError(fmt::format("{} has {} entries, layout has {} pairs", what, size,
                                          ls.num_pairs()));
}

}  // namespace

OccupancyMeasure occupancy_of(const TransitionKernel& kernel, const StochasticPolicy& policy) {
    const auto& ls = kernel.structure();
    check_pair_table(ls, policy.probs.size(), "policy");
    const int A = ls.num_actions();

    std::vector<double> state_mass(ls.num_states(), 0.0);
    state_mass[ls.initial_state()] = 1.0;
    OccupancyMeasure out{std::vector<double>(ls.num_pairs(), 0.0)};

    for (int k = 0; k < ls.horizon(); ++k) {
        const int next_begin = ls.layer_begin(k + 1);
        for (int s = ls.layer_begin(k); s < ls.layer_end(k); ++s) {
            for (int a = 0; a < A; ++a) {
                const double qsa = state_mass[s] * policy.probs[ls.pair(s, a)];
                out.q[ls.pair(s, a)] = qsa;
                if (qsa == 0.0) continue;
                const auto row = kernel.row(s, a);
                for (std::size_t j = 0; j < row.size(); ++j)
                    state_mass[next_begin + static_cast<int>(j)] += qsa * row[j];
            }
        }
    }
    return out;
}

StochasticPolicy policy_from_occupancy(const LayerStructure& ls, const OccupancyMeasure& q) {
    check_pair_table(ls, q.q.size(), "occupancy measure");
    const int A = ls.num_actions();
    StochasticPolicy pi{std::vector<double>(ls.num_pairs())};
    for (int s = 0; s < ls.terminal_state(); ++s) {
        double total = 0.0;
        for (int a = 0; a < A; ++a) total += std::max(0.0, q.q[ls.pair(s, a)]);
        for (int a = 0; a < A; ++a)
            pi.probs[ls.pair(s, a)] =
                total <= kUnderflowFloor ? 1.0 / A : std::max(0.0, q.q[ls.pair(s, a)]) / total;
    }
    return pi;
}

ValueFunctions value_functions(const TransitionKernel& kernel, std::span<const double> loss,
                               const StochasticPolicy& policy) {
    const auto& ls = kernel.structure();
    check_pair_table(ls, loss.size(), "loss table");
    check_pair_table(ls, policy.probs.size(), "policy");
    const int A = ls.num_actions();

    ValueFunctions vf{std::vector<double>(ls.num_pairs(), 0.0),
                      std::vector<double>(ls.num_states(), 0.0)};
    for (int k = ls.horizon() - 1; k >= 0; --k) {
        const int next_begin = ls.layer_begin(k + 1);
        for (int s = ls.layer_begin(k); s < ls.layer_end(k); ++s) {
            double v = 0.0;
            for (int a = 0; a < A; ++a) {
                const auto row = kernel.row(s, a);
                double cont = 0.0;
                for (std::size_t j = 0; j < row.size(); ++j)
                    cont += row[j] * vf.v_values[next_begin + static_cast<int>(j)];
                const int p = ls.pair(s, a);
                vf.q_values[p] = loss[p] + cont;
                v += policy.probs[p] * vf.q_values[p];
            }
            vf.v_values[s] = v;
        }
    }
    return vf;
}

double inner(std::span<const double> q, std::span<const double> loss) {
    if (q.size() != loss.size()) throw StructuralError("inner product of mismatched tables");
    double sum = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) sum += q[i] * loss[i];
    return sum;
}

double flow_residual(const TransitionKernel& kernel, std::span<const double> q) {
    const auto& ls = kernel.structure();
    check_pair_table(ls, q.size(), "occupancy measure");
    const int A = ls.num_actions();

    // inflow[s] for every non-initial state; the initial state receives mass 1.
    std::vector<double> inflow(ls.num_states(), 0.0);
    inflow[ls.initial_state()] = 1.0;
    for (int s = 0; s < ls.terminal_state(); ++s) {
        const int next_begin = ls.layer_begin(ls.layer_of(s) + 1);
        for (int a = 0; a < A; ++a) {
            const double qsa = q[ls.pair(s, a)];
            const auto row = kernel.row(s, a);
            for (std::size_t j = 0; j < row.size(); ++j)
                inflow[next_begin + static_cast<int>(j)] += qsa * row[j];
        }
    }
    double worst = 0.0;
    for (int s = 0; s < ls.terminal_state(); ++s) {
        double out = 0.0;
        for (int a = 0; a < A; ++a) out += q[ls.pair(s, a)];
        worst = std::max(worst, std::abs(out - inflow[s]));
    }
    for (int k = 0; k < ls.horizon(); ++k) {
        double mass = 0.0;
        for (int s = ls.layer_begin(k); s < ls.layer_end(k); ++s)
            for (int a = 0; a < A; ++a) mass += q[ls.pair(s, a)];
        worst = std::max(worst, std::abs(mass - 1.0));
    }
    return worst;
}

void validate_occupancy(const TransitionKernel& kernel, const OccupancyMeasure& q, double tol) {
    for (double v : q.q)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw StructuralError("occupancy measure has a negative or non-finite entry");
    const double r = flow_residual(kernel, q.q);
    if (r > tol)
        throw StructuralError(fmt::format("occupancy measure violates flow by {:.3e}", r));
}

namespace {

// Backward DP with min over actions; returns Q per pair, V per state and argmins.
struct OptimalValues {
    std::vector<double> q_values;
    std::vector<double> v_values;
    std::vector<int> actions;
    std::vector<double> second_gap;  // second best minus best, per state
};

OptimalValues optimal_values(const LayeredMdp& mdp, std::span<const double> loss) {
    const auto& ls = mdp.layout();
    check_pair_table(ls, loss.size(), "loss table");
    const int A = ls.num_actions();
    OptimalValues out{std::vector<double>(ls.num_pairs(), 0.0),
                      std::vector<double>(ls.num_states(), 0.0),
                      std::vector<int>(ls.terminal_state(), 0),
                      std::vector<double>(ls.terminal_state(),
                                          std::numeric_limits<double>::infinity())};
    for (int k = ls.horizon() - 1; k >= 0; --k) {
        const int next_begin = ls.layer_begin(k + 1);
        for (int s = ls.layer_begin(k); s < ls.layer_end(k); ++s) {
            int best = 0;
            for (int a = 0; a < A; ++a) {
                const auto row = mdp.transition.row(s, a);
                double cont = 0.0;
                for (std::size_t j = 0; j < row.size(); ++j)
                    cont += row[j] * out.v_values[next_begin + static_cast<int>(j)];
                const int p = ls.pair(s, a);
                out.q_values[p] = loss[p] + cont;
                if (out.q_values[p] < out.q_values[ls.pair(s, best)]) best = a;
            }
            out.actions[s] = best;
            out.v_values[s] = out.q_values[ls.pair(s, best)];
            for (int a = 0; a < A; ++a)
                if (a != best)
                    out.second_gap[s] = std::min(out.second_gap[s],
                                                 out.q_values[ls.pair(s, a)] - out.v_values[s]);
        }
    }
    return out;
}

}  // namespace

HindsightSolution best_policy_in_hindsight(const LayeredMdp& mdp,
                                           std::span<const double> cumulative_loss) {
    for (double v : cumulative_loss)
        if (!std::isfinite(v)) throw StructuralError("cumulative loss must be finite");
    auto opt = optimal_values(mdp, cumulative_loss);
    auto policy = StochasticPolicy::deterministic(mdp.layout(), opt.actions);
    return {std::move(opt.actions), std::move(policy), opt.v_values[mdp.layout().initial_state()]};
}

GapInfo gap_function(const LayeredMdp& mdp, std::span<const double> mean_loss) {
    const auto& ls = mdp.layout();
    auto opt = optimal_values(mdp, mean_loss);
    for (int s = 0; s < ls.terminal_state(); ++s)
        if (ls.num_actions() > 1 && !(opt.second_gap[s] > 1e-9))
            throw ConfigError(fmt::format(
                "optimal action at state {} is not unique (gap {:.3e}); a unique pi* is required", s,
                opt.second_gap[s]));

    GapInfo info;
    info.gaps.assign(ls.num_pairs(), 0.0);
    info.min_gap = std::numeric_limits<double>::infinity();
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            const int p = ls.pair(s, a);
            info.gaps[p] = a == opt.actions[s] ? 0.0 : opt.q_values[p] - opt.v_values[s];
            if (a != opt.actions[s]) info.min_gap = std::min(info.min_gap, info.gaps[p]);
        }
    if (ls.num_actions() == 1) info.min_gap = 0.0;
    info.policy = StochasticPolicy::deterministic(ls, opt.actions);
    info.actions = std::move(opt.actions);
    return info;
}

}  // namespace bobw::mdp
