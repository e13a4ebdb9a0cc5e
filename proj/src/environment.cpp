#include "bobw/environment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace bobw::env {

LossGenerator LossGenerator::iid(std::vector<double> means, IidMode mode) {
    LossGenerator g;
    g.kind = LossKind::kIidStochastic;
    g.mode = mode;
    g.means = std::move(means);
    return g;
}

LossGenerator LossGenerator::scripted(std::vector<std::vector<double>> tables) {
    LossGenerator g;
    g.kind = LossKind::kAdversarialScripted;
    g.mode = IidMode::kMean;
    g.script = std::move(tables);
    return g;
}

LossGenerator LossGenerator::corrupted(std::vector<double> means, IidMode mode, double budget,
                                       std::vector<long long> episodes, std::vector<double> table) {
    LossGenerator g;
    g.kind = LossKind::kCorruptedIid;
    g.mode = mode;
    g.means = std::move(means);
    g.corruption_budget = budget;
    g.corruption_episodes = std::move(episodes);
    std::sort(g.corruption_episodes.begin(), g.corruption_episodes.end());
    g.corruption_table = std::move(table);
    return g;
}

LossGenerator LossGenerator::switching(std::vector<double> first, std::vector<double> second,
                                       long long block_length, IidMode mode) {
    LossGenerator g;
    g.kind = LossKind::kSwitchingAdversary;
    g.mode = mode;
    g.means = std::move(first);
    g.alternate_means = std::move(second);
    g.block_length = block_length;
    return g;
}

namespace {

void check_table(const mdp::LayerStructure& ls, const std::vector<double>& table, const char* what) {
    if (static_cast<int>(table.size()) != ls.num_pairs())
        throw ConfigError(fmt::format("{} has {} entries, expected {}", what, table.size(),
                                      ls.num_pairs()));
    for (double v : table)
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError(fmt::format("{} entry {} outside [0,1]", what, v));
}

double sup_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

void LossGenerator::validate(const mdp::LayerStructure& ls, long long horizon_T) const {
    if (horizon_T < 1) throw ConfigError("T must be at least 1");
    switch (kind) {
    case LossKind::kIidStochastic:
        check_table(ls, means, "mean table");
        break;
    case LossKind::kAdversarialScripted:
        if (static_cast<long long>(script.size()) < horizon_T)
            throw ConfigError(fmt::format("loss script has {} tables but T = {}", script.size(),
                                          horizon_T));
        for (const auto& table : script) check_table(ls, table, "scripted loss table");
        break;
    case LossKind::kCorruptedIid: {
        check_table(ls, means, "mean table");
        if (!corruption_episodes.empty()) check_table(ls, corruption_table, "corruption table");
        if (corruption_budget < 0.0) throw ConfigError("corruption budget must be non-negative");
        for (long long t : corruption_episodes)
            if (t < 1) throw ConfigError("corruption episodes are 1-based");
        const double used = realized_corruption(std::numeric_limits<long long>::max());
        if (used > corruption_budget)
            throw ConfigError(fmt::format("corruption schedule uses {} but the budget is {}", used,
                                          corruption_budget));
        break;
    }
    case LossKind::kSwitchingAdversary:
        check_table(ls, means, "first switching table");
        check_table(ls, alternate_means, "second switching table");
        if (block_length < 1) throw ConfigError("switching block length must be positive");
        break;
    }
}

double LossGenerator::corruption_at(long long t) const {
    if (kind != LossKind::kCorruptedIid) return 0.0;
    if (!std::binary_search(corruption_episodes.begin(), corruption_episodes.end(), t)) return 0.0;
    return sup_distance(corruption_table, means);
}

double LossGenerator::realized_corruption(long long horizon_T) const {
    if (kind != LossKind::kCorruptedIid) return 0.0;
    double total = 0.0;
    long long previous = 0;
    for (long long t : corruption_episodes) {
        if (t > horizon_T) break;
        if (t == previous) continue;
        total += sup_distance(corruption_table, means);
        previous = t;
    }
    return total;
}

namespace {

std::vector<double> realise(const std::vector<double>& means, IidMode mode, RngStream& rng) {
    if (mode == IidMode::kMean) return means;
    std::vector<double> out(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) out[i] = rng.bernoulli(means[i]) ? 1.0 : 0.0;
    return out;
}

}  // namespace

mdp::LossFunction next_loss(const LossGenerator& gen, long long t, const RngStream& rng) {
    if (t < 1) throw ConfigError("episodes are 1-based");
    RngStream local = rng.for_episode(static_cast<std::uint32_t>(t));
    mdp::LossFunction loss;
    loss.range = mdp::LossRange::kTrue;
    switch (gen.kind) {
    case LossKind::kIidStochastic:
        loss.values = realise(gen.means, gen.mode, local);
        break;
    case LossKind::kAdversarialScripted:
        if (t > static_cast<long long>(gen.script.size()))
            throw ConfigError(fmt::format("loss script exhausted at episode {}", t));
        loss.values = gen.script[static_cast<std::size_t>(t - 1)];
        break;
    case LossKind::kCorruptedIid:
        // The baseline draw always happens so both worlds share one stream.
        loss.values = realise(gen.means, gen.mode, local);
        if (std::binary_search(gen.corruption_episodes.begin(), gen.corruption_episodes.end(), t))
            loss.values = gen.corruption_table;
        break;
    case LossKind::kSwitchingAdversary: {
        const bool second = ((t - 1) / gen.block_length) % 2 == 1;
        loss.values = realise(second ? gen.alternate_means : gen.means, gen.mode, local);
        break;
    }
    }
    return loss;
}

RolloutResult rollout(const mdp::LayeredMdp& mdp, const mdp::StochasticPolicy& policy,
                      const mdp::LossFunction& loss, FeedbackMode mode, RngStream& rng) {
    const auto& ls = mdp.layout();
    const int A = ls.num_actions();
    RolloutResult out;
    out.trajectory.states.reserve(ls.horizon() + 1);
    out.trajectory.actions.reserve(ls.horizon());
    out.feedback.mode = mode;

    int s = ls.initial_state();
    out.trajectory.states.push_back(s);
    for (int k = 0; k < ls.horizon(); ++k) {
        const std::span<const double> row(policy.probs.data() + ls.pair(s, 0),
                                          static_cast<std::size_t>(A));
        const int a = rng.categorical(row);
        const int next = ls.layer_begin(k + 1) + rng.categorical(mdp.transition.row(s, a));
        out.trajectory.actions.push_back(a);
        out.trajectory.states.push_back(next);
        if (mode == FeedbackMode::kBandit)
            out.feedback.visited.push_back({s, a, loss.values[ls.pair(s, a)]});
        s = next;
    }
    if (mode == FeedbackMode::kFull) out.feedback.full = loss;
    return out;
}

mdp::LayeredMdp random_mdp(std::vector<int> layer_sizes, int num_actions, RngStream rng) {
    auto structure = std::make_shared<const mdp::LayerStructure>(std::move(layer_sizes), num_actions);
    std::vector<double> values(structure->kernel_size());
    for (int s = 0; s < structure->terminal_state(); ++s)
        for (int a = 0; a < num_actions; ++a) {
            const auto offset = structure->row_offset(s, a);
            const int n = structure->row_size(s);
            double total = 0.0;
            for (int j = 0; j < n; ++j) {
                const double w = -std::log1p(-rng.uniform());
                values[offset + j] = w;
                total += w;
            }
            for (int j = 0; j < n; ++j) values[offset + j] /= total;
        }
    mdp::TransitionKernel kernel(structure, std::move(values));
    kernel.validate();
    return mdp::LayeredMdp(std::move(kernel));
}

std::vector<double> means_with_gaps(const mdp::LayeredMdp& mdp, const std::vector<int>& optimal_actions,
                                    double min_gap, double max_gap, RngStream rng) {
    const auto& ls = mdp.layout();
    const int A = ls.num_actions();
    if (static_cast<int>(optimal_actions.size()) != ls.terminal_state())
        throw ConfigError("need one optimal action per non-terminal state");
    if (!(min_gap > 0.0 && max_gap >= min_gap && max_gap < 1.0))
        throw ConfigError("gaps must satisfy 0 < min_gap <= max_gap < 1");

    std::vector<double> means(ls.num_pairs(), 0.0);
    std::vector<double> v_star(ls.num_states(), 0.0);
    bool first_suboptimal = true;
    for (int k = ls.horizon() - 1; k >= 0; --k) {
        const int next_begin = ls.layer_begin(k + 1);
        for (int s = ls.layer_begin(k); s < ls.layer_end(k); ++s) {
            std::vector<double> cont(A, 0.0);
            for (int a = 0; a < A; ++a) {
                const auto row = mdp.transition.row(s, a);
                for (std::size_t j = 0; j < row.size(); ++j)
                    cont[a] += row[j] * v_star[next_begin + static_cast<int>(j)];
            }
            const int best = optimal_actions[s];
            std::vector<double> gap(A, 0.0);
            // Feasible interval for the optimal loss so every suboptimal loss stays in [0,1].
            double lo = 0.0, hi = 1.0;
            for (int a = 0; a < A; ++a) {
                if (a == best) continue;
                gap[a] = first_suboptimal ? min_gap : min_gap + (max_gap - min_gap) * rng.uniform();
                first_suboptimal = false;
                const double shift = gap[a] + cont[best] - cont[a];
                lo = std::max(lo, -shift);
                hi = std::min(hi, 1.0 - shift);
            }
            if (lo > hi)
                throw ConfigError(fmt::format("no loss table in [0,1] realises the gaps at state {}", s));
            const double opt_loss = lo + (hi - lo) * rng.uniform();
            means[ls.pair(s, best)] = opt_loss;
            v_star[s] = opt_loss + cont[best];
            for (int a = 0; a < A; ++a)
                if (a != best)
                    means[ls.pair(s, a)] =
                        std::clamp(opt_loss + gap[a] + cont[best] - cont[a], 0.0, 1.0);
        }
    }
    return means;
}

}  // namespace bobw::env
