#include "bobw/transition_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace bobw::estimation {

double log_iota(long long horizon_T, int num_states, int num_actions, double delta) {
    if (!(delta > 0.0 && delta < 1.0))
        throw ConfigError(fmt::format("confidence parameter delta = {} must lie in (0,1)", delta));
    if (horizon_T < 1) throw ConfigError("T must be at least 1");
    return std::log(static_cast<double>(horizon_T)) + std::log(static_cast<double>(num_states)) +
           std::log(static_cast<double>(num_actions)) - std::log(delta);
}

void confidence_width_into(long long count, std::span<const double> empirical_row, double ln_iota,
                           std::span<double> out) {
    const double m = static_cast<double>(std::max<long long>(count, 1));
    const double additive = 14.0 * ln_iota / (3.0 * m);
    for (std::size_t j = 0; j < empirical_row.size(); ++j)
        out[j] = std::min(2.0 * std::sqrt(empirical_row[j] * ln_iota / m) + additive, 1.0);
}

std::vector<double> confidence_width(long long count, std::span<const double> empirical_row,
                                     double delta, long long horizon_T, int num_states,
                                     int num_actions) {
    if (count < 0) throw ConfigError("visit count must be non-negative");
    const double ln_iota = log_iota(horizon_T, num_states, num_actions, delta);
    std::vector<double> out(empirical_row.size());
    confidence_width_into(count, empirical_row, ln_iota, out);
    return out;
}

bool ConfidenceSet::contains(const mdp::TransitionKernel& kernel) const {
    const auto& truth = kernel.values();
    const auto& c = center.values();
    if (truth.size() != c.size()) throw StructuralError("kernel shape does not match the confidence set");
    for (std::size_t i = 0; i < c.size(); ++i)
        if (std::abs(truth[i] - c[i]) > triple_width[i]) return false;
    return true;
}

EpochState::EpochState(mdp::StructurePtr structure, double delta, long long horizon_T)
    : structure_(std::move(structure)), delta_(delta), horizon_T_(horizon_T),
      ln_iota_(log_iota(horizon_T, structure_->num_states(), structure_->num_actions(), delta)),
      live_pair_(structure_->num_pairs(), 0), live_triple_(structure_->kernel_size(), 0),
      start_pair_(structure_->num_pairs(), 0) {
    rebuild();
    trace_.push_back({1, 1, -1, -1, 0});
}

long long EpochState::live_count(int s, int a, int next) const {
    const auto& ls = *structure_;
    return live_triple_[ls.row_offset(s, a) + (next - ls.layer_begin(ls.layer_of(s) + 1))];
}

long long EpochState::total_visits() const {
    return std::accumulate(live_pair_.begin(), live_pair_.end(), 0LL);
}

void EpochState::rebuild() {
    const auto& ls = *structure_;
    start_pair_ = live_pair_;

    std::vector<double> center(ls.kernel_size());
    std::vector<double> widths(ls.kernel_size());
    std::vector<double> pair_width(ls.num_pairs());
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            const auto offset = ls.row_offset(s, a);
            const int n = ls.row_size(s);
            const long long m = live_pair_[ls.pair(s, a)];
            for (int j = 0; j < n; ++j)
                center[offset + j] = m > 0 ? static_cast<double>(live_triple_[offset + j]) / m : 1.0 / n;
            const std::span<const double> row(center.data() + offset, static_cast<std::size_t>(n));
            confidence_width_into(m, row, ln_iota_,
                                  std::span<double>(widths.data() + offset, static_cast<std::size_t>(n)));
            double sum = 0.0;
            for (int j = 0; j < n; ++j) sum += widths[offset + j];
            pair_width[ls.pair(s, a)] = std::min(1.0, sum);
        }
    confidence_ = std::make_shared<const ConfidenceSet>(ConfidenceSet{
        mdp::TransitionKernel(structure_, std::move(center)), std::move(widths),
        std::move(pair_width), start_pair_});
}

bool EpochState::observe_transition(const env::Trajectory& trajectory, long long t) {
    const auto& ls = *structure_;
    if (trajectory.length() != ls.horizon() ||
        static_cast<int>(trajectory.states.size()) != ls.horizon() + 1)
        throw StructuralError("trajectory length does not match the horizon");

    for (int k = 0; k < ls.horizon(); ++k) {
        const int s = trajectory.states[k];
        const int a = trajectory.actions[k];
        const int next = trajectory.states[k + 1];
        if (ls.layer_of(s) != k || ls.layer_of(next) != k + 1)
            throw StructuralError("trajectory is not layer-consistent");
        ++live_pair_[ls.pair(s, a)];
        ++live_triple_[ls.row_offset(s, a) + (next - ls.layer_begin(k + 1))];
    }

    for (int k = 0; k < ls.horizon(); ++k) {
        const int p = ls.pair(trajectory.states[k], trajectory.actions[k]);
        if (live_pair_[p] >= std::max<long long>(1, 2 * start_pair_[p])) {
            ++epoch_;
            epoch_start_ = t + 1;
            trace_.push_back({epoch_, epoch_start_, trajectory.states[k], trajectory.actions[k],
                              total_visits()});
            rebuild();
            return true;
        }
    }
    return false;
}

bool contains_true(const EpochState& state, const mdp::TransitionKernel& truth) {
    return state.confidence()->contains(truth);
}

void write_epoch_trace(std::ostream& out, const std::vector<EpochTraceEntry>& trace) {
    out << "epoch,t_start,triggering_pair,total_visits\n";
    for (const auto& e : trace)
        fmt::print(out, "{},{},{}:{},{}\n", e.epoch, e.start, e.trigger_state, e.trigger_action,
                   e.total_visits);
}

}  // namespace bobw::estimation
