#pragma once

#include <memory>
#include <ostream>
#include <span>
#include <vector>

#include "bobw/environment.hpp"
#include "bobw/mdp.hpp"

namespace bobw::estimation {

/// ln(T |S| |A| / delta); throws ConfigError unless delta is in (0,1).
double log_iota(long long horizon_T, int num_states, int num_actions, double delta);

/**
 * Bernstein width of every successor of one (s,a) row:
 * min{ 2 sqrt(P(s') ln_iota / max(m,1)) + 14 ln_iota / (3 max(m,1)), 1 }.
 */
std::vector<double> confidence_width(long long count, std::span<const double> empirical_row,
                                     double delta, long long horizon_T, int num_states,
                                     int num_actions);

/// Same formula from a precomputed ln(iota).
void confidence_width_into(long long count, std::span<const double> empirical_row, double ln_iota,
                           std::span<double> out);

/**
 * Frozen per-epoch confidence set: empirical kernel, per-triple widths (same
 * flat layout as the kernel) and aggregate widths min{1, sum_s' B(s,a,s')}.
 */
struct ConfidenceSet {
    mdp::TransitionKernel center;
    std::vector<double> triple_width;
    std::vector<double> pair_width;
    std::vector<long long> counts;  // epoch-start visit counts m_i(s,a)

    std::span<const double> width_row(int s, int a) const {
        const auto& ls = center.structure();
        return {triple_width.data() + ls.row_offset(s, a), static_cast<std::size_t>(ls.row_size(s))};
    }
    /// Whether every |P(s'|s,a) - center(s'|s,a)| <= width.
    bool contains(const mdp::TransitionKernel& kernel) const;
};

using ConfidenceSetPtr = std::shared_ptr<const ConfidenceSet>;

struct EpochTraceEntry {
    int epoch = 0;
    long long start = 0;
    int trigger_state = -1;
    int trigger_action = -1;
    long long total_visits = 0;
};

/**
 * Visit counters and epoch-doubling schedule.
 *
 * The confidence set is rebuilt only at epoch boundaries from the counts at
 * that moment; live counts keep growing inside the epoch and only feed the
 * doubling trigger m_live(s,a) >= max{1, 2 m_start(s,a)}.
 */
class EpochState {
public:
    EpochState(mdp::StructurePtr structure, double delta, long long horizon_T);

    const mdp::LayerStructure& structure() const { return *structure_; }
    int epoch() const { return epoch_; }
    long long epoch_start() const { return epoch_start_; }
    double delta() const { return delta_; }
    double ln_iota() const { return ln_iota_; }

    /// Snapshot of the current epoch; identical pointer until the next rollover.
    const ConfidenceSetPtr& confidence() const { return confidence_; }
    const mdp::TransitionKernel& empirical() const { return confidence_->center; }

    long long live_count(int s, int a) const { return live_pair_[structure_->pair(s, a)]; }
    long long start_count(int s, int a) const { return start_pair_[structure_->pair(s, a)]; }
    long long live_count(int s, int a, int next) const;
    long long total_visits() const;

    /// Count the L transitions of episode t; returns true when a new epoch starts at t+1.
    bool observe_transition(const env::Trajectory& trajectory, long long t);

    const std::vector<EpochTraceEntry>& trace() const { return trace_; }

private:
    void rebuild();

    mdp::StructurePtr structure_;
    double delta_;
    long long horizon_T_;
    double ln_iota_;
    int epoch_ = 1;
    long long epoch_start_ = 1;
    std::vector<long long> live_pair_;
    std::vector<long long> live_triple_;
    std::vector<long long> start_pair_;
    ConfidenceSetPtr confidence_;
    std::vector<EpochTraceEntry> trace_;
};

/// The event that the true kernel lies in the current epoch's confidence set.
bool contains_true(const EpochState& state, const mdp::TransitionKernel& truth);

/// CSV with columns epoch,t_start,triggering_pair,total_visits.
void write_epoch_trace(std::ostream& out, const std::vector<EpochTraceEntry>& trace);

}  // namespace bobw::estimation
