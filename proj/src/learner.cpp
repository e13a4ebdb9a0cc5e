#include "bobw/learner.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace bobw::algo {

Variant parse_variant(const std::string& name) {
    if (name == "unknown_full") return Variant::kUnknownFull;
    if (name == "unknown_bandit") return Variant::kUnknownBandit;
    if (name == "known_full") return Variant::kKnownFull;
    if (name == "known_bandit") return Variant::kKnownBandit;
    throw ConfigError(fmt::format("unknown learner variant '{}'", name));
}

std::string to_string(Variant v) {
    switch (v) {
    case Variant::kUnknownFull: return "unknown_full";
    case Variant::kUnknownBandit: return "unknown_bandit";
    case Variant::kKnownFull: return "known_full";
    case Variant::kKnownBandit: return "known_bandit";
    }
    return "?";
}

bool is_bandit(Variant v) { return v == Variant::kUnknownBandit || v == Variant::kKnownBandit; }
bool is_known(Variant v) { return v == Variant::kKnownFull || v == Variant::kKnownBandit; }

double LearnerConfig::effective_delta() const {
    if (delta) return *delta;
    const double T = static_cast<double>(horizon_T);
    return is_bandit(variant) ? 1.0 / (T * T * T) : 1.0 / (T * T);
}

ftrl::RegularizerSpec LearnerConfig::regularizer(const mdp::LayerStructure& ls) const {
    switch (variant) {
    case Variant::kUnknownFull: return ftrl::RegularizerSpec::shannon_unknown(ls);
    case Variant::kUnknownBandit: return ftrl::RegularizerSpec::tsallis_unknown(ls);
    case Variant::kKnownFull: return ftrl::RegularizerSpec::shannon_known(ls);
    case Variant::kKnownBandit: return ftrl::RegularizerSpec::tsallis_known(ls, gamma);
    }
    throw ConfigError("unhandled learner variant");
}

std::vector<double> AdjustedLoss::value() const {
    std::vector<double> out(observed.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = observed[i] - bonus[i];
    return out;
}

namespace {

std::shared_ptr<const mdp::TransitionKernel> center_of(const estimation::ConfidenceSetPtr& set) {
    return {set, &set->center};
}

}  // namespace

Learner::Learner(mdp::StructurePtr structure, LearnerConfig config)
    : structure_(std::move(structure)), config_(std::move(config)) {
    if (config_.horizon_T < 1) throw ConfigError("T must be at least 1");
    spec_ = config_.regularizer(*structure_);
    if (is_known(config_.variant)) {
        if (!config_.known_transition)
            throw ConfigError("known-transition learners need the transition kernel");
        if (!(config_.known_transition->structure() == *structure_))
            throw StructuralError("known transition does not match the layout");
        kernel_ = config_.known_transition;
    } else {
        epochs_.emplace(structure_, config_.effective_delta(), config_.horizon_T);
        kernel_ = center_of(epochs_->confidence());
    }
    restart_ftrl(1);
}

void Learner::restart_ftrl(long long start) { ftrl_.emplace(kernel_, spec_, start); }

int Learner::epoch() const { return epochs_ ? epochs_->epoch() : 1; }
long long Learner::epoch_start() const { return epochs_ ? epochs_->epoch_start() : 1; }

const mdp::StochasticPolicy& Learner::begin_episode(long long t) {
    if (t < 1 || t > config_.horizon_T) throw ConfigError(fmt::format("episode {} outside [1, T]", t));
    t_ = t;
    eta_ = ftrl_->eta(t);
    solve_ = ftrl_->solve(t, config_.solver);
    policy_ = mdp::policy_from_occupancy(*structure_, solve_.q);
    return policy_;
}

EpisodeRecord Learner::end_episode(const env::Trajectory& trajectory,
                                   const env::EpisodeFeedback& feedback) {
    const auto& ls = *structure_;
    const int np = ls.num_pairs();
    const bool bandit = is_bandit(config_.variant);
    const bool known = is_known(config_.variant);

    EpisodeRecord rec;
    rec.t = t_;
    rec.epoch = epoch();
    rec.epoch_start = epoch_start();
    rec.eta = eta_;
    rec.q_hat = solve_.q;
    rec.policy = policy_;
    rec.kernel = kernel_;
    rec.solver_iterations = solve_.iterations;
    rec.flow_residual = solve_.flow_residual;
    rec.objective = solve_.objective;
    if (epochs_) rec.confidence = epochs_->confidence();

    if (!known && (bandit || config_.compute_upper_occupancy))
        rec.upper_occupancy = uob::upper_occupancy(*rec.confidence, policy_);

    rec.loss_estimate.observed.assign(np, 0.0);
    rec.loss_estimate.bonus.assign(np, 0.0);
    if (bandit) {
        if (feedback.mode != env::FeedbackMode::kBandit || feedback.visited.size() != static_cast<std::size_t>(ls.horizon()))
            throw StructuralError("bandit learner needs one observed loss per layer");
        if (known) {
            rec.denominator = solve_.q.q;
        } else {
            rec.denominator = rec.upper_occupancy->pair;
            const double floor = 1.0 / (ls.num_states() * static_cast<double>(t_) * 10.0);
            for (double& u : rec.denominator)
                if (u < floor) {
                    u = floor;
                    rec.guard_triggered = true;
                }
        }
        for (const auto& obs : feedback.visited) {
            const int p = ls.pair(obs.state, obs.action);
            rec.loss_estimate.observed[p] = obs.loss / rec.denominator[p];
        }
    } else {
        if (feedback.mode != env::FeedbackMode::kFull)
            throw StructuralError("full-information learner needs the whole loss table");
        rec.loss_estimate.observed = feedback.full.values;
    }
    if (!known) {
        const auto& width = rec.confidence->pair_width;
        for (int p = 0; p < np; ++p) rec.loss_estimate.bonus[p] = ls.horizon() * width[p];
    }

    const auto adjusted = rec.loss_estimate.value();
    if (spec_.schedule == ftrl::EtaSchedule::kShannonAdaptive) {
        rec.m_increment = ftrl::shannon_increment(*kernel_, solve_.q.q, adjusted, policy_);
        ftrl_->add_m(rec.m_increment);
    }
    ftrl_->accumulate(adjusted);

    if (epochs_) {
        rec.rollover = epochs_->observe_transition(trajectory, t_);
        if (rec.rollover) {
            kernel_ = center_of(epochs_->confidence());
            restart_ftrl(t_ + 1);
        }
    }
    return rec;
}

std::vector<double> expected_adjusted_loss(const EpisodeRecord& record, std::span<const double> q_true,
                                           std::span<const double> loss) {
    std::vector<double> out(loss.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = q_true[i] / record.denominator[i] * loss[i] - record.loss_estimate.bonus[i];
    return out;
}

std::vector<OptimismViolation> optimism_audit(
    const EpisodeRecord& record, const mdp::TransitionKernel& truth, std::span<const double> true_loss,
    const std::vector<std::pair<std::string, mdp::StochasticPolicy>>& policies, bool bandit) {
    std::vector<OptimismViolation> out;
    if (record.confidence && !record.confidence->contains(truth)) return out;
    const auto& ls = truth.structure();

    std::vector<double> estimate;
    if (bandit) {
        const auto q_true = mdp::occupancy_of(truth, record.policy);
        estimate = expected_adjusted_loss(record, q_true.q, true_loss);
    } else {
        estimate = record.loss_estimate.value();
    }
    for (const auto& [name, pi] : policies) {
        const auto est = mdp::value_functions(*record.kernel, estimate, pi);
        const auto real = mdp::value_functions(truth, true_loss, pi);
        for (int s = 0; s < ls.terminal_state(); ++s)
            for (int a = 0; a < ls.num_actions(); ++a) {
                const int p = ls.pair(s, a);
                if (est.q_values[p] > real.q_values[p] + 1e-9)
                    out.push_back({record.t, name, s, a, est.q_values[p], real.q_values[p]});
            }
    }
    return out;
}

}  // namespace bobw::algo
