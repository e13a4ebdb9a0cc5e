#include "bobw/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <fmt/os.h>

namespace bobw::harness {

namespace {

constexpr std::uint64_t kLossStream = 1;
constexpr std::uint64_t kTrajectoryStream = 2;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kMaxReportedViolations = 10;

std::uint64_t stream_id(int rep, std::uint64_t purpose) {
    return (static_cast<std::uint64_t>(rep) << 4) | purpose;
}

std::optional<mdp::GapInfo> gap_structure(const ExperimentConfig& config) {
    if (!config.losses.has_mean()) return std::nullopt;
    try {
        return mdp::gap_function(*config.mdp, config.losses.means);
    } catch (const ConfigError&) {
        return std::nullopt;  // ties in the mean: no unique pi*
    }
}

std::string world_label(const ExperimentConfig& config) {
    if (!config.world.empty()) return config.world;
    switch (config.losses.kind) {
    case env::LossKind::kIidStochastic: return "stochastic";
    case env::LossKind::kCorruptedIid: return "corrupted";
    case env::LossKind::kAdversarialScripted:
    case env::LossKind::kSwitchingAdversary: return "adversarial";
    }
    return "unknown";
}

}  // namespace

ReplicationResult run_replication(const ExperimentConfig& config, int rep, const RunOptions& options) {
    config.validate();
    const auto& world = *config.mdp;
    const auto& truth = world.transition;
    const auto& ls = world.layout();
    const int np = ls.num_pairs();
    const long long T = config.horizon_T;
    const bool audit = options.audit.value_or(config.audit);

    auto lc = config.learner_config();
    lc.compute_upper_occupancy = audit;
    const bool bandit = algo::is_bandit(lc.variant);
    const bool known = algo::is_known(lc.variant);
    algo::Learner learner(world.structure, lc);

    const env::RngStream loss_rng(config.seed, stream_id(rep, kLossStream));
    const env::RngStream traj_rng(config.seed, stream_id(rep, kTrajectoryStream));
    const auto mode = bandit ? env::FeedbackMode::kBandit : env::FeedbackMode::kFull;

    const auto gap = gap_structure(config);
    std::optional<mdp::OccupancyMeasure> q_star;
    if (gap) q_star = mdp::occupancy_of(truth, gap->policy);

    ReplicationResult out;
    out.rep = rep;
    out.reg_pistar = gap ? 0.0 : kNan;
    out.ledger = gap ? 0.0 : kNan;
    if (audit) {
        out.audit.emplace();
        out.audit->min_uob_ratio = std::numeric_limits<double>::infinity();
    }
    if (options.keep_rows) out.rows.reserve(static_cast<std::size_t>(T));

    std::vector<double> cumulative(np, 0.0);
    std::vector<double> tables;  // l_t per episode, only kept for the per-episode hindsight curve
    if (options.keep_rows) tables.reserve(static_cast<std::size_t>(T) * np);
    double v_sum = 0.0;

    for (long long t = 1; t <= T; ++t) {
        const mdp::StochasticPolicy policy = learner.begin_episode(t);
        const auto loss = env::next_loss(config.losses, t, loss_rng);
        const auto q_true = mdp::occupancy_of(truth, policy);
        const double exp_loss = mdp::inner(q_true.q, loss.values);
        v_sum += mdp::value_functions(truth, loss.values, policy).v_values[ls.initial_state()];

        auto rng = traj_rng.for_episode(static_cast<std::uint32_t>(t));
        const auto roll = env::rollout(world, policy, loss, mode, rng);
        double sampled = 0.0;
        for (int h = 0; h < roll.trajectory.length(); ++h)
            sampled += loss.values[ls.pair(roll.trajectory.states[h], roll.trajectory.actions[h])];

        const auto record = learner.end_episode(roll.trajectory, roll.feedback);
        const bool a_holds = known || record.confidence->contains(truth);

        for (int p = 0; p < np; ++p) cumulative[p] += loss.values[p];
        out.learner_loss += exp_loss;
        if (a_holds) ++out.a_episodes;
        else out.a_held = false;
        if (record.guard_triggered) ++out.guard_triggers;

        double ledger_inc = kNan;
        if (gap) {
            ledger_inc = gap_ledger_increment(*gap, q_true.q);
            out.ledger += ledger_inc;
            out.reg_pistar += exp_loss - mdp::inner(q_star->q, loss.values);
        }

        if (audit && !known) {
            auto& a = *out.audit;
            const auto& u = *record.upper_occupancy;
            const double floor = 1.0 / (ls.num_states() * static_cast<double>(t));
            for (int s = 0; s < ls.num_states(); ++s) {
                if (u.state[s] < floor) ++a.uob_lower_violations;
                a.min_uob_ratio = std::min(a.min_uob_ratio, u.state[s] * ls.num_states() * static_cast<double>(t));
            }
            if (a_holds) {
                ++a.audited_episodes;
                if (!uob::dominance_check(u, q_true)) ++a.dominance_violations;
                std::vector<std::pair<std::string, mdp::StochasticPolicy>> policies{{"pi_t", policy}};
                if (gap) policies.emplace_back("pi_star", gap->policy);
                const auto v = algo::optimism_audit(record, truth, loss.values, policies, bandit);
                a.optimism_violations += static_cast<long long>(v.size());
                for (const auto& item : v)
                    if (a.first_violations.size() < kMaxReportedViolations) a.first_violations.push_back(item);
            }
        }

        if (config.output.solver_diagnostics)
            out.solver_rows.push_back({static_cast<double>(t), static_cast<double>(record.solver_iterations),
                                       record.flow_residual, record.objective});

        if (options.keep_rows) {
            tables.insert(tables.end(), loss.values.begin(), loss.values.end());
            EpisodeRow row;
            row.rep = rep;
            row.t = t;
            row.epoch = record.epoch;
            row.eta = record.eta;
            row.learner_exp_loss = exp_loss;
            row.learner_sampled_loss = sampled;
            row.cum_reg_pistar = out.reg_pistar;
            row.ledger_increment = ledger_inc;
            row.a_holds = a_holds;
            out.rows.push_back(row);
        }
    }

    const auto hindsight = mdp::best_policy_in_hindsight(world, cumulative);
    out.hindsight_actions = hindsight.actions;
    const auto q_ring = mdp::occupancy_of(truth, hindsight.policy);
    out.reg_opt = out.learner_loss - mdp::inner(q_ring.q, cumulative);
    out.reg_opt_vrec =
        v_sum - mdp::value_functions(truth, cumulative, hindsight.policy).v_values[ls.initial_state()];

    if (options.keep_rows) {
        double cum = 0.0;
        for (std::size_t i = 0; i < out.rows.size(); ++i) {
            const std::span<const double> table(tables.data() + i * np, static_cast<std::size_t>(np));
            cum += out.rows[i].learner_exp_loss - mdp::inner(q_ring.q, table);
            out.rows[i].cum_reg_opt = cum;
        }
    }

    if (const auto* epochs = learner.epochs()) {
        out.epochs = epochs->epoch();
        out.epoch_trace = epochs->trace();
    } else {
        out.epoch_trace.push_back({1, 1, -1, -1, 0});
    }
    out.realized_corruption = config.losses.realized_corruption(T);
    return out;
}

RegretReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    RegretReport report;
    report.name = config.name;
    report.world = world_label(config);
    report.variant = algo::to_string(config.variant);
    report.horizon_T = config.horizon_T;
    report.seed = config.seed;
    report.replications.resize(static_cast<std::size_t>(config.replications));

    int threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, config.replications);

    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int rep = next++; rep < config.replications; rep = next++) {
            try {
                report.replications[rep] = run_replication(config, rep, options);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = config.replications;
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return report;
}

double gap_ledger_increment(const mdp::GapInfo& gap, std::span<const double> q) {
    double total = 0.0;
    for (std::size_t p = 0; p < q.size(); ++p) total += q[p] * gap.gaps[p];
    return total;
}

double condition_ledger(const ReplicationResult& result) {
    if (std::isnan(result.ledger))
        throw ConfigError("the gap ledger needs a stochastic world with a unique optimal policy");
    return result.ledger;
}

namespace {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) return r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

std::string pair_label(int s, int a) { return s < 0 ? std::string() : fmt::format("{}:{}", s, a); }

}  // namespace

std::vector<std::filesystem::path> write_report(const RegretReport& report, const OutputOptions& output,
                                                const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));

    std::vector<std::filesystem::path> written;
    auto open = [&](const std::string& name) {
        const auto path = dir / name;
        written.push_back(path);
        return fmt::output_file(path.string());
    };
    const auto& reps = report.replications;

    {
        auto f = open("episodes.csv");
        f.print("{}\n", kEpisodeColumns);
        for (const auto& r : reps)
            for (const auto& row : r.rows)
                f.print("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", row.rep, row.t, row.epoch,
                        row.eta, row.learner_exp_loss, row.learner_sampled_loss, row.cum_reg_opt,
                        row.cum_reg_pistar, row.ledger_increment, row.a_holds ? 1 : 0);
    }
    {
        auto f = open("summary.csv");
        f.print("rep,world,variant,T,epochs,A_held,A_episodes,reg_opt,reg_opt_vrec,reg_pistar,ledger,"
                "learner_loss,realized_corruption,guard_triggers,optimism_violations,uob_lower_violations,"
                "dominance_violations\n");
        for (const auto& r : reps) {
            const auto a = r.audit.value_or(AuditSummary{});
            f.print("{},{},{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{},{}\n", r.rep,
                    report.world, report.variant, report.horizon_T, r.epochs, r.a_held ? 1 : 0, r.a_episodes,
                    r.reg_opt, r.reg_opt_vrec, r.reg_pistar, r.ledger, r.learner_loss, r.realized_corruption,
                    r.guard_triggers, a.optimism_violations, a.uob_lower_violations, a.dominance_violations);
        }
    }
    const bool have_rows = !reps.empty() && !reps.front().rows.empty();
    if (have_rows) {
        auto f = open("aggregate.csv");
        f.print("t,n,mean_cum_reg_opt,std_cum_reg_opt,mean_cum_reg_pistar,std_cum_reg_pistar,mean_epoch\n");
        const std::size_t n = reps.front().rows.size();
        std::vector<double> opt(reps.size()), star(reps.size()), ep(reps.size());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t r = 0; r < reps.size(); ++r) {
                opt[r] = reps[r].rows[i].cum_reg_opt;
                star[r] = reps[r].rows[i].cum_reg_pistar;
                ep[r] = reps[r].rows[i].epoch;
            }
            const auto o = mean_std(opt);
            const auto s = mean_std(star);
            f.print("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", reps.front().rows[i].t, reps.size(), o.mean,
                    o.std, s.mean, s.std, mean_std(ep).mean);
        }
    }
    if (output.epoch_trace)
        for (const auto& r : reps) {
            auto f = open(fmt::format("epochs_rep{}.csv", r.rep));
            f.print("epoch,t_start,triggering_pair,total_visits\n");
            for (const auto& e : r.epoch_trace)
                f.print("{},{},{},{}\n", e.epoch, e.start, pair_label(e.trigger_state, e.trigger_action),
                        e.total_visits);
        }
    if (output.solver_diagnostics)
        for (const auto& r : reps) {
            auto f = open(fmt::format("solver_rep{}.csv", r.rep));
            f.print("t,iterations,flow_residual,objective\n");
            for (const auto& s : r.solver_rows)
                f.print("{},{},{:.17g},{:.17g}\n", static_cast<long long>(s[0]), static_cast<int>(s[1]), s[2], s[3]);
        }

    nlohmann::json j;
    j["name"] = report.name;
    j["world"] = report.world;
    j["variant"] = report.variant;
    j["T"] = report.horizon_T;
    j["seed"] = report.seed;
    j["reps"] = reps.size();
    std::vector<double> opt, star, epochs;
    nlohmann::json per_rep = nlohmann::json::array();
    for (const auto& r : reps) {
        opt.push_back(r.reg_opt);
        star.push_back(r.reg_pistar);
        epochs.push_back(r.epochs);
        nlohmann::json e = {{"rep", r.rep},
                            {"epochs", r.epochs},
                            {"A_held", r.a_held},
                            {"reg_opt", r.reg_opt},
                            {"hindsight_actions", r.hindsight_actions},
                            {"guard_triggers", r.guard_triggers}};
        if (!std::isnan(r.reg_pistar)) {
            e["reg_pistar"] = r.reg_pistar;
            e["ledger"] = r.ledger;
        }
        if (r.audit) {
            nlohmann::json v = nlohmann::json::array();
            for (const auto& x : r.audit->first_violations)
                v.push_back({{"t", x.t}, {"policy", x.policy}, {"state", x.state}, {"action", x.action},
                             {"estimated", x.estimated}, {"truth", x.truth}});
            e["audit"] = {{"optimism_violations", r.audit->optimism_violations},
                          {"uob_lower_violations", r.audit->uob_lower_violations},
                          {"dominance_violations", r.audit->dominance_violations},
                          {"audited_episodes", r.audit->audited_episodes},
                          {"first_violations", v}};
        }
        per_rep.push_back(std::move(e));
    }
    const auto o = mean_std(opt);
    j["reg_opt"] = {{"mean", o.mean}, {"std", o.std}};
    if (!reps.empty() && !std::isnan(reps.front().reg_pistar)) {
        const auto s = mean_std(star);
        j["reg_pistar"] = {{"mean", s.mean}, {"std", s.std}};
    }
    j["epochs"] = {{"mean", mean_std(epochs).mean}};
    j["replications"] = std::move(per_rep);
    j["cum_reg_opt_note"] = "per-episode cum_reg_opt uses the hindsight policy of the final episode";
    {
        auto f = open("report.json");
        f.print("{}\n", j.dump(2));
    }
    return written;
}

}  // namespace bobw::harness
