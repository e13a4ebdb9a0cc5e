// Acceptance suite: one PASS/FAIL line per criterion. Tolerances, sample sizes
// and seeds are fixed here and must not be tuned per run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "bobw/config.hpp"
#include "bobw/harness.hpp"
#include "certify.hpp"
#include "oracles.hpp"

using namespace bobw;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
    std::vector<std::string> notes;
};

// Reference instance: layers (1,2,1), two actions, random kernel, min gap 0.2.
std::shared_ptr<const mdp::LayeredMdp> reference_mdp() {
    return std::make_shared<const mdp::LayeredMdp>(env::random_mdp({1, 2, 1}, 2, env::RngStream(11, 0x3d9)));
}

std::vector<double> reference_means(const mdp::LayeredMdp& m) {
    return env::means_with_gaps(m, {0, 1, 0}, 0.2, 0.4, env::RngStream(3, 0x6a9));
}

// Two mirrored tables: the better action at s is s % 2 in the first and the
// other one in the second, so no action dominates over a long horizon.
std::pair<std::vector<double>, std::vector<double>> switching_tables(const mdp::LayerStructure& ls) {
    std::vector<double> a(ls.num_pairs()), b(ls.num_pairs());
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int x = 0; x < ls.num_actions(); ++x) {
            const bool good = x == s % 2;
            a[ls.pair(s, x)] = good ? 0.4 : 0.6;
            b[ls.pair(s, x)] = good ? 0.6 : 0.4;
        }
    return {a, b};
}

constexpr long long kSwitchBlock = 16;

harness::ExperimentConfig make_config(std::shared_ptr<const mdp::LayeredMdp> m, env::LossGenerator losses,
                                      algo::Variant v, long long T, int reps, std::uint64_t seed) {
    harness::ExperimentConfig c;
    c.mdp = std::move(m);
    c.losses = std::move(losses);
    c.variant = v;
    c.horizon_T = T;
    c.replications = reps;
    c.seed = seed;
    c.threads = 0;
    return c;
}

harness::RunOptions summary_only(std::optional<bool> audit = std::nullopt) { return {false, audit}; }

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

// ---------------------------------------------------------------------------

Verdict epoch_bound() {
    constexpr long long T = 10000;
    struct Case {
        std::vector<int> layers;
        int actions;
        bool adversarial;
        algo::Variant variant;
    };
    const std::vector<Case> cases{
        {{1, 2, 1}, 2, false, algo::Variant::kUnknownFull},  {{1, 2, 1}, 2, true, algo::Variant::kUnknownFull},
        {{1, 2, 1}, 2, false, algo::Variant::kUnknownBandit}, {{1, 2, 1}, 2, true, algo::Variant::kUnknownBandit},
        {{1, 3, 3, 1}, 3, false, algo::Variant::kUnknownFull}, {{1, 3, 2, 1}, 2, true, algo::Variant::kUnknownBandit},
    };
    Verdict v{true, {}, {}};
    double worst = 0.0;
    int runs = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        auto m = std::make_shared<const mdp::LayeredMdp>(env::random_mdp(c.layers, c.actions, env::RngStream(40 + i, 0x3d9)));
        const auto& ls = m->layout();
        env::LossGenerator losses;
        if (c.adversarial) {
            auto [a, b] = switching_tables(ls);
            losses = env::LossGenerator::switching(a, b, kSwitchBlock, env::IidMode::kBernoulli);
        } else {
            std::vector<double> means(ls.num_pairs());
            std::mt19937_64 gen(i);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (double& x : means) x = u(gen);
            losses = env::LossGenerator::iid(means, env::IidMode::kBernoulli);
        }
        const auto report = harness::run_experiment(make_config(m, losses, c.variant, T, 3, 500 + i), summary_only());
        const double bound = 4.0 * ls.num_states() * ls.num_actions() * (std::log2(double(T)) + 1.0);
        for (const auto& r : report.replications) {
            ++runs;
            worst = std::max(worst, r.epochs / bound);
            if (r.epochs > bound) v.pass = false;
        }
        v.notes.push_back(fmt::format("layers={} A={} {} {}: epochs={} bound={:.0f}", fmt::join(c.layers, "-"),
                                      c.actions, c.adversarial ? "adversarial" : "stochastic",
                                      algo::to_string(c.variant), report.replications.front().epochs, bound));
    }
    v.detail = fmt::format("{} runs at T=10^4, max N/bound = {:.3f} (required <= 1)", runs, worst);
    return v;
}

Verdict confidence_coverage() {
    constexpr int reps = 200;
    constexpr double delta = 0.05;
    constexpr double threshold = 1.0 - 4.0 * delta - 0.05;
    auto m = reference_mdp();
    auto c = make_config(m, env::LossGenerator::iid(reference_means(*m), env::IidMode::kBernoulli),
                         algo::Variant::kUnknownFull, 2000, reps, 2024);
    c.delta = delta;
    const auto report = harness::run_experiment(c, summary_only());
    int held = 0;
    for (const auto& r : report.replications) held += r.a_held;
    const double frac = held / double(reps);
    return {frac >= threshold, fmt::format("P(A) = {}/{} = {:.3f} (required >= {:.2f})", held, reps, frac, threshold), {}};
}

struct AuditTotals {
    long long optimism = 0, lower = 0, dominance = 0, audited = 0, episodes = 0;
    double min_ratio = INFINITY;
};

AuditTotals audited_runs(algo::Variant variant, std::vector<std::string>& notes) {
    constexpr int reps = 50;
    constexpr long long T = 2000;
    auto m = reference_mdp();
    auto c = make_config(m, env::LossGenerator::iid(reference_means(*m), env::IidMode::kBernoulli), variant, T, reps,
                         variant == algo::Variant::kUnknownFull ? 31 : 32);
    const auto report = harness::run_experiment(c, summary_only(true));
    AuditTotals t;
    for (const auto& r : report.replications) {
        const auto& a = *r.audit;
        t.optimism += a.optimism_violations;
        t.lower += a.uob_lower_violations;
        t.dominance += a.dominance_violations;
        t.audited += a.audited_episodes;
        t.episodes += T;
        t.min_ratio = std::min(t.min_ratio, a.min_uob_ratio);
        for (const auto& x : a.first_violations)
            if (notes.size() < 5)
                notes.push_back(fmt::format("violation t={} {} ({},{}): {:.6g} > {:.6g}", x.t, x.policy, x.state,
                                            x.action, x.estimated, x.truth));
    }
    notes.push_back(fmt::format("{}: {} reps x T={}, audited {} of {} episodes, min u|S|t = {:.3f}",
                                algo::to_string(variant), reps, T, t.audited, t.episodes, t.min_ratio));
    return t;
}

Verdict optimism_audit() {
    Verdict v;
    long long total = 0, audited = 0;
    for (auto variant : {algo::Variant::kUnknownFull, algo::Variant::kUnknownBandit}) {
        const auto t = audited_runs(variant, v.notes);
        total += t.optimism;
        audited += t.audited;
    }
    v.pass = total == 0 && audited > 0;
    v.detail = fmt::format("{} violations of Q_hat <= Q + 1e-9 over {} audited episodes", total, audited);
    return v;
}

Verdict uob_guarantees() {
    Verdict v;
    long long lower = 0, dominance = 0, audited = 0;
    for (auto variant : {algo::Variant::kUnknownFull, algo::Variant::kUnknownBandit}) {
        const auto t = audited_runs(variant, v.notes);
        lower += t.lower;
        dominance += t.dominance;
        audited += t.audited;
    }
    v.pass = lower == 0 && dominance == 0 && audited > 0;
    v.detail = fmt::format("u(s) < 1/(|S|t): {}; u(s,a) < q(s,a) - 1e-9 under A: {} ({} audited episodes)", lower,
                           dominance, audited);
    return v;
}

Verdict ftrl_certification() {
    constexpr double objective_tol = 1e-6, residual_tol = 1e-10, closed_form_tol = 1e-10;
    Verdict v{true, {}, {}};
    for (bool shannon : {true, false}) {
        const auto c = oracle::certify_ftrl(shannon, 50, 2024);
        const bool ok = c.failures == 0 && c.max_objective_gap <= objective_tol && c.max_flow_residual <= residual_tol;
        v.pass = v.pass && ok;
        v.notes.push_back(fmt::format("{}: {} instances, objective gap {:.2e}, flow residual {:.2e}, argmin gap {:.2e}, "
                                      "solver failures {}",
                                      c.regularizer, c.instances, c.max_objective_gap, c.max_flow_residual, c.max_q_gap,
                                      c.failures));
    }
    const auto ew = oracle::certify_exponential_weights(50, 2024);
    v.pass = v.pass && ew.max_error <= closed_form_tol;
    v.notes.push_back(fmt::format("one-layer Shannon vs exponential weights: {} instances, max error {:.2e}",
                                  ew.instances, ew.max_error));
    v.detail = fmt::format("objective <= {:g}, residual <= {:g}, closed form <= {:g}", objective_tol, residual_tol,
                           closed_form_tol);
    return v;
}

Verdict loss_shifting() {
    constexpr double inner_tol = 1e-10, argmin_tol = 1e-6;
    std::mt19937_64 gen(77);
    double worst_inner = 0.0, worst_argmin = 0.0;
    const std::vector<std::vector<int>> shapes{{1, 2, 1}, {1, 3, 2, 1}, {1, 2, 3, 2, 1}};
    for (int i = 0; i < 50; ++i) {
        const auto kernel = oracle::random_kernel(shapes[i % shapes.size()], 2 + i % 2, gen);
        const auto& ls = kernel.structure();
        const mdp::StochasticPolicy pi{oracle::random_policy(ls, gen)};
        std::uniform_real_distribution<double> est(-2.0 * ls.horizon(), 20.0);
        std::vector<double> lhat(ls.num_pairs());
        for (double& x : lhat) x = est(gen);
        const auto g = ftrl::loss_shift(kernel, pi, lhat);
        const double v0 = mdp::value_functions(kernel, lhat, pi).v_values[ls.initial_state()];
        for (int k = 0; k < 5; ++k) {
            const auto q = mdp::occupancy_of(kernel, mdp::StochasticPolicy{oracle::random_policy(ls, gen)});
            worst_inner = std::max(worst_inner, std::abs(mdp::inner(q.q, g) + v0));
        }
        std::uniform_real_distribution<double> cum(-50.0, 200.0);
        std::vector<double> c(ls.num_pairs());
        for (double& x : c) x = cum(gen);
        auto shifted = c;
        for (int p = 0; p < ls.num_pairs(); ++p) shifted[p] += g[p];
        const double L = ls.horizon();
        const ftrl::Regularizer regs[] = {{ftrl::RegularizerKind::kShannon, 0.05, 0.0},
                                          {ftrl::RegularizerKind::kTsallisLogBarrier, 0.1, 128.0 * L * L * L * L}};
        for (const auto& reg : regs) {
            const auto a = ftrl::solve_regularized(kernel, c, reg);
            const auto b = ftrl::solve_regularized(kernel, shifted, reg);
            for (int p = 0; p < ls.num_pairs(); ++p) worst_argmin = std::max(worst_argmin, std::abs(a.q.q[p] - b.q.q[p]));
        }
    }
    return {worst_inner <= inner_tol && worst_argmin <= argmin_tol,
            fmt::format("50 triples: max |<q,g> + V(s0)| = {:.2e} (<= {:g}), max argmin gap = {:.2e} (<= {:g})",
                        worst_inner, inner_tol, worst_argmin, argmin_tol),
            {}};
}

Verdict estimator_unbiased() {
    constexpr int replays = 100000;
    constexpr double sigmas = 3.0;
    auto m = reference_mdp();
    const auto means = reference_means(*m);
    const auto& ls = m->layout();
    algo::LearnerConfig lc;
    lc.variant = algo::Variant::kUnknownBandit;
    lc.horizon_T = 4096;
    algo::Learner base(m->structure, lc);
    const auto gen = env::LossGenerator::iid(means, env::IidMode::kBernoulli);
    const env::RngStream loss_rng(91, 1);
    env::RngStream traj(91, 2);
    // Warm up so the confidence set and the iterate are non-trivial.
    for (long long t = 1; t <= 200; ++t) {
        const auto& pi = base.begin_episode(t);
        const auto r = env::rollout(*m, pi, env::next_loss(gen, t, loss_rng), env::FeedbackMode::kBandit, traj);
        base.end_episode(r.trajectory, r.feedback);
    }
    const long long t = 201;
    const auto pi = base.begin_episode(t);
    const auto q_true = mdp::occupancy_of(m->transition, pi);

    std::vector<double> sum(ls.num_pairs(), 0.0), sumsq(ls.num_pairs(), 0.0);
    algo::EpisodeRecord record;
    env::RngStream replay(92, 2);
    const env::RngStream replay_loss(92, 1);
    for (int i = 0; i < replays; ++i) {
        algo::Learner copy = base;
        const auto r = env::rollout(*m, pi, env::next_loss(gen, i + 1, replay_loss), env::FeedbackMode::kBandit, replay);
        record = copy.end_episode(r.trajectory, r.feedback);
        const auto v = record.loss_estimate.value();
        for (int p = 0; p < ls.num_pairs(); ++p) {
            sum[p] += v[p];
            sumsq[p] += v[p] * v[p];
        }
    }
    const auto expected = algo::expected_adjusted_loss(record, q_true.q, means);
    Verdict v{true, {}, {}};
    double worst = 0.0;
    for (int p = 0; p < ls.num_pairs(); ++p) {
        const double mean = sum[p] / replays;
        const double se = std::sqrt(std::max(0.0, sumsq[p] / replays - mean * mean) / replays);
        const double z = se > 0.0 ? std::abs(mean - expected[p]) / se : (std::abs(mean - expected[p]) <= 1e-12 ? 0.0 : INFINITY);
        worst = std::max(worst, z);
        if (z > sigmas) v.pass = false;
        v.notes.push_back(fmt::format("pair ({},{}): mean {:.6f} expected {:.6f} se {:.2e}", ls.state_of_pair(p),
                                      ls.action_of_pair(p), mean, expected[p], se));
    }
    v.detail = fmt::format("{} replays at t={}, max |z| = {:.2f} (required <= {:g})", replays, t, worst, sigmas);
    return v;
}

Verdict two_world_growth() {
    constexpr int reps = 20;
    constexpr double adv_lo = 0.3, adv_hi = 0.65, stoch_hi = 0.35;
    auto m = reference_mdp();
    const auto means = reference_means(*m);
    const auto [t1, t2] = switching_tables(m->layout());
    Verdict v{true, {}, {}};
    std::vector<std::string> failed;
    for (auto variant : {algo::Variant::kUnknownFull, algo::Variant::kUnknownBandit, algo::Variant::kKnownFull,
                         algo::Variant::kKnownBandit}) {
        double slopes[2];
        std::string curve[2];
        for (int world = 0; world < 2; ++world) {
            const auto losses = world == 0 ? env::LossGenerator::iid(means, env::IidMode::kBernoulli)
                                           : env::LossGenerator::switching(t1, t2, kSwitchBlock, env::IidMode::kBernoulli);
            std::vector<double> x, y;
            for (int k = 12; k <= 16; ++k) {
                const auto report =
                    harness::run_experiment(make_config(m, losses, variant, 1LL << k, reps, 100), summary_only());
                double mean = 0.0;
                for (const auto& r : report.replications) mean += (world == 0 ? r.reg_pistar : r.reg_opt) / reps;
                x.push_back(k * std::log(2.0));
                y.push_back(std::log(mean));
                curve[world] += fmt::format(" {:.1f}", mean);
            }
            slopes[world] = ls_slope(x, y);
        }
        const bool stoch_ok = slopes[0] <= stoch_hi && slopes[0] < slopes[1];
        const bool adv_ok = slopes[1] >= adv_lo && slopes[1] <= adv_hi;
        if (!(stoch_ok && adv_ok)) {
            v.pass = false;
            failed.push_back(algo::to_string(variant));
        }
        v.notes.push_back(fmt::format("{}: stochastic Reg(pi*) [{} ] slope {:.3f} {}; adversarial Reg(opt) [{} ] slope "
                                      "{:.3f} {}",
                                      algo::to_string(variant), curve[0], slopes[0], stoch_ok ? "ok" : "FAIL", curve[1],
                                      slopes[1], adv_ok ? "ok" : "FAIL"));
    }
    v.detail = fmt::format("T=2^12..2^16, {} reps: adversarial slope in [{}, {}], stochastic slope <= {} and below "
                           "adversarial{}",
                           reps, adv_lo, adv_hi, stoch_hi,
                           failed.empty() ? std::string() : fmt::format("; failing learners: {}", fmt::join(failed, ", ")));
    return v;
}

Verdict known_bandit_two_arm() {
    constexpr int reps = 20;
    constexpr double gap = 0.25, ratio_hi = 0.25, slope_hi = 0.35;
    constexpr long long T = 1LL << 16;
    auto m = std::make_shared<const mdp::LayeredMdp>(
        mdp::TransitionKernel(std::make_shared<const mdp::LayerStructure>(std::vector<int>{1, 1}, 2), {1.0, 1.0}));
    const auto c = make_config(m, env::LossGenerator::iid({0.5, 0.5 + gap}, env::IidMode::kBernoulli),
                               algo::Variant::kKnownBandit, T, reps, 300);
    // The schedule gamma/sqrt(t) does not depend on T, so the prefix of the
    // T = 2^16 run at t is the run with horizon t.
    const auto report = harness::run_experiment(c, {true, std::nullopt});
    std::vector<double> x, y;
    std::string curve;
    for (int k = 12; k <= 16; ++k) {
        double mean = 0.0;
        for (const auto& r : report.replications) mean += r.rows[(1LL << k) - 1].cum_reg_pistar / reps;
        x.push_back(k * std::log(2.0));
        y.push_back(std::log(mean));
        curve += fmt::format(" {:.1f}", mean);
    }
    const double slope = ls_slope(x, y);
    const double uniform = 0.5 * gap * T;
    const double ratio = std::exp(y.back()) / uniform;
    return {ratio < ratio_hi && slope <= slope_hi,
            fmt::format("Reg(2^16)/uniform = {:.4f} (< {}), slope = {:.3f} (<= {}); Reg[{} ]", ratio, ratio_hi, slope,
                        slope_hi, curve),
            {}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<std::string> only;
    bool list = false;
    app.add_option("--only", only, "run only the named criteria");
    app.add_flag("--list", list, "list criterion names");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"epoch_bound", epoch_bound},
        {"confidence_coverage", confidence_coverage},
        {"optimism_audit", optimism_audit},
        {"uob_guarantees", uob_guarantees},
        {"ftrl_certification", ftrl_certification},
        {"loss_shifting", loss_shifting},
        {"estimator_unbiased", estimator_unbiased},
        {"two_world_growth", two_world_growth},
        {"known_bandit_two_arm", known_bandit_two_arm},
    };
    if (list) {
        for (const auto& [name, fn] : criteria) std::puts(name.c_str());
        return 0;
    }
    for (const auto& name : only) {
        bool known = false;
        for (const auto& c : criteria) known = known || c.first == name;
        if (!known) {
            std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
            return 2;
        }
    }

    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, fmt::format("exception: {}", e.what()), {}};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& n : v.notes) fmt::print("    {}\n", n);
        fmt::print("{} {}: {} [{:.1f}s]\n", v.pass ? "PASS" : "FAIL", name, v.detail, secs);
        std::fflush(stdout);
        failures += !v.pass;
    }
    return failures == 0 ? 0 : 1;
}
