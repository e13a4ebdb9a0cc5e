#include <doctest.h>

#include <cmath>

#include "bobw/environment.hpp"
#include "bobw/learner.hpp"
#include "helpers.hpp"

using namespace bobw;
using namespace bobw::algo;
using testing::layout;

namespace {

struct World {
    mdp::LayeredMdp mdp;
    std::vector<double> means;
};

World reference_world() {
    auto m = env::random_mdp({1, 2, 1}, 2, env::RngStream(11, 0x3d9));
    auto means = env::means_with_gaps(m, {0, 1, 0}, 0.2, 0.4, env::RngStream(3, 0x6a9));
    return {std::move(m), std::move(means)};
}

LearnerConfig config_for(Variant v, const mdp::LayeredMdp& m, long long T) {
    LearnerConfig c;
    c.variant = v;
    c.horizon_T = T;
    if (is_known(v)) c.known_transition = std::shared_ptr<const mdp::TransitionKernel>(std::shared_ptr<void>(), &m.transition);
    return c;
}

env::FeedbackMode mode_of(Variant v) { return is_bandit(v) ? env::FeedbackMode::kBandit : env::FeedbackMode::kFull; }

}  // namespace

TEST_SUITE("algorithms") {

TEST_CASE("first episode of unknown full information: l_hat = l - L") {
    const auto w = reference_world();
    Learner learner(w.mdp.structure, config_for(Variant::kUnknownFull, w.mdp, 100));
    const auto& pi = learner.begin_episode(1);
    env::RngStream rng(1, 2);
    const mdp::LossFunction loss{w.means};
    const auto r = env::rollout(w.mdp, pi, loss, env::FeedbackMode::kFull, rng);
    const auto rec = learner.end_episode(r.trajectory, r.feedback);
    const auto lhat = rec.loss_estimate.value();
    for (std::size_t p = 0; p < lhat.size(); ++p) CHECK(lhat[p] == doctest::Approx(w.means[p] - 2.0).epsilon(1e-15));
    CHECK(rec.eta == doctest::Approx(1.0 / 32.0));
    CHECK(rec.rollover);
}

TEST_CASE("known-transition bandit uses plain importance weights") {
    const auto w = reference_world();
    const auto& ls = w.mdp.layout();
    Learner learner(w.mdp.structure, config_for(Variant::kKnownBandit, w.mdp, 100));
    env::RngStream rng(2, 2);
    for (long long t = 1; t <= 20; ++t) {
        const auto& pi = learner.begin_episode(t);
        const auto r = env::rollout(w.mdp, pi, mdp::LossFunction{w.means}, env::FeedbackMode::kBandit, rng);
        const auto rec = learner.end_episode(r.trajectory, r.feedback);
        int nonzero = 0;
        for (int p = 0; p < ls.num_pairs(); ++p) {
            CHECK(rec.loss_estimate.bonus[p] == 0.0);
            if (rec.loss_estimate.observed[p] != 0.0) ++nonzero;
        }
        CHECK(nonzero == ls.horizon());
        for (const auto& o : r.feedback.visited) {
            const int p = ls.pair(o.state, o.action);
            CHECK(rec.loss_estimate.observed[p] == doctest::Approx(o.loss / rec.q_hat.q[p]).epsilon(1e-15));
        }
        CHECK(rec.eta == doctest::Approx(1.0 / std::sqrt(double(t))));
        CHECK_FALSE(rec.confidence);
    }
}

TEST_CASE("bandit estimator mean over replayed episodes") {
    const auto w = reference_world();
    const auto& ls = w.mdp.layout();
    Learner base(w.mdp.structure, config_for(Variant::kUnknownBandit, w.mdp, 1000));
    env::RngStream rng(3, 2);
    const env::LossGenerator gen = env::LossGenerator::iid(w.means, env::IidMode::kBernoulli);
    const env::RngStream loss_rng(3, 1);
    for (long long t = 1; t <= 30; ++t) {
        const auto& pi = base.begin_episode(t);
        const auto r = env::rollout(w.mdp, pi, env::next_loss(gen, t, loss_rng), env::FeedbackMode::kBandit, rng);
        base.end_episode(r.trajectory, r.feedback);
    }
    const long long t = 31;
    const auto& pi = base.begin_episode(t);
    const auto q_true = mdp::occupancy_of(w.mdp.transition, pi);
    const int n = 20000;
    std::vector<double> sum(ls.num_pairs(), 0.0), sumsq(ls.num_pairs(), 0.0);
    EpisodeRecord last;
    env::RngStream replay(4, 2);
    for (int i = 0; i < n; ++i) {
        Learner copy = base;
        const auto l = env::next_loss(gen, 1000 + i, loss_rng);
        const auto r = env::rollout(w.mdp, pi, l, env::FeedbackMode::kBandit, replay);
        last = copy.end_episode(r.trajectory, r.feedback);
        const auto v = last.loss_estimate.value();
        for (int p = 0; p < ls.num_pairs(); ++p) {
            sum[p] += v[p];
            sumsq[p] += v[p] * v[p];
        }
    }
    const auto expected = expected_adjusted_loss(last, q_true.q, w.means);
    for (int p = 0; p < ls.num_pairs(); ++p) {
        const double mean = sum[p] / n;
        const double sd = std::sqrt(std::max(0.0, sumsq[p] / n - mean * mean) / n);
        CHECK(std::abs(mean - expected[p]) <= 3.0 * sd + 1e-12);
        CHECK(last.denominator[p] >= q_true.q[p] - 1e-9);
    }
}

TEST_CASE("optimism holds with vacuous confidence sets") {
    const auto w = reference_world();
    std::mt19937_64 gen(5);
    for (Variant v : {Variant::kUnknownFull, Variant::kUnknownBandit}) {
        Learner learner(w.mdp.structure, config_for(v, w.mdp, 100));
        const auto& pi = learner.begin_episode(1);
        env::RngStream rng(5, 2);
        const auto r = env::rollout(w.mdp, pi, mdp::LossFunction{w.means}, mode_of(v), rng);
        const auto rec = learner.end_episode(r.trajectory, r.feedback);
        for (double b : rec.confidence->triple_width) CHECK(b == 1.0);
        std::vector<std::pair<std::string, mdp::StochasticPolicy>> policies{{"pi_t", rec.policy}};
        for (int k = 0; k < 5; ++k) policies.emplace_back("random", testing::random_policy(w.mdp.layout(), gen));
        CHECK(optimism_audit(rec, w.mdp.transition, w.means, policies, is_bandit(v)).empty());
    }
}

TEST_CASE("optimism audit reports a synthetic violation") {
    auto ls = layout({1, 2, 1}, 1);
    const mdp::TransitionKernel truth(ls, {1.0, 0.0, 1.0, 1.0});
    const auto center = std::make_shared<const mdp::TransitionKernel>(ls, std::vector<double>{0.0, 1.0, 1.0, 1.0});
    auto set = std::make_shared<estimation::ConfidenceSet>(estimation::ConfidenceSet{
        *center, std::vector<double>(4, 1.0), std::vector<double>(3, 1.0), std::vector<long long>(3, 0)});
    EpisodeRecord rec;
    rec.t = 7;
    rec.policy = mdp::StochasticPolicy::uniform(*ls);
    rec.kernel = center;
    rec.confidence = set;
    const std::vector<double> loss{0.0, 0.0, 1.0};  // state 2 is costly, truth never goes there
    rec.loss_estimate.observed = loss;
    rec.loss_estimate.bonus.assign(3, 0.0);
    const auto v = optimism_audit(rec, truth, loss, {{"uniform", rec.policy}}, false);
    REQUIRE(v.size() == 1);
    CHECK(v[0].t == 7);
    CHECK(v[0].state == 0);
    CHECK(v[0].estimated == doctest::Approx(1.0));
    CHECK(v[0].truth == doctest::Approx(0.0));

    // Outside the confidence set nothing is audited.
    auto tight = std::make_shared<estimation::ConfidenceSet>(*set);
    tight->triple_width.assign(4, 0.0);
    rec.confidence = tight;
    CHECK(optimism_audit(rec, truth, loss, {{"uniform", rec.policy}}, false).empty());
}

TEST_CASE("unknown-transition learners ignore the true kernel and unseen losses") {
    const auto w = reference_world();
    const auto& ls = w.mdp.layout();
    std::mt19937_64 gen(6);
    const auto other = std::make_shared<const mdp::TransitionKernel>(oracle::random_kernel({1, 2, 1}, 2, gen));
    for (Variant v : {Variant::kUnknownFull, Variant::kUnknownBandit}) {
        auto plain = config_for(v, w.mdp, 200);
        auto leaked = plain;
        leaked.known_transition = other;
        Learner a(w.mdp.structure, plain), b(w.mdp.structure, leaked);
        env::RngStream rng(6, 2);
        for (long long t = 1; t <= 60; ++t) {
            const auto pa = a.begin_episode(t);
            const auto pb = b.begin_episode(t);
            CHECK(pa.probs == pb.probs);
            auto r = env::rollout(w.mdp, pa, mdp::LossFunction{w.means}, mode_of(v), rng);
            const auto ra = a.end_episode(r.trajectory, r.feedback);
            if (is_bandit(v)) {
                // Same trajectory and visited losses, different losses elsewhere: nothing reaches the learner.
                CHECK(r.feedback.full.values.empty());
            }
            const auto rb = b.end_episode(r.trajectory, r.feedback);
            CHECK(ra.loss_estimate.value() == rb.loss_estimate.value());
        }
    }
    {
        // Bandit feedback built from two loss tables that agree on the visited pairs.
        Learner a(w.mdp.structure, config_for(Variant::kUnknownBandit, w.mdp, 50));
        Learner b = a;
        const auto& pi = a.begin_episode(1);
        b.begin_episode(1);
        env::RngStream r1(7, 2), r2(7, 2);
        auto l2 = w.means;
        const auto x = env::rollout(w.mdp, pi, mdp::LossFunction{w.means}, env::FeedbackMode::kBandit, r1);
        std::vector<bool> seen(ls.num_pairs(), false);
        for (const auto& o : x.feedback.visited) seen[ls.pair(o.state, o.action)] = true;
        for (int p = 0; p < ls.num_pairs(); ++p)
            if (!seen[p]) l2[p] = 1.0 - l2[p];
        const auto y = env::rollout(w.mdp, pi, mdp::LossFunction{l2}, env::FeedbackMode::kBandit, r2);
        CHECK(a.end_episode(x.trajectory, x.feedback).loss_estimate.value() ==
              b.end_episode(y.trajectory, y.feedback).loss_estimate.value());
        CHECK(a.begin_episode(2).probs == b.begin_episode(2).probs);
    }
}

TEST_CASE("epoch-local accumulation, learning rates and the IW guard") {
    const auto w = reference_world();
    const auto& ls = w.mdp.layout();
    for (Variant v : {Variant::kUnknownFull, Variant::kUnknownBandit}) {
        Learner learner(w.mdp.structure, config_for(v, w.mdp, 3000));
        env::RngStream rng(8, 2);
        const auto gen = env::LossGenerator::iid(w.means, env::IidMode::kBernoulli);
        const env::RngStream lr(8, 1);
        int last_epoch = 1;
        for (long long t = 1; t <= 3000; ++t) {
            const auto& pi = learner.begin_episode(t);
            if (learner.epoch_start() == t) {
                const double expect = v == Variant::kUnknownFull ? 1.0 / 32.0 : 1.0;
                CHECK(learner.current_eta() == doctest::Approx(expect).epsilon(1e-14));
                CHECK(learner.ftrl_state().episodes_accumulated() == 0);
            }
            const auto r = env::rollout(w.mdp, pi, env::next_loss(gen, t, lr), mode_of(v), rng);
            const auto rec = learner.end_episode(r.trajectory, r.feedback);
            CHECK_FALSE(rec.guard_triggered);
            CHECK(rec.epoch >= last_epoch);
            last_epoch = rec.epoch;
            const auto value = rec.loss_estimate.value();
            for (int p = 0; p < ls.num_pairs(); ++p) {
                CHECK(value[p] == rec.loss_estimate.observed[p] - rec.loss_estimate.bonus[p]);
                CHECK(rec.loss_estimate.bonus[p] == doctest::Approx(ls.horizon() * rec.confidence->pair_width[p]).epsilon(1e-15));
            }
            if (is_bandit(v)) {
                int nonzero = 0;
                for (double x : rec.loss_estimate.observed) nonzero += x != 0.0;
                CHECK(nonzero <= ls.horizon());
            }
            if (rec.rollover) {
                CHECK(learner.ftrl_state().start_episode() == t + 1);
                CHECK(learner.ftrl_state().episodes_accumulated() == 0);
                for (double c : learner.ftrl_state().cumulative_loss()) CHECK(c == 0.0);
            } else {
                CHECK(learner.ftrl_state().episodes_accumulated() == t - rec.epoch_start + 1);
            }
        }
        CHECK(learner.epoch() > 5);
    }
}

TEST_CASE("configuration errors") {
    const auto w = reference_world();
    CHECK_THROWS_AS(parse_variant("sideways"), ConfigError);
    auto c = config_for(Variant::kKnownFull, w.mdp, 10);
    c.known_transition.reset();
    CHECK_THROWS_AS(Learner(w.mdp.structure, c), ConfigError);
    auto d = config_for(Variant::kUnknownFull, w.mdp, 10);
    d.delta = 1.5;
    CHECK_THROWS_AS(Learner(w.mdp.structure, d), ConfigError);
    Learner ok(w.mdp.structure, config_for(Variant::kUnknownFull, w.mdp, 10));
    CHECK_THROWS_AS(ok.begin_episode(11), ConfigError);
    CHECK(config_for(Variant::kUnknownBandit, w.mdp, 10).effective_delta() == doctest::Approx(1e-3));
    CHECK(config_for(Variant::kUnknownFull, w.mdp, 10).effective_delta() == doctest::Approx(1e-2));
}

}  // TEST_SUITE
