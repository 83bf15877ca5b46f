#include <cmath>
#include <random>

#include "doctest.h"
#include "mos/errors.hpp"
#include "mos/eval.hpp"
#include "test_support.hpp"

using namespace mos;

namespace {

MosConfig random_config(std::size_t k) {
    MosConfig c;
    c.experts = k;
    c.input_dim = 5;
    c.hidden_dim = 8;
    c.feature_dim = 6;
    c.seed = 12;
    return c;
}

} // namespace

TEST_CASE("accuracy of constant and random models") {
    std::mt19937_64 rng(1);
    Dataset d = testing::random_dataset(200, 5, 3, rng);
    std::fill(d.labels.begin(), d.labels.end(), 2);
    const auto sure = testing::constant_model({{0.1, 0.1, 0.8}, {0.2, 0.2, 0.6}}, {0.5, 0.5});
    for (auto rule : kAllRules) CHECK(accuracy(sure, d, rule) == 1.0);

    const Dataset big = testing::random_dataset(10000, 5, 3, rng);
    const ModelParams random_model = init_params(random_config(4));
    CHECK(std::abs(accuracy(random_model, big, DecisionRule::Estimated) - 1.0 / 3.0) <= 0.02);
}

TEST_CASE("all-rule accuracy agrees with per-rule accuracy") {
    std::mt19937_64 rng(2);
    const Dataset d = testing::random_dataset(300, 5, 3, rng);
    const ModelParams p = init_params(random_config(4));
    const auto all = accuracy_all_rules(p, d);
    for (auto rule : kAllRules) {
        CHECK(all.at(rule) == accuracy(p, d, rule));
        CHECK(all.at(rule) >= 0.0);
        CHECK(all.at(rule) <= 1.0);
    }
}

TEST_CASE("single-expert models score the same under every rule") {
    std::mt19937_64 rng(3);
    const Dataset d = testing::random_dataset(500, 5, 3, rng);
    const auto all = accuracy_all_rules(init_params(random_config(1)), d);
    CHECK(all.at(DecisionRule::Uniform) == all.at(DecisionRule::Estimated));
    CHECK(all.at(DecisionRule::Argmin) == all.at(DecisionRule::Estimated));
}

TEST_CASE("penalty statistic closed forms and guard") {
    std::mt19937_64 rng(4);
    const Dataset d = testing::random_dataset(64, 5, 3, rng);
    const auto collapsed = testing::constant_model({{0.3, 0.3, 0.4}, {0.3, 0.3, 0.4}}, {1.0, 0.0});
    const auto s = penalty_statistic(collapsed, d, 2, 8, 0);
    CHECK(s.batches == 32);
    CHECK(std::abs(s.mean - 1.0) <= 1e-12);
    CHECK(s.std <= 1e-12);

    CHECK_THROWS_AS(penalty_statistic(collapsed, d, 65, 8, 0), UsageError);
}

TEST_CASE("penalty statistic barely depends on the shuffle seed") {
    std::mt19937_64 rng(5);
    const Dataset d = testing::random_dataset(3200, 5, 3, rng);
    const ModelParams p = init_params(random_config(5));
    const auto a = penalty_statistic(p, d, 32, 8, 1);
    const auto b = penalty_statistic(p, d, 32, 8, 2);
    CHECK(std::abs(a.mean - b.mean) <= 2.0 * a.std);
}

TEST_CASE("summary statistics") {
    const auto s = summarize({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(s.batches == 4);
    CHECK(summarize({7.0}).std == 0.0);
}

TEST_CASE("profiles") {
    std::mt19937_64 rng(6);
    const Dataset d = testing::random_dataset(150, 5, 3, rng);

    const Vector pi = {0.2, 0.5, 0.3};
    const auto constant = testing::constant_model({{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.1, 0.1, 0.8}}, pi);
    const Vector prof = mixture_profile(constant, d);
    for (std::size_t k = 0; k < 3; ++k) CHECK(prof[k] == doctest::Approx(pi[k]).epsilon(1e-12));
    const Tensor2 ep = expert_prediction_profile(constant, d);
    CHECK(max_pairwise_l1(ep) == doctest::Approx(0.6));
    for (std::size_t y = 0; y < 3; ++y) CHECK(ep(0, y) == doctest::Approx(ep(1, y)).epsilon(1e-12));

    // Direct average of the forward pass.
    const ModelParams p = init_params(random_config(4));
    Vector direct(4, 0.0);
    Tensor2 direct_experts(4, 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto out = mixture_forward(p, d.features.row(i));
        for (std::size_t k = 0; k < 4; ++k) {
            direct[k] += out.router_dist[k] / double(d.size());
            for (std::size_t y = 0; y < 3; ++y) direct_experts(k, y) += out.expert_dists(k, y) / double(d.size());
        }
    }
    const Vector mp = mixture_profile(p, d);
    const Tensor2 xp = expert_prediction_profile(p, d);
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(mp[k] == doctest::Approx(direct[k]).epsilon(1e-12));
        total += mp[k];
        double row = 0.0;
        for (std::size_t y = 0; y < 3; ++y) {
            CHECK(xp(k, y) == doctest::Approx(direct_experts(k, y)).epsilon(1e-12));
            row += xp(k, y);
        }
        CHECK(std::abs(row - 1.0) <= 1e-9);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
}

TEST_CASE("shift detection") {
    const PenaltyStats ref{0.017, 0.009, 10};
    CHECK_FALSE(detect_shift(ref, ref).shifted);

    const PenaltyStats hans{0.633, 0.075, 10};
    const auto v = detect_shift(ref, hans);
    CHECK(v.score == doctest::Approx((0.633 - 0.017) / 0.009));
    CHECK(v.score == doctest::Approx(68.44).epsilon(1e-3));
    CHECK(v.shifted);

    // Direction does not matter.
    const PenaltyStats train{0.010, 0.001, 10}, dev{0.136, 0.02, 10};
    CHECK(detect_shift(dev, train, 3.0).shifted);
    const PenaltyStats lower{0.017 - 0.616, 0.0, 1};
    CHECK(detect_shift(ref, lower).score == doctest::Approx(v.score));

    // Zero reference spread uses the floor.
    const PenaltyStats flat{0.5, 0.0, 3}, same{0.5, 0.0, 3};
    CHECK_FALSE(detect_shift(flat, same).shifted);
    CHECK(detect_shift(flat, {0.5 + 1e-9, 0.0, 3}).shifted);

    // The flag is strict.
    CHECK_FALSE(detect_shift({0.0, 1.0, 2}, {3.0, 0.0, 2}).shifted);
}

TEST_CASE("gated evaluation applies control only on shifted splits") {
    SplitReport r;
    r.accuracy = {{DecisionRule::Estimated, 0.4}, {DecisionRule::Uniform, 0.45}, {DecisionRule::Argmin, 0.5}};
    r.penalty = {0.6, 0.05, 10};
    const PenaltyStats ref{0.1, 0.02, 10};
    const auto shifted = gated_accuracy(r, ref, DecisionRule::Argmin);
    CHECK(shifted.verdict.shifted);
    CHECK(shifted.rule_used == DecisionRule::Argmin);
    CHECK(shifted.accuracy == 0.5);

    r.penalty = {0.11, 0.02, 10};
    const auto calm = gated_accuracy(r, ref, DecisionRule::Argmin);
    CHECK_FALSE(calm.verdict.shifted);
    CHECK(calm.rule_used == DecisionRule::Estimated);
    CHECK(calm.accuracy == 0.4);
}

TEST_CASE("split reports are reproducible") {
    std::mt19937_64 rng(7);
    const Dataset d = testing::random_dataset(256, 5, 3, rng);
    const ModelParams p = init_params(random_config(5));
    ReportOptions o;
    o.seed = 3;
    const auto a = evaluate_split(p, d, o), b = evaluate_split(p, d, o);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.penalty.mean == b.penalty.mean);
    CHECK(a.mixture_profile == b.mixture_profile);
    CHECK(a.expert_profile == b.expert_profile);
    CHECK(a.size == 256);
}
