#include <map>
#include <mutex>
#include <random>

#include "doctest.h"
#include "mos/errors.hpp"
#include "mos/synth.hpp"
#include "mos/trainer.hpp"
#include "test_support.hpp"

using namespace mos;

namespace {

/// Two well-separated Gaussian clusters per label.
Dataset separable(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    Dataset d;
    d.split = "toy";
    d.num_labels = 3;
    d.features = Tensor2(n, 4);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i % 3;
        d.labels.push_back(y);
        for (std::size_t j = 0; j < 4; ++j) d.features(i, j) = (j == y ? 3.0 : 0.0) + noise(rng);
    }
    return d;
}

TrainConfig toy_config(std::size_t experts = 3) {
    TrainConfig c;
    c.model.experts = experts;
    c.model.num_labels = 3;
    c.model.input_dim = 4;
    c.model.hidden_dim = 8;
    c.model.feature_dim = 6;
    c.batch_size = 16;
    c.epochs = 5;
    c.learning_rate = 1e-2;
    c.seed = 21;
    return c;
}

TrainHistory history_of(const std::vector<double> &accuracies) {
    TrainHistory h;
    for (double a : accuracies) {
        EpochStats s;
        s.dev_accuracy = a;
        h.epochs.push_back(s);
    }
    return h;
}

} // namespace

TEST_CASE("classification loss falls on separable data") {
    const Dataset d = separable(240, 1);
    TrainConfig c = toy_config();
    Trainer t = make_trainer(c);
    double previous = INFINITY;
    for (std::size_t e = 0; e < 5; ++e) {
        const auto s = train_epoch(t, d, c, e);
        CHECK(s.train_classification < previous);
        previous = s.train_classification;
    }
}

TEST_CASE("zero learning rate freezes parameters and losses") {
    const Dataset d = separable(64, 2);
    TrainConfig c = toy_config();
    c.learning_rate = 0.0;
    c.shuffle = false;
    c.lambda = 0.5;
    Trainer t = make_trainer(c);
    const ModelParams start = t.params;
    const auto a = train_epoch(t, d, c, 0);
    const auto b = train_epoch(t, d, c, 1);
    CHECK(t.params == start);
    CHECK(a.train_classification == b.train_classification);
    CHECK(a.train_penalty == b.train_penalty);
}

TEST_CASE("fit is deterministic and keeps the best epoch") {
    const Dataset train = separable(120, 3), dev = separable(60, 4);
    TrainConfig c = toy_config();
    c.lambda = 0.5;
    const auto a = fit(c, train, dev);
    const auto b = fit(c, train, dev);
    CHECK(a.model == b.model);
    REQUIRE(a.history.epochs.size() == 5);
    for (std::size_t e = 0; e < 5; ++e) {
        CHECK(a.history.epochs[e].train_classification == b.history.epochs[e].train_classification);
        CHECK(a.history.epochs[e].dev_objective() == b.history.epochs[e].dev_objective());
    }
    CHECK(a.history.best_epoch == select_best_epoch(a.history));

    // The returned model is the checkpoint of the best epoch.
    TrainConfig shorter = c;
    shorter.epochs = a.history.best_epoch + 1;
    CHECK(fit(shorter, train, dev).model == a.model);

    c.epochs = 1;
    CHECK(fit(c, train, dev).history.best_epoch == 0);
}

TEST_CASE("best epoch selection") {
    CHECK(select_best_epoch(history_of({0.1, 0.2, 0.3, 0.4})) == 3);
    CHECK(select_best_epoch(history_of({0.1, 0.5, 0.2, 0.9, 0.3})) == 3);
    CHECK(select_best_epoch(history_of({0.7, 0.7, 0.6})) == 0);
    CHECK_THROWS_AS(select_best_epoch(TrainHistory{}), UsageError);
}

TEST_CASE("eval_losses closed forms") {
    std::mt19937_64 rng(5);
    Dataset d = testing::random_dataset(8, 5, 2, rng);
    const auto uniform_router = testing::constant_model({{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5});
    const auto l = eval_losses(uniform_router, d, 4, 1);
    CHECK(l.penalty == doctest::Approx(std::sqrt(3.0) / std::sqrt(8.0)).epsilon(1e-12));
    CHECK(l.classification == doctest::Approx(std::log(2.0)));

    std::fill(d.labels.begin(), d.labels.end(), 0);
    const auto sure = testing::constant_model({{1.0, 0.0}, {1.0, 0.0}}, {0.5, 0.5});
    CHECK(eval_losses(sure, d, 4, 1).classification == doctest::Approx(0.0));
}

TEST_CASE("two-stage search on injected losses") {
    const std::map<std::size_t, double> stage1 = {{5, 1.084}, {10, 0.560}, {15, 0.802}};
    const std::map<double, double> stage2 = {{0.5, 0.459}, {1.0, 0.671}};
    std::size_t calls = 0;
    std::mutex m;
    CandidateEvaluator injected = [&](std::size_t k, double lambda, std::size_t) {
        {
            std::lock_guard lock(m);
            ++calls;
        }
        if (lambda == 0.0) return SplitLosses{stage1.at(k), 0.0};
        REQUIRE(k == 10);
        return SplitLosses{stage2.at(lambda), 0.0};
    };
    SweepGrid grid;
    grid.repeats = 2;
    for (std::size_t workers : {1u, 3u}) {
        calls = 0;
        const auto r = two_stage_search(grid, injected, workers);
        CHECK(r.best_experts == 10);
        CHECK(r.best_lambda == 0.5);
        CHECK(calls == 3 * 2 + 2 * 2);
        REQUIRE(r.stage2.size() == 3);
        CHECK(r.stage2[0].losses.sum() == doctest::Approx(0.560));
    }

    SweepGrid single;
    single.experts = {7};
    single.lambdas = {0.25};
    single.repeats = 1;
    const auto s = two_stage_search(single, [](std::size_t, double, std::size_t) { return SplitLosses{1.0, 0.0}; });
    CHECK(s.best_experts == 7);
    CHECK(s.best_lambda == 0.25);
}

TEST_CASE("sweep ties go to the earlier candidate") {
    SweepGrid grid;
    grid.repeats = 1;
    const auto r = two_stage_search(grid, [](std::size_t, double, std::size_t) { return SplitLosses{0.5, 0.1}; });
    CHECK(r.best_experts == 5);
    CHECK(r.best_lambda == 0.0);
}

TEST_CASE("penalty training lowers router overlap on the default generator") {
    double with = 0.0, without = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        GeneratorConfig g;
        g.seed = seed;
        const Generator gen(g);
        const Dataset train = gen.sample({"train", 2000, {}, {}});
        const Dataset dev = gen.sample({"id_dev", 500, {}, {}});
        TrainConfig c;
        c.model.input_dim = g.feature_dim();
        c.seed = seed;
        c.epochs = 5;
        without += fit(c, train, dev).history.epochs.back().train_penalty;
        c.lambda = 1.0;
        with += fit(c, train, dev).history.epochs.back().train_penalty;
    }
    CHECK(with < without);
}

TEST_CASE("train config validation and ell resolution") {
    TrainConfig c;
    CHECK(c.resolved_ell() == 8);
    c.ell_k_min = 10;
    CHECK(c.resolved_ell() == 4);
    c.ell = 3;
    CHECK(c.resolved_ell() == 3);
    c = TrainConfig{};
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
