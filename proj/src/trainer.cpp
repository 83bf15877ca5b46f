#include "mos/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>

#include "mos/errors.hpp"
#include "mos/eval.hpp"
#include "mos/penalty.hpp"
#include "mos/synth.hpp"

namespace mos {

void TrainConfig::validate() const {
    model.validate();
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (ell_k_min && *ell_k_min == 0) throw ConfigError("train: ell_k_min must be >= 1");
}

std::size_t TrainConfig::resolved_ell() const {
    if (ell) return *ell;
    return set_ell(batch_size, ell_k_min.value_or(model.experts));
}

std::vector<std::size_t> shuffled_rows(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

Trainer make_trainer(const TrainConfig &config) {
    config.validate();
    MosConfig model = config.model;
    model.seed = derive_seed(config.seed, "init");
    Trainer t;
    t.params = init_params(model);
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    t.optimizer = AdamState(adam, block_sizes(t.params));
    return t;
}

EpochStats train_epoch(Trainer &trainer, const Dataset &train, const TrainConfig &config, std::size_t epoch_index,
                       Execution exec) {
    if (train.size() == 0) throw UsageError("train_epoch: empty training split");
    const auto order = config.shuffle ? shuffled_rows(train.size(), derive_seed(config.seed, "epoch:" + std::to_string(epoch_index)))
                                      : all_rows(train);
    const JointLossOptions options{1.0, config.lambda, config.resolved_ell()};

    EpochStats stats;
    double ce_weighted = 0.0;
    double penalty_sum = 0.0;
    std::size_t penalty_batches = 0;
    ModelParams grads;
    for (const auto &batch : make_batches(order, config.batch_size)) {
        const auto loss = joint_loss(trainer.params, train, batch, options, &grads, exec);
        ce_weighted += loss.classification * static_cast<double>(batch.size());
        if (loss.penalty) {
            penalty_sum += *loss.penalty;
            ++penalty_batches;
        }
        auto params = blocks(trainer.params);
        auto g = const_blocks(grads);
        adam_step(trainer.optimizer, params, g);
    }
    stats.train_classification = ce_weighted / static_cast<double>(train.size());
    stats.train_penalty = penalty_batches ? penalty_sum / static_cast<double>(penalty_batches) : 0.0;
    return stats;
}

std::size_t select_best_epoch(const TrainHistory &history) {
    if (history.epochs.empty()) throw UsageError("select_best_epoch: empty history");
    std::size_t best = 0;
    for (std::size_t e = 1; e < history.epochs.size(); ++e)
        if (history.epochs[e].dev_accuracy > history.epochs[best].dev_accuracy) best = e;
    return best;
}

FitResult fit(const TrainConfig &config, const Dataset &train, const Dataset &id_dev, std::ostream *progress,
              Execution exec) {
    if (train.size() == 0 || id_dev.size() == 0) throw UsageError("fit: train and id_dev must be nonempty");
    Trainer trainer = make_trainer(config);
    const std::size_t ell = config.resolved_ell();
    const std::uint64_t dev_seed = derive_seed(config.seed, "dev-shuffle");

    FitResult result;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        EpochStats stats = train_epoch(trainer, train, config, e, exec);
        stats.dev_accuracy = accuracy(trainer.params, id_dev, DecisionRule::Estimated, exec);
        const auto dev = eval_losses(trainer.params, id_dev, config.batch_size, ell, dev_seed, exec);
        stats.dev_classification = dev.classification;
        stats.dev_penalty = dev.penalty;
        result.history.epochs.push_back(stats);
        if (progress) {
            *progress << "epoch " << e << " K=" << config.model.experts << " lambda=" << config.lambda
                      << " train_LC=" << stats.train_classification << " train_LR=" << stats.train_penalty
                      << " dev_acc=" << stats.dev_accuracy << " dev_LC+LR=" << stats.dev_objective() << '\n';
        }
        if (select_best_epoch(result.history) == e) result.model = trainer.params;
    }
    result.history.best_epoch = select_best_epoch(result.history);
    return result;
}

LossScan scan_losses(const ModelParams &params, const Dataset &data, std::size_t batch_size, std::size_t ell,
                     std::uint64_t shuffle_seed, Execution exec) {
    if (data.size() == 0) throw UsageError("scan_losses: empty split");
    if (batch_size == 0) throw UsageError("scan_losses: batch size must be >= 1");
    const auto order = shuffled_rows(data.size(), shuffle_seed);
    const JointLossOptions options{1.0, 0.0, ell};
    LossScan scan;
    double ce_weighted = 0.0;
    for (const auto &batch : make_batches(order, batch_size)) {
        const auto loss = joint_loss(params, data, batch, options, nullptr, exec);
        ce_weighted += loss.classification * static_cast<double>(batch.size());
        if (loss.penalty) scan.batch_penalties.push_back(*loss.penalty);
    }
    scan.mean_classification = ce_weighted / static_cast<double>(data.size());
    return scan;
}

SplitLosses eval_losses(const ModelParams &params, const Dataset &data, std::size_t batch_size, std::size_t ell,
                        std::uint64_t shuffle_seed, Execution exec) {
    const auto scan = scan_losses(params, data, batch_size, ell, shuffle_seed, exec);
    SplitLosses out;
    out.classification = scan.mean_classification;
    if (!scan.batch_penalties.empty())
        out.penalty = std::accumulate(scan.batch_penalties.begin(), scan.batch_penalties.end(), 0.0) /
                      static_cast<double>(scan.batch_penalties.size());
    return out;
}

namespace {

struct Job {
    std::size_t experts;
    double lambda;
    std::size_t repeat;
};

std::vector<SplitLosses> run_jobs(const std::vector<Job> &jobs, const CandidateEvaluator &evaluate,
                                  std::size_t workers) {
    std::vector<SplitLosses> results(jobs.size());
    if (workers <= 1 || jobs.size() <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            results[i] = evaluate(jobs[i].experts, jobs[i].lambda, jobs[i].repeat);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    const std::size_t count = std::min(workers, jobs.size());
    for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            // Runs are independent; keep each worker's kernels single-threaded.
            set_parallel_threads(1);
            for (std::size_t i = next++; i < jobs.size(); i = next++) {
                try {
                    results[i] = evaluate(jobs[i].experts, jobs[i].lambda, jobs[i].repeat);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto &t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

SplitLosses average(const std::vector<SplitLosses> &results, std::size_t first, std::size_t count) {
    SplitLosses mean;
    for (std::size_t r = 0; r < count; ++r) {
        mean.classification += results[first + r].classification;
        mean.penalty += results[first + r].penalty;
    }
    mean.classification /= static_cast<double>(count);
    mean.penalty /= static_cast<double>(count);
    return mean;
}

std::size_t pick_lowest(const std::vector<SweepCandidate> &candidates) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].losses.sum() < candidates[best].losses.sum()) best = i;
    return best;
}

} // namespace

SweepResult two_stage_search(const SweepGrid &grid, const CandidateEvaluator &evaluate, std::size_t workers) {
    if (grid.experts.empty() || grid.lambdas.empty()) throw ConfigError("sweep: grids must be nonempty");
    if (grid.repeats == 0) throw ConfigError("sweep: repeats must be >= 1");
    const std::size_t reps = grid.repeats;
    SweepResult result;

    std::vector<Job> jobs;
    for (auto k : grid.experts)
        for (std::size_t r = 0; r < reps; ++r) jobs.push_back({k, 0.0, r});
    auto stage1 = run_jobs(jobs, evaluate, workers);
    for (std::size_t c = 0; c < grid.experts.size(); ++c)
        result.stage1.push_back({grid.experts[c], 0.0, average(stage1, c * reps, reps)});
    const std::size_t k_best = pick_lowest(result.stage1);
    result.best_experts = result.stage1[k_best].experts;

    jobs.clear();
    for (double lambda : grid.lambdas) {
        if (lambda == 0.0) continue;
        for (std::size_t r = 0; r < reps; ++r) jobs.push_back({result.best_experts, lambda, r});
    }
    auto stage2 = run_jobs(jobs, evaluate, workers);
    std::size_t cursor = 0;
    for (double lambda : grid.lambdas) {
        if (lambda == 0.0) {
            result.stage2.push_back({result.best_experts, 0.0, result.stage1[k_best].losses});
            continue;
        }
        result.stage2.push_back({result.best_experts, lambda, average(stage2, cursor, reps)});
        cursor += reps;
    }
    result.best_lambda = result.stage2[pick_lowest(result.stage2)].lambda;
    return result;
}

CandidateEvaluator training_evaluator(const TrainConfig &base, const SweepGrid &grid, const Dataset &train,
                                      const Dataset &id_dev) {
    const std::size_t k_min = *std::min_element(grid.experts.begin(), grid.experts.end());
    const std::size_t ell = base.ell.value_or(set_ell(base.batch_size, k_min));
    return [base, ell, &train, &id_dev](std::size_t experts, double lambda, std::size_t repeat) {
        TrainConfig cfg = base;
        cfg.model.experts = experts;
        cfg.lambda = lambda;
        cfg.ell = ell;
        cfg.seed = derive_seed(base.seed, "repeat:" + std::to_string(repeat));
        const auto fitted = fit(cfg, train, id_dev);
        return eval_losses(fitted.model, id_dev, cfg.batch_size, ell, derive_seed(cfg.seed, "dev-shuffle"));
    };
}

} // namespace mos
