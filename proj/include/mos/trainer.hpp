#pragma once

// Mini-batch training under L_C + lambda * L_R, best-epoch selection on ID
// dev, and the two-stage (K, then lambda) hyperparameter search.
//
// Nothing here accepts an OOD split: fit() and two_stage_search() only see
// the training split and the ID dev split.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mos/dataset.hpp"
#include "mos/kernels.hpp"
#include "mos/model.hpp"
#include "mos/nn.hpp"

namespace mos {

struct TrainConfig {
    MosConfig model;           // model.experts is K
    double lambda = 0.0;
    std::optional<std::size_t> ell; // nullopt: set_ell(batch_size, ell_k_min or K)
    std::optional<std::size_t> ell_k_min;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
    std::size_t resolved_ell() const;

    bool operator==(const TrainConfig &) const = default;
};

struct EpochStats {
    double train_classification = 0.0;
    double train_penalty = 0.0;
    double dev_accuracy = 0.0;
    double dev_classification = 0.0;
    double dev_penalty = 0.0;

    double dev_objective() const { return dev_classification + dev_penalty; }
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
};

struct FitResult {
    ModelParams model;
    TrainHistory history;
};

struct Trainer {
    ModelParams params;
    AdamState optimizer;
};

Trainer make_trainer(const TrainConfig &config);

/// One shuffled pass over `train`. Returns mean L_C (per instance) and mean
/// L_R (per batch that has a penalty) in train_classification/train_penalty.
EpochStats train_epoch(Trainer &trainer, const Dataset &train, const TrainConfig &config, std::size_t epoch_index,
                       Execution exec = Execution::Parallel);

/// Highest dev accuracy, earliest epoch on ties.
std::size_t select_best_epoch(const TrainHistory &history);

FitResult fit(const TrainConfig &config, const Dataset &train, const Dataset &id_dev, std::ostream *progress = nullptr,
              Execution exec = Execution::Parallel);

struct LossScan {
    double mean_classification = 0.0;
    std::vector<double> batch_penalties;
};

/// Scans `data` in batches of `batch_size` after one seeded shuffle. The
/// final short batch is kept with l clamped; a final batch of one instance
/// contributes no penalty.
LossScan scan_losses(const ModelParams &params, const Dataset &data, std::size_t batch_size, std::size_t ell,
                     std::uint64_t shuffle_seed, Execution exec = Execution::Parallel);

struct SplitLosses {
    double classification = 0.0;
    double penalty = 0.0;
    double sum() const { return classification + penalty; }
};

SplitLosses eval_losses(const ModelParams &params, const Dataset &data, std::size_t batch_size, std::size_t ell,
                        std::uint64_t shuffle_seed = 0, Execution exec = Execution::Parallel);

/// Seeded permutation of [0, n).
std::vector<std::size_t> shuffled_rows(std::size_t n, std::uint64_t seed);

struct SweepCandidate {
    std::size_t experts = 0;
    double lambda = 0.0;
    SplitLosses losses; // averaged over repeats
};

struct SweepResult {
    std::vector<SweepCandidate> stage1; // lambda = 0, one per K
    std::vector<SweepCandidate> stage2; // K = K*, one per lambda
    std::size_t best_experts = 0;
    double best_lambda = 0.0;
};

struct SweepGrid {
    std::vector<std::size_t> experts = {5, 10, 15};
    std::vector<double> lambdas = {0.0, 0.5, 1.0};
    std::size_t repeats = 2;
};

/// ID-dev losses of one trained candidate for one repeat.
using CandidateEvaluator = std::function<SplitLosses(std::size_t experts, double lambda, std::size_t repeat)>;

/// Stage 1 fixes lambda = 0 and picks K* minimising L_C + L_R; stage 2 picks
/// lambda* under K*. Ties go to the earlier grid entry. A lambda = 0 entry in
/// stage 2 reuses the stage-1 result for K*. `workers` > 1 evaluates the
/// (candidate, repeat) jobs of a stage concurrently.
SweepResult two_stage_search(const SweepGrid &grid, const CandidateEvaluator &evaluate, std::size_t workers = 1);

/// Evaluator that trains with fit() and reports ID-dev losses of the best
/// epoch. l is fixed across candidates from the smallest K in the grid.
CandidateEvaluator training_evaluator(const TrainConfig &base, const SweepGrid &grid, const Dataset &train,
                                      const Dataset &id_dev);

} // namespace mos
