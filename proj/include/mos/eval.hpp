#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mos/dataset.hpp"
#include "mos/kernels.hpp"
#include "mos/model.hpp"
#include "mos/posthoc.hpp"

namespace mos {

double accuracy(const ModelParams &params, const Dataset &data, DecisionRule rule,
                Execution exec = Execution::Parallel);

/// One pass over the split, all rules at once.
std::map<DecisionRule, double> accuracy_all_rules(const ModelParams &params, const Dataset &data,
                                                  Execution exec = Execution::Parallel);

struct PenaltyStats {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation over batches, 0 for one batch
    std::size_t batches = 0;
};

PenaltyStats summarize(const std::vector<double> &values);

/// Per-batch L_R after one seeded shuffle. Throws UsageError when the split
/// is smaller than one batch.
PenaltyStats penalty_statistic(const ModelParams &params, const Dataset &data, std::size_t batch_size,
                               std::size_t ell, std::uint64_t seed, Execution exec = Execution::Parallel);

/// Mean router distribution over the split (no post-hoc control).
Vector mixture_profile(const ModelParams &params, const Dataset &data, Execution exec = Execution::Parallel);

/// Row k: mean of p^k(.|x) over the split.
Tensor2 expert_prediction_profile(const ModelParams &params, const Dataset &data,
                                  Execution exec = Execution::Parallel);

/// Largest L1 distance between two rows.
double max_pairwise_l1(const Tensor2 &rows);

inline constexpr double kShiftStdFloor = 1e-12;
inline constexpr double kDefaultShiftMultiplier = 3.0;

struct ShiftVerdict {
    PenaltyStats reference;
    PenaltyStats target;
    double score = 0.0;
    double threshold = kDefaultShiftMultiplier;
    bool shifted = false;
};

/// score = |target.mean - reference.mean| / max(reference.std, floor).
ShiftVerdict detect_shift(const PenaltyStats &reference, const PenaltyStats &target,
                          double multiplier = kDefaultShiftMultiplier);

struct SplitReport {
    std::string split;
    std::size_t size = 0;
    std::map<DecisionRule, double> accuracy;
    PenaltyStats penalty;
    Vector mixture_profile;
    Tensor2 expert_profile;
};

struct ReportOptions {
    std::size_t batch_size = 32;
    std::size_t ell = 8;
    std::uint64_t seed = 0;
};

SplitReport evaluate_split(const ModelParams &params, const Dataset &data, const ReportOptions &options,
                           Execution exec = Execution::Parallel);

/// Post-hoc control applied only when the split's L_R is flagged as shifted
/// relative to the reference.
struct GatedResult {
    ShiftVerdict verdict;
    DecisionRule rule_used = DecisionRule::Estimated;
    double accuracy = 0.0;
};

GatedResult gated_accuracy(const SplitReport &report, const PenaltyStats &reference, DecisionRule control_rule,
                           double multiplier = kDefaultShiftMultiplier);

} // namespace mos
