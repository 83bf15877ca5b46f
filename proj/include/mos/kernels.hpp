#pragma once

// Batch kernels over a mini-batch of rows. Each kernel has an OpenMP path and
// a serial reference path; both produce bitwise-identical results because
// per-instance work is reduced in row order. With one OpenMP thread the
// parallel path runs the serial code.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mos/dataset.hpp"
#include "mos/model.hpp"
#include "mos/penalty.hpp"

namespace mos {

enum class Execution { Serial, Parallel };

std::vector<MixtureOutput> forward_batch(const ModelParams &params, const Dataset &data,
                                         std::span<const std::size_t> rows, bool keep_cache,
                                         Execution exec = Execution::Parallel);

struct JointLossOptions {
    double classification_weight = 1.0;
    double lambda = 0.0;
    std::size_t ell = 0;
};

struct JointLoss {
    double classification = 0.0;       // mean -log p(y|x) over the batch
    std::optional<double> penalty;     // absent when the batch is too small
    double total = 0.0;                // weight * classification + lambda * penalty
    std::uint64_t region = 0;          // ReLU patterns and dropout mask, for grad checks
};

/// Joint loss over one batch; when `grads` is non-null its contents are
/// replaced by the gradient of `total` wrt every parameter.
JointLoss joint_loss(const ModelParams &params, const Dataset &data, std::span<const std::size_t> rows,
                     const JointLossOptions &options, ModelParams *grads, Execution exec = Execution::Parallel);

/// Number of OpenMP threads the parallel path will use (1 without OpenMP).
int parallel_threads();
void set_parallel_threads(int threads);

} // namespace mos
