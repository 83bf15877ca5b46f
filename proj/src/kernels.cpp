#include "mos/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mos/errors.hpp"

namespace mos {

std::vector<std::size_t> all_rows(const Dataset &data) {
    std::vector<std::size_t> rows(data.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t> &order, std::size_t batch_size) {
    if (batch_size == 0) throw UsageError("make_batches: batch size must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

int parallel_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_parallel_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

namespace {

void check_rows(const Dataset &data, std::span<const std::size_t> rows) {
    for (auto r : rows)
        if (r >= data.size()) throw UsageError("batch row index out of range");
}

} // namespace

std::vector<MixtureOutput> forward_batch(const ModelParams &params, const Dataset &data,
                                         std::span<const std::size_t> rows, bool keep_cache, Execution exec) {
    check_rows(data, rows);
    const auto n = static_cast<std::ptrdiff_t>(rows.size());
    std::vector<MixtureOutput> outputs(rows.size());
    if (exec == Execution::Serial || parallel_threads() <= 1) {
        for (std::ptrdiff_t i = 0; i < n; ++i)
            outputs[i] = mixture_forward(params, data.features.row(rows[i]), keep_cache);
        return outputs;
    }
    // Exceptions cannot cross the parallel region; shapes are checked once up front.
    if (data.features.cols != params.encoder.input.in_dim()) throw ShapeError("forward_batch: input length mismatch");
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) outputs[i] = mixture_forward(params, data.features.row(rows[i]), keep_cache);
    return outputs;
}

JointLoss joint_loss(const ModelParams &params, const Dataset &data, std::span<const std::size_t> rows,
                     const JointLossOptions &options, ModelParams *grads, Execution exec) {
    if (rows.empty()) throw UsageError("joint_loss: empty batch");
    const bool want_grad = grads != nullptr;
    const std::size_t m_count = rows.size();
    const auto n = static_cast<std::ptrdiff_t>(m_count);
    const std::size_t labels = params.config.num_labels;
    for (auto r : rows)
        if (data.labels[r] >= labels) throw UsageError("joint_loss: label out of range");

    auto outputs = forward_batch(params, data, rows, true, exec);

    JointLoss result;
    double ce_sum = 0.0;
    for (std::size_t i = 0; i < m_count; ++i)
        ce_sum += -std::log(std::max(outputs[i].aggregate[data.labels[rows[i]]], kProbabilityFloor));
    result.classification = ce_sum / static_cast<double>(m_count);

    std::vector<Vector> router_dists;
    router_dists.reserve(m_count);
    for (const auto &o : outputs) router_dists.push_back(o.router_dist);
    const auto pc = penalty(router_dists, options.ell);
    if (pc) result.penalty = pc->value;
    result.total = options.classification_weight * result.classification +
                   (pc ? options.lambda * pc->value : 0.0);

    std::uint64_t region = pc ? mask_signature(*pc) : 0;
    for (const auto &o : outputs) region = (region ^ activation_signature(o)) * 1099511628211ULL;
    result.region = region;

    if (!want_grad) return result;

    std::vector<Vector> router_upstream;
    if (pc && options.lambda != 0.0) {
        router_upstream = penalty_gradient(*pc);
        for (auto &g : router_upstream)
            for (double &v : g) v *= options.lambda;
    }

    auto aggregate_upstream = [&](std::size_t i) {
        Vector g(labels, 0.0);
        const std::size_t y = data.labels[rows[i]];
        const double p = outputs[i].aggregate[y];
        if (p > kProbabilityFloor) g[y] = -options.classification_weight / (static_cast<double>(m_count) * p);
        return g;
    };
    auto router_for = [&](std::size_t i) -> std::span<const double> {
        return router_upstream.empty() ? std::span<const double>() : std::span<const double>(router_upstream[i]);
    };

    *grads = zeros_like(params);
    // Both paths give identical bits, so a single thread takes the cheaper one.
    if (exec == Execution::Serial || parallel_threads() <= 1) {
        for (std::size_t i = 0; i < m_count; ++i) {
            const Vector up = aggregate_upstream(i);
            mixture_backward(params, outputs[i], up, router_for(i), *grads);
        }
        return result;
    }

    std::vector<ModelParams> partial(m_count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        partial[i] = zeros_like(params);
        const Vector up = aggregate_upstream(static_cast<std::size_t>(i));
        mixture_backward(params, outputs[i], up, router_for(static_cast<std::size_t>(i)), partial[i]);
    }
    for (const auto &p : partial) axpy(1.0, p, *grads);
    return result;
}

} // namespace mos
