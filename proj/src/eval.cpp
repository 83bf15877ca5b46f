#include "mos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mos/errors.hpp"
#include "mos/trainer.hpp"

namespace mos {

namespace {

void require_nonempty(const Dataset &data, const char *what) {
    if (data.size() == 0) throw UsageError(std::string(what) + ": empty split");
}

} // namespace

std::map<DecisionRule, double> accuracy_all_rules(const ModelParams &params, const Dataset &data, Execution exec) {
    require_nonempty(data, "accuracy");
    const auto rows = all_rows(data);
    const auto outputs = forward_batch(params, data, rows, false, exec);
    std::map<DecisionRule, double> out;
    for (auto rule : kAllRules) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < outputs.size(); ++i)
            if (aggregate(outputs[i].expert_dists, outputs[i].router_dist, rule).label == data.labels[i]) ++hits;
        out[rule] = static_cast<double>(hits) / static_cast<double>(data.size());
    }
    return out;
}

double accuracy(const ModelParams &params, const Dataset &data, DecisionRule rule, Execution exec) {
    require_nonempty(data, "accuracy");
    const auto rows = all_rows(data);
    const auto outputs = forward_batch(params, data, rows, false, exec);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
        if (aggregate(outputs[i].expert_dists, outputs[i].router_dist, rule).label == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

PenaltyStats summarize(const std::vector<double> &values) {
    PenaltyStats s;
    s.batches = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

PenaltyStats penalty_statistic(const ModelParams &params, const Dataset &data, std::size_t batch_size,
                               std::size_t ell, std::uint64_t seed, Execution exec) {
    if (data.size() < batch_size || batch_size < 2)
        throw UsageError("penalty_statistic: split must hold at least one batch of >= 2 instances");
    return summarize(scan_losses(params, data, batch_size, ell, seed, exec).batch_penalties);
}

Vector mixture_profile(const ModelParams &params, const Dataset &data, Execution exec) {
    require_nonempty(data, "mixture_profile");
    const auto outputs = forward_batch(params, data, all_rows(data), false, exec);
    Vector mean(params.config.experts, 0.0);
    for (const auto &o : outputs)
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += o.router_dist[k];
    for (double &v : mean) v /= static_cast<double>(outputs.size());
    return mean;
}

Tensor2 expert_prediction_profile(const ModelParams &params, const Dataset &data, Execution exec) {
    require_nonempty(data, "expert_prediction_profile");
    const auto outputs = forward_batch(params, data, all_rows(data), false, exec);
    Tensor2 mean(params.config.experts, params.config.num_labels);
    for (const auto &o : outputs)
        for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += o.expert_dists.data[i];
    for (double &v : mean.data) v /= static_cast<double>(outputs.size());
    return mean;
}

double max_pairwise_l1(const Tensor2 &rows) {
    double best = 0.0;
    for (std::size_t a = 0; a < rows.rows; ++a)
        for (std::size_t b = a + 1; b < rows.rows; ++b) {
            double d = 0.0;
            for (std::size_t c = 0; c < rows.cols; ++c) d += std::abs(rows(a, c) - rows(b, c));
            best = std::max(best, d);
        }
    return best;
}

ShiftVerdict detect_shift(const PenaltyStats &reference, const PenaltyStats &target, double multiplier) {
    if (reference.std < 0.0) throw UsageError("detect_shift: negative reference std");
    ShiftVerdict v;
    v.reference = reference;
    v.target = target;
    v.threshold = multiplier;
    v.score = std::abs(target.mean - reference.mean) / std::max(reference.std, kShiftStdFloor);
    v.shifted = v.score > multiplier;
    return v;
}

SplitReport evaluate_split(const ModelParams &params, const Dataset &data, const ReportOptions &options,
                           Execution exec) {
    require_nonempty(data, "evaluate_split");
    SplitReport r;
    r.split = data.split;
    r.size = data.size();

    const auto outputs = forward_batch(params, data, all_rows(data), false, exec);
    const std::size_t k_count = params.config.experts;
    std::map<DecisionRule, std::size_t> hits;
    r.mixture_profile.assign(k_count, 0.0);
    r.expert_profile = Tensor2(k_count, params.config.num_labels);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto &o = outputs[i];
        for (auto rule : kAllRules)
            if (aggregate(o.expert_dists, o.router_dist, rule).label == data.labels[i]) ++hits[rule];
        for (std::size_t k = 0; k < k_count; ++k) r.mixture_profile[k] += o.router_dist[k];
        for (std::size_t j = 0; j < o.expert_dists.data.size(); ++j) r.expert_profile.data[j] += o.expert_dists.data[j];
    }
    const auto n = static_cast<double>(outputs.size());
    for (auto rule : kAllRules) r.accuracy[rule] = static_cast<double>(hits[rule]) / n;
    for (double &v : r.mixture_profile) v /= n;
    for (double &v : r.expert_profile.data) v /= n;

    if (data.size() >= options.batch_size && options.batch_size >= 2)
        r.penalty = penalty_statistic(params, data, options.batch_size, options.ell, options.seed, exec);
    return r;
}

GatedResult gated_accuracy(const SplitReport &report, const PenaltyStats &reference, DecisionRule control_rule,
                           double multiplier) {
    GatedResult g;
    g.verdict = detect_shift(reference, report.penalty, multiplier);
    g.rule_used = g.verdict.shifted ? control_rule : DecisionRule::Estimated;
    g.accuracy = report.accuracy.at(g.rule_used);
    return g;
}

} // namespace mos
