#include "mos/posthoc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mos/errors.hpp"

namespace mos {

std::string_view rule_name(DecisionRule rule) {
    switch (rule) {
    case DecisionRule::Estimated: return "estimated";
    case DecisionRule::Uniform: return "uniform";
    case DecisionRule::Argmin: return "argmin";
    }
    return "unknown";
}

DecisionRule parse_rule(std::string_view name) {
    if (name == "estimated") return DecisionRule::Estimated;
    if (name == "uniform") return DecisionRule::Uniform;
    if (name == "argmin") return DecisionRule::Argmin;
    throw ConfigError("unknown decision rule '" + std::string(name) + "' (expected estimated|uniform|argmin)");
}

std::size_t argmax_lowest(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

namespace {

void check_experts(const Tensor2 &experts) {
    if (experts.rows == 0 || experts.cols == 0) throw ShapeError("aggregate: empty expert matrix");
    if (experts.data.size() != experts.rows * experts.cols) throw ShapeError("aggregate: malformed expert matrix");
}

} // namespace

Decision aggregate(const Tensor2 &experts, std::span<const double> router, DecisionRule rule) {
    check_experts(experts);
    const std::size_t k_count = experts.rows;
    const std::size_t labels = experts.cols;
    if (!router.empty() && router.size() != k_count)
        throw ShapeError("aggregate: router length does not match expert count");
    if (rule == DecisionRule::Estimated && router.empty())
        throw ShapeError("aggregate: estimated rule needs router weights");

    Decision d;
    d.rule = rule;
    d.scores.assign(labels, 0.0);
    switch (rule) {
    case DecisionRule::Estimated:
        for (std::size_t k = 0; k < k_count; ++k)
            for (std::size_t y = 0; y < labels; ++y) d.scores[y] += router[k] * experts(k, y);
        break;
    case DecisionRule::Uniform: {
        for (std::size_t k = 0; k < k_count; ++k)
            for (std::size_t y = 0; y < labels; ++y) d.scores[y] += experts(k, y);
        const double inv = 1.0 / static_cast<double>(k_count);
        for (double &s : d.scores) s *= inv;
        break;
    }
    case DecisionRule::Argmin: {
        std::vector<std::size_t> chosen(labels, 0);
        for (std::size_t y = 0; y < labels; ++y) {
            for (std::size_t k = 1; k < k_count; ++k)
                if (experts(k, y) < experts(chosen[y], y)) chosen[y] = k;
            d.scores[y] = experts(chosen[y], y);
        }
        d.label = argmax_lowest(d.scores);
        d.expert = chosen[d.label];
        return d;
    }
    }
    d.label = argmax_lowest(d.scores);
    return d;
}

double worst_case_risk(const Tensor2 &experts, std::size_t label) {
    check_experts(experts);
    if (label >= experts.cols) throw UsageError("worst_case_risk: label out of range");
    double lowest = experts(0, label);
    for (std::size_t k = 1; k < experts.rows; ++k) lowest = std::min(lowest, experts(k, label));
    return 1.0 - lowest;
}

namespace {

// Calls visit(weights) for every point of the simplex grid with the given
// number of subdivisions.
template <typename Visit>
void enumerate_simplex(std::size_t dims, std::size_t steps, Visit &&visit) {
    std::vector<std::size_t> counts(dims, 0);
    std::vector<double> weights(dims, 0.0);
    auto rec = [&](auto &self, std::size_t pos, std::size_t remaining) -> void {
        if (pos + 1 == dims) {
            counts[pos] = remaining;
            for (std::size_t i = 0; i < dims; ++i)
                weights[i] = static_cast<double>(counts[i]) / static_cast<double>(steps);
            visit(std::span<const double>(weights));
            return;
        }
        for (std::size_t c = 0; c <= remaining; ++c) {
            counts[pos] = c;
            self(self, pos + 1, remaining - c);
        }
    };
    rec(rec, 0, steps);
}

} // namespace

Decision minimax_oracle(const Tensor2 &experts, double grid_step) {
    check_experts(experts);
    if (!(grid_step > 0.0 && grid_step <= 0.5)) throw UsageError("minimax_oracle: grid_step must lie in (0, 0.5]");
    if (experts.rows > kOracleMaxExperts)
        throw UsageError("minimax_oracle: grid enumeration is limited to K <= " + std::to_string(kOracleMaxExperts));

    const auto steps = static_cast<std::size_t>(std::llround(1.0 / grid_step));
    const std::size_t labels = experts.cols;
    Vector worst(labels, -std::numeric_limits<double>::infinity());
    enumerate_simplex(experts.rows, std::max<std::size_t>(steps, 1), [&](std::span<const double> w) {
        for (std::size_t y = 0; y < labels; ++y) {
            double hit = 0.0;
            for (std::size_t k = 0; k < experts.rows; ++k) hit += w[k] * experts(k, y);
            worst[y] = std::max(worst[y], 1.0 - hit);
        }
    });

    Decision d;
    d.rule = DecisionRule::Argmin;
    d.scores.resize(labels);
    // Score = 1 - worst risk so that the usual argmax/tie-break applies.
    for (std::size_t y = 0; y < labels; ++y) d.scores[y] = 1.0 - worst[y];
    d.label = argmax_lowest(d.scores);
    return d;
}

} // namespace mos
