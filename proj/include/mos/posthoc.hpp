#pragma once

// Inference-time aggregation of expert distributions.
//
// Estimated: argmax_y sum_k pi_k p^k(y)
// Uniform:   argmax_y (1/K) sum_k p^k(y)
// Argmin:    argmax_y min_k p^k(y)   (maximin over the expert simplex)
//
// Ties go to the lowest label index, and to the lowest expert index for k*.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mos/nn.hpp"

namespace mos {

enum class DecisionRule { Estimated, Uniform, Argmin };

inline constexpr DecisionRule kAllRules[] = {DecisionRule::Estimated, DecisionRule::Uniform, DecisionRule::Argmin};

std::string_view rule_name(DecisionRule rule);
/// Accepts `estimated | uniform | argmin`; throws ConfigError otherwise.
DecisionRule parse_rule(std::string_view name);

struct Decision {
    std::size_t label = 0;
    DecisionRule rule = DecisionRule::Estimated;
    std::optional<std::size_t> expert; // k* for the chosen label, Argmin only
    Vector scores;
};

/// Index of the largest entry, lowest index on ties.
std::size_t argmax_lowest(std::span<const double> values);

/// `experts` is K x |Y|. `router` is ignored by Uniform and Argmin but must
/// still have length K when non-empty.
Decision aggregate(const Tensor2 &experts, std::span<const double> router, DecisionRule rule);

/// sup over mixture weights of the 0-1 risk of answering `label`:
/// 1 - min_k p^k(label).
double worst_case_risk(const Tensor2 &experts, std::size_t label);

/// Brute-force minimax: enumerates mixture weights on a simplex grid of the
/// given spacing and picks the label whose largest risk is smallest.
/// Limited to K <= 4.
Decision minimax_oracle(const Tensor2 &experts, double grid_step);

inline constexpr std::size_t kOracleMaxExperts = 4;

} // namespace mos
