#pragma once

// Router-diversity penalty over a mini-batch:
//
//   L_R = || d_l(Pi^T Pi - I) ||_F / || d_l(J - I) ||_F
//
// where Pi is the K x M matrix of router distributions and d_l zeroes the l
// largest entries of every row.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mos/nn.hpp"

namespace mos {

/// Gradients below this penalty value are reported as zero (the norm is not
/// differentiable at the zero matrix).
inline constexpr double kPenaltyGradFloor = 1e-12;

struct PenaltyComputation {
    Tensor2 pi;    // K x M
    Tensor2 gram;  // M x M, Pi^T Pi - I
    Tensor2 mask;  // M x M, 1 = kept, 0 = dropped
    double numerator = 0.0;
    double denominator = 0.0;
    double value = 0.0;
    std::size_t ell_effective = 0;
};

/// Column m of the result is router_dists[m]. Throws ShapeError on ragged K.
Tensor2 assemble_pi(std::span<const Vector> router_dists);

/// 1 where an entry survives row-wise top-l dropout. Per row the l largest
/// signed values are dropped, lowest column index first among equal values.
Tensor2 topl_keep_mask(const Tensor2 &square, std::size_t ell);

/// The matrix with the top-l entries of every row zeroed in place.
Tensor2 topl_dropout(const Tensor2 &square, std::size_t ell);

/// min(ell, M - 2); callers must check M >= 2 first.
std::size_t clamp_ell(std::size_t ell, std::size_t batch_size);

/// Returns nullopt when the batch has fewer than two instances.
std::optional<PenaltyComputation> penalty(std::span<const Vector> router_dists, std::size_t ell);

/// dL_R / d pi(x_m) for every column, with the dropout mask held fixed.
std::vector<Vector> penalty_gradient(const PenaltyComputation &pc);

/// Smallest power of two l with k_min * l >= batch_size.
std::size_t set_ell(std::size_t batch_size, std::size_t k_min);

/// Hash of the dropout mask; changes iff the selection changes.
std::uint64_t mask_signature(const PenaltyComputation &pc);

} // namespace mos
