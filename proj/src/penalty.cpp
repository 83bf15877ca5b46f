#include "mos/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mos/errors.hpp"

namespace mos {

Tensor2 assemble_pi(std::span<const Vector> router_dists) {
    if (router_dists.empty()) return {};
    const std::size_t k_count = router_dists.front().size();
    Tensor2 pi(k_count, router_dists.size());
    for (std::size_t m = 0; m < router_dists.size(); ++m) {
        if (router_dists[m].size() != k_count) throw ShapeError("assemble_pi: inconsistent expert count in batch");
        for (std::size_t k = 0; k < k_count; ++k) pi(k, m) = router_dists[m][k];
    }
    return pi;
}

Tensor2 topl_keep_mask(const Tensor2 &square, std::size_t ell) {
    if (square.rows != square.cols) throw ShapeError("topl_dropout: matrix must be square");
    const std::size_t n = square.rows;
    Tensor2 mask(n, n, 1.0);
    const std::size_t drop = std::min(ell, n);
    if (drop == 0) return mask;
    std::vector<std::size_t> order(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        const auto row = square.row(r);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
        for (std::size_t i = 0; i < drop; ++i) mask(r, order[i]) = 0.0;
    }
    return mask;
}

Tensor2 topl_dropout(const Tensor2 &square, std::size_t ell) {
    Tensor2 out = square;
    const Tensor2 mask = topl_keep_mask(square, ell);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (mask.data[i] == 0.0) out.data[i] = 0.0;
    return out;
}

std::size_t clamp_ell(std::size_t ell, std::size_t batch_size) {
    if (batch_size < 2) throw UsageError("clamp_ell: batch needs at least two instances");
    return std::min(ell, batch_size - 2);
}

std::optional<PenaltyComputation> penalty(std::span<const Vector> router_dists, std::size_t ell) {
    const std::size_t m_count = router_dists.size();
    if (m_count < 2) return std::nullopt;

    PenaltyComputation pc;
    pc.pi = assemble_pi(router_dists);
    pc.ell_effective = clamp_ell(ell, m_count);

    pc.gram = Tensor2(m_count, m_count);
    for (std::size_t i = 0; i < m_count; ++i) {
        for (std::size_t j = i; j < m_count; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < pc.pi.rows; ++k) dot += pc.pi(k, i) * pc.pi(k, j);
            pc.gram(i, j) = dot - (i == j ? 1.0 : 0.0);
            pc.gram(j, i) = pc.gram(i, j);
        }
    }
    pc.mask = topl_keep_mask(pc.gram, pc.ell_effective);

    double num_sq = 0.0;
    for (std::size_t i = 0; i < pc.gram.data.size(); ++i) num_sq += pc.mask.data[i] * pc.gram.data[i] * pc.gram.data[i];
    pc.numerator = std::sqrt(num_sq);

    // d_l(J - I): each row keeps (M - 1 - l) off-diagonal ones.
    Tensor2 ones_minus_eye(m_count, m_count, 1.0);
    for (std::size_t i = 0; i < m_count; ++i) ones_minus_eye(i, i) = 0.0;
    const Tensor2 dropped = topl_dropout(ones_minus_eye, pc.ell_effective);
    double den_sq = 0.0;
    for (double v : dropped.data) den_sq += v * v;
    pc.denominator = std::sqrt(den_sq);

    pc.value = pc.numerator / pc.denominator;
    return pc;
}

std::vector<Vector> penalty_gradient(const PenaltyComputation &pc) {
    const std::size_t m_count = pc.gram.rows;
    const std::size_t k_count = pc.pi.rows;
    std::vector<Vector> grads(m_count, Vector(k_count, 0.0));
    if (pc.value <= kPenaltyGradFloor) return grads;

    // dL/dG_ij = mask_ij G_ij / (N * den); G_ij = <pi_i, pi_j> - delta_ij
    // => dL/dpi_m = sum_j (W_mj + W_jm) pi_j
    const double scale = 1.0 / (pc.numerator * pc.denominator);
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t j = 0; j < m_count; ++j) {
            const double w = scale * (pc.mask(m, j) * pc.gram(m, j) + pc.mask(j, m) * pc.gram(j, m));
            if (w == 0.0) continue;
            for (std::size_t k = 0; k < k_count; ++k) grads[m][k] += w * pc.pi(k, j);
        }
    }
    return grads;
}

std::size_t set_ell(std::size_t batch_size, std::size_t k_min) {
    if (batch_size == 0 || k_min == 0) throw UsageError("set_ell: batch size and expert count must be >= 1");
    std::size_t ell = 1;
    while (k_min * ell < batch_size) ell *= 2;
    return ell;
}

std::uint64_t mask_signature(const PenaltyComputation &pc) {
    std::uint64_t hash = 1469598103934665603ULL;
    for (double v : pc.mask.data) {
        hash ^= v != 0.0 ? 0x55U : 0xaaU;
        hash *= 1099511628211ULL;
    }
    return hash;
}

} // namespace mos
