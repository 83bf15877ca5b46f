#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mos/nn.hpp"

namespace mos {

/// N labelled instances. `shortcuts` (N x G, row-major) records the planted
/// shortcut values for analysis only; training reads features and labels.
struct Dataset {
    std::string split;
    std::size_t num_labels = 0;
    std::size_t num_shortcuts = 0;
    Tensor2 features;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> shortcuts;

    std::size_t size() const { return labels.size(); }
    std::size_t shortcut(std::size_t i, std::size_t g) const { return shortcuts[i * num_shortcuts + g]; }

    bool operator==(const Dataset &) const = default;
};

/// Rows [0, n) in order.
std::vector<std::size_t> all_rows(const Dataset &data);

/// Consecutive batches of `batch_size` over `order`; the last may be short.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t> &order, std::size_t batch_size);

} // namespace mos
