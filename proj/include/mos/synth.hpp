#pragma once

// Synthetic shortcut benchmark.
//
// x = [core block | shortcut block 1 | ... | shortcut block G]
//   core block      = mu_y + N(0, core_noise^2 I)        (the genuine, harder feature)
//   shortcut block g = onehot(a_g) + N(0, shortcut_noise^2 I)
// where a_g = y with probability rho_g(split), otherwise uniform over the
// remaining labels. The label marginal is uniform in every split.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mos/dataset.hpp"
#include "mos/nn.hpp"

namespace mos {

struct GeneratorConfig {
    std::size_t num_labels = 3;
    std::size_t num_shortcuts = 3;
    std::size_t core_dim = 10;
    /// nullopt: calibrated so nearest-prototype accuracy on the core block
    /// matches target_core_accuracy.
    std::optional<double> core_noise;
    double target_core_accuracy = 0.85;
    double shortcut_noise = 0.05;
    std::uint64_t seed = 0;
    std::map<std::string, double> correlation = {{"train", 0.9}, {"id_dev", 0.9}, {"ood_test", 0.1}};

    void validate() const;
    std::size_t feature_dim() const { return core_dim + num_shortcuts * num_labels; }

    bool operator==(const GeneratorConfig &) const = default;
};

struct SplitSpec {
    std::string name;
    std::size_t size = 0;
    /// Overrides the config's per-split correlation for every shortcut.
    std::optional<double> correlation;
    /// Per-shortcut correlation; takes precedence when non-empty.
    std::vector<double> per_shortcut;

    void validate(const GeneratorConfig &config) const;
};

class Generator {
public:
    explicit Generator(GeneratorConfig config);

    const GeneratorConfig &config() const { return config_; }
    const Tensor2 &prototypes() const { return prototypes_; }
    double core_noise() const { return core_noise_; }

    /// Correlation for each shortcut in this split.
    std::vector<double> resolve_correlation(const SplitSpec &spec) const;

    /// Deterministic in (config, spec).
    Dataset sample(const SplitSpec &spec) const;

private:
    GeneratorConfig config_;
    Tensor2 prototypes_;
    double core_noise_ = 0.0;
};

Generator make_generator(const GeneratorConfig &config);

Dataset sample_split(const Generator &generator, const SplitSpec &spec);

/// Seed of an independent stream derived from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

/// Monte-Carlo accuracy of nearest-prototype classification on the core block.
double bayes_core_accuracy(const Generator &generator, std::size_t n, std::uint64_t seed = 1);

/// Same oracle for an arbitrary noise level, with common random numbers so
/// the result is monotone in `noise` for a fixed seed.
double core_accuracy_at(const Tensor2 &prototypes, double noise, std::size_t n, std::uint64_t seed);

/// Bisection on core_accuracy_at.
double calibrate_core_noise(const Tensor2 &prototypes, double target, std::size_t n = 20000,
                            std::uint64_t seed = 0xc0deULL);

/// Accuracy of a majority vote over decoded shortcut blocks (argmax per
/// block, lowest label wins ties).
double shortcut_only_accuracy(const Generator &generator, const SplitSpec &split, std::size_t n);
double shortcut_only_accuracy(const Dataset &data, std::size_t core_dim);

/// Columns [first, first+count) of the features, as a dataset copy.
Dataset select_columns(const Dataset &data, std::size_t first, std::size_t count);

} // namespace mos
