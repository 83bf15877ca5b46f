#include "mos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mos/errors.hpp"
#include "mos/posthoc.hpp"

namespace mos {

void GeneratorConfig::validate() const {
    if (num_labels < 2) throw ConfigError("generator: num_labels must be >= 2");
    if (core_dim < num_labels) throw ConfigError("generator: core_dim must be >= num_labels");
    if (shortcut_noise < 0.0) throw ConfigError("generator: shortcut_noise must be >= 0");
    if (core_noise && *core_noise < shortcut_noise)
        throw ConfigError("generator: core_noise must be >= shortcut_noise (shortcuts are the easy feature)");
    if (!core_noise && !(target_core_accuracy > 1.0 / static_cast<double>(num_labels) && target_core_accuracy < 1.0))
        throw ConfigError("generator: target_core_accuracy must lie between chance and 1");
    for (const auto &[name, rho] : correlation)
        if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("generator: correlation for '" + name + "' outside [0,1]");
}

void SplitSpec::validate(const GeneratorConfig &config) const {
    if (name.empty()) throw ConfigError("split: name must not be empty");
    if (size == 0) throw ConfigError("split '" + name + "': size must be >= 1");
    if (!per_shortcut.empty() && per_shortcut.size() != config.num_shortcuts)
        throw ConfigError("split '" + name + "': per_shortcut needs one value per shortcut");
    auto check = [&](double rho) {
        if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("split '" + name + "': correlation outside [0,1]");
    };
    if (correlation) check(*correlation);
    for (double rho : per_shortcut) check(rho);
    if (per_shortcut.empty() && !correlation && !config.correlation.contains(name))
        throw ConfigError("split '" + name + "': no correlation configured");
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
    // FNV-1a over the label, folded into splitmix64 of the parent.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = parent ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

Tensor2 draw_prototypes(std::size_t labels, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor2 mu(labels, dim);
    for (std::size_t y = 0; y < labels; ++y) {
        auto row = mu.row(y);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double &v : row) {
                v = normal(rng);
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double &v : row) v /= norm;
    }
    return mu;
}

std::size_t nearest_prototype(const Tensor2 &prototypes, std::span<const double> point) {
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t y = 0; y < prototypes.rows; ++y) {
        const auto mu = prototypes.row(y);
        double dist = 0.0;
        for (std::size_t i = 0; i < point.size(); ++i) dist += (point[i] - mu[i]) * (point[i] - mu[i]);
        if (y == 0 || dist < best_dist) {
            best = y;
            best_dist = dist;
        }
    }
    return best;
}

} // namespace

Generator::Generator(GeneratorConfig config) : config_(std::move(config)) {
    config_.validate();
    prototypes_ = draw_prototypes(config_.num_labels, config_.core_dim, derive_seed(config_.seed, "prototypes"));
    core_noise_ = config_.core_noise ? *config_.core_noise
                                     : calibrate_core_noise(prototypes_, config_.target_core_accuracy, 20000,
                                                            derive_seed(config_.seed, "calibration"));
    if (core_noise_ < config_.shortcut_noise) core_noise_ = config_.shortcut_noise;
}

Generator make_generator(const GeneratorConfig &config) { return Generator(config); }

std::vector<double> Generator::resolve_correlation(const SplitSpec &spec) const {
    spec.validate(config_);
    if (!spec.per_shortcut.empty()) return spec.per_shortcut;
    const double rho = spec.correlation ? *spec.correlation : config_.correlation.at(spec.name);
    return std::vector<double>(config_.num_shortcuts, rho);
}

Dataset Generator::sample(const SplitSpec &spec) const {
    const auto rho = resolve_correlation(spec);
    const std::size_t labels = config_.num_labels;
    const std::size_t groups = config_.num_shortcuts;

    Dataset data;
    data.split = spec.name;
    data.num_labels = labels;
    data.num_shortcuts = groups;
    data.features = Tensor2(spec.size, config_.feature_dim());
    data.labels.resize(spec.size);
    data.shortcuts.resize(spec.size * groups);

    std::mt19937_64 rng(derive_seed(config_.seed, "split:" + spec.name));
    std::uniform_int_distribution<std::size_t> pick_label(0, labels - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, labels - 2);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (std::size_t i = 0; i < spec.size; ++i) {
        const std::size_t y = pick_label(rng);
        data.labels[i] = y;
        auto x = data.features.row(i);
        const auto mu = prototypes_.row(y);
        for (std::size_t j = 0; j < config_.core_dim; ++j) x[j] = mu[j] + core_noise_ * normal(rng);
        for (std::size_t g = 0; g < groups; ++g) {
            std::size_t a = y;
            if (coin(rng) >= rho[g]) {
                a = pick_other(rng);
                if (a >= y) ++a;
            }
            data.shortcuts[i * groups + g] = a;
            const std::size_t offset = config_.core_dim + g * labels;
            for (std::size_t c = 0; c < labels; ++c)
                x[offset + c] = (c == a ? 1.0 : 0.0) + config_.shortcut_noise * normal(rng);
        }
    }
    return data;
}

Dataset sample_split(const Generator &generator, const SplitSpec &spec) { return generator.sample(spec); }

double core_accuracy_at(const Tensor2 &prototypes, double noise, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw UsageError("core_accuracy_at: n must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_label(0, prototypes.rows - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector point(prototypes.cols);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = pick_label(rng);
        const auto mu = prototypes.row(y);
        for (std::size_t j = 0; j < point.size(); ++j) point[j] = mu[j] + noise * normal(rng);
        if (nearest_prototype(prototypes, point) == y) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

double calibrate_core_noise(const Tensor2 &prototypes, double target, std::size_t n, std::uint64_t seed) {
    double lo = 0.0;
    double hi = 1.0;
    while (core_accuracy_at(prototypes, hi, n, seed) > target && hi < 1e6) hi *= 2.0;
    for (int iter = 0; iter < 40; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (core_accuracy_at(prototypes, mid, n, seed) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double bayes_core_accuracy(const Generator &generator, std::size_t n, std::uint64_t seed) {
    return core_accuracy_at(generator.prototypes(), generator.core_noise(), n, seed);
}

double shortcut_only_accuracy(const Dataset &data, std::size_t core_dim) {
    if (data.size() == 0) throw UsageError("shortcut_only_accuracy: empty dataset");
    const std::size_t labels = data.num_labels;
    std::size_t hits = 0;
    std::vector<std::size_t> votes(labels);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::fill(votes.begin(), votes.end(), 0);
        const auto x = data.features.row(i);
        for (std::size_t g = 0; g < data.num_shortcuts; ++g) {
            const auto block = x.subspan(core_dim + g * labels, labels);
            ++votes[argmax_lowest(block)];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < labels; ++c)
            if (votes[c] > votes[best]) best = c;
        if (best == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double shortcut_only_accuracy(const Generator &generator, const SplitSpec &split, std::size_t n) {
    SplitSpec spec = split;
    spec.size = n;
    return shortcut_only_accuracy(generator.sample(spec), generator.config().core_dim);
}

Dataset select_columns(const Dataset &data, std::size_t first, std::size_t count) {
    if (first + count > data.features.cols) throw ShapeError("select_columns: column range out of bounds");
    Dataset out = data;
    out.features = Tensor2(data.size(), count);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto src = data.features.row(i).subspan(first, count);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
    }
    return out;
}

} // namespace mos
