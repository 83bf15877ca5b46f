#pragma once

// Mixture-of-softmax classifier: shared encoder, K expert heads and a router
// head, each head with its own LayerNorm(ReLU(Linear(h))) transform.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mos/nn.hpp"
#include "mos/posthoc.hpp"

namespace mos {

inline constexpr std::size_t kMaxExperts = 32;

struct MosConfig {
    std::size_t experts = 5;
    std::size_t num_labels = 3;
    std::size_t input_dim = 19;
    std::size_t hidden_dim = 32;
    std::size_t feature_dim = 16; // d, the encoder output size
    std::uint64_t seed = 0;

    /// Throws ConfigError. `min_experts` is 1 for the single-softmax baseline.
    void validate(std::size_t min_experts = 1) const;

    bool operator==(const MosConfig &) const = default;
};

struct EncoderParams {
    LinearLayer input;  // input_dim -> hidden_dim
    LinearLayer output; // hidden_dim -> d
    bool operator==(const EncoderParams &) const = default;
};

/// f(h) = LayerNorm(ReLU(Linear(h))), d -> d.
struct HeadTransform {
    LinearLayer linear;
    LayerNormParams norm;
    bool operator==(const HeadTransform &) const = default;
};

struct ExpertHead {
    HeadTransform transform;
    LinearLayer classifier; // |Y| x d with bias
    bool operator==(const ExpertHead &) const = default;
};

struct RouterHead {
    HeadTransform transform;
    Tensor2 weights; // K x d, router logits have no bias
    bool operator==(const RouterHead &) const = default;
};

struct ModelParams {
    MosConfig config;
    EncoderParams encoder;
    std::vector<ExpertHead> experts;
    RouterHead router;

    bool operator==(const ModelParams &) const = default;
};

/// Fan-in scaled uniform initialization, seeded from config.seed.
ModelParams init_params(const MosConfig &config);

/// Same shapes as `params`, every trainable entry zero.
ModelParams zeros_like(const ModelParams &params);

/// Visits every trainable block in a fixed order as (name, span).
template <typename Params, typename Fn>
void for_each_block(Params &params, Fn &&fn) {
    auto linear = [&](const std::string &prefix, auto &layer) {
        fn(prefix + ".weight", std::span(layer.weight.data));
        fn(prefix + ".bias", std::span(layer.bias));
    };
    auto transform = [&](const std::string &prefix, auto &t) {
        linear(prefix + ".linear", t.linear);
        fn(prefix + ".norm.gain", std::span(t.norm.gain));
        fn(prefix + ".norm.bias", std::span(t.norm.bias));
    };
    linear("encoder.input", params.encoder.input);
    linear("encoder.output", params.encoder.output);
    for (std::size_t k = 0; k < params.experts.size(); ++k) {
        const std::string prefix = "experts." + std::to_string(k);
        transform(prefix + ".transform", params.experts[k].transform);
        linear(prefix + ".classifier", params.experts[k].classifier);
    }
    transform("router.transform", params.router.transform);
    fn(std::string("router.weights"), std::span(params.router.weights.data));
}

std::size_t parameter_count(const ModelParams &params);
Vector flatten(const ModelParams &params);
void unflatten(std::span<const double> flat, ModelParams &params);
std::vector<std::span<double>> blocks(ModelParams &params);
std::vector<std::span<const double>> const_blocks(const ModelParams &params);
std::vector<std::size_t> block_sizes(const ModelParams &params);

/// params += scale * other, blockwise.
void axpy(double scale, const ModelParams &other, ModelParams &params);

struct HeadCache {
    Vector pre;        // Linear(h)
    Vector activated;  // ReLU(pre)
    LayerNormCache norm;
    Vector features;   // f(h)
};

struct ForwardCache {
    Vector x;
    Vector encoder_pre;
    Vector encoder_hidden;
    Vector h;
    std::vector<HeadCache> experts;
    HeadCache router;
};

struct MixtureOutput {
    Tensor2 expert_dists; // K x |Y|
    Vector router_dist;   // K
    Vector aggregate;     // |Y|
    std::optional<ForwardCache> cache;
};

Vector encode(const ModelParams &params, std::span<const double> x);

MixtureOutput mixture_forward(const ModelParams &params, std::span<const double> x, bool keep_cache = false);

/// Adds the gradient of a scalar loss into `grads`, given the loss gradient
/// wrt the aggregate distribution and (separately) wrt the router
/// distribution. The router path receives both contributions.
void mixture_backward(const ModelParams &params, const MixtureOutput &out, std::span<const double> upstream_aggregate,
                      std::span<const double> upstream_router, ModelParams &grads);

/// Hash of every ReLU on/off pattern in the cached forward pass.
std::uint64_t activation_signature(const MixtureOutput &out);

Decision predict(const ModelParams &params, std::span<const double> x, DecisionRule rule);

} // namespace mos
