#include "mos/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mos/errors.hpp"

namespace mos {

void MosConfig::validate(std::size_t min_experts) const {
    if (experts < min_experts) throw ConfigError("model: expert count must be >= " + std::to_string(min_experts));
    if (experts > kMaxExperts) throw ConfigError("model: expert count must be <= " + std::to_string(kMaxExperts));
    if (num_labels < 2) throw ConfigError("model: need at least two labels");
    if (input_dim == 0 || hidden_dim == 0 || feature_dim == 0) throw ConfigError("model: dimensions must be >= 1");
}

namespace {

void init_linear(LinearLayer &layer, std::mt19937_64 &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double &w : layer.weight.data) w = dist(rng);
    for (double &b : layer.bias) b = dist(rng);
}

HeadTransform make_transform(std::size_t d, std::mt19937_64 &rng) {
    HeadTransform t{LinearLayer(d, d), LayerNormParams(d)};
    init_linear(t.linear, rng);
    return t;
}

} // namespace

ModelParams init_params(const MosConfig &config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    const std::size_t d = config.feature_dim;

    ModelParams p;
    p.config = config;
    p.encoder.input = LinearLayer(config.input_dim, config.hidden_dim);
    p.encoder.output = LinearLayer(config.hidden_dim, d);
    init_linear(p.encoder.input, rng);
    init_linear(p.encoder.output, rng);

    // Each head draws from the same stream in turn, so heads never share values.
    p.experts.reserve(config.experts);
    for (std::size_t k = 0; k < config.experts; ++k) {
        ExpertHead head{make_transform(d, rng), LinearLayer(d, config.num_labels)};
        init_linear(head.classifier, rng);
        p.experts.push_back(std::move(head));
    }
    p.router.transform = make_transform(d, rng);
    p.router.weights = Tensor2(config.experts, d);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double &w : p.router.weights.data) w = dist(rng);
    return p;
}

ModelParams zeros_like(const ModelParams &params) {
    ModelParams z = params;
    for_each_block(z, [](const std::string &, std::span<double> b) { std::fill(b.begin(), b.end(), 0.0); });
    return z;
}

std::size_t parameter_count(const ModelParams &params) {
    std::size_t n = 0;
    for_each_block(params, [&](const std::string &, auto b) { n += b.size(); });
    return n;
}

Vector flatten(const ModelParams &params) {
    Vector flat;
    flat.reserve(parameter_count(params));
    for_each_block(params, [&](const std::string &, auto b) { flat.insert(flat.end(), b.begin(), b.end()); });
    return flat;
}

void unflatten(std::span<const double> flat, ModelParams &params) {
    if (flat.size() != parameter_count(params)) throw ShapeError("unflatten: parameter count mismatch");
    std::size_t offset = 0;
    for_each_block(params, [&](const std::string &, std::span<double> b) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), b.size(), b.begin());
        offset += b.size();
    });
}

std::vector<std::span<double>> blocks(ModelParams &params) {
    std::vector<std::span<double>> out;
    for_each_block(params, [&](const std::string &, std::span<double> b) { out.push_back(b); });
    return out;
}

std::vector<std::span<const double>> const_blocks(const ModelParams &params) {
    std::vector<std::span<const double>> out;
    for_each_block(params, [&](const std::string &, auto b) { out.emplace_back(b.data(), b.size()); });
    return out;
}

std::vector<std::size_t> block_sizes(const ModelParams &params) {
    std::vector<std::size_t> out;
    for_each_block(params, [&](const std::string &, auto b) { out.push_back(b.size()); });
    return out;
}

void axpy(double scale, const ModelParams &other, ModelParams &params) {
    auto src = const_blocks(other);
    auto dst = blocks(params);
    if (src.size() != dst.size()) throw ShapeError("axpy: block count mismatch");
    for (std::size_t b = 0; b < dst.size(); ++b) {
        if (src[b].size() != dst[b].size()) throw ShapeError("axpy: block size mismatch");
        for (std::size_t i = 0; i < dst[b].size(); ++i) dst[b][i] += scale * src[b][i];
    }
}

namespace {

Vector transform_forward(const HeadTransform &t, std::span<const double> h, HeadCache &cache) {
    cache.pre = linear_forward(t.linear, h);
    cache.activated = relu_forward(cache.pre);
    cache.features = layernorm_forward(t.norm, cache.activated, &cache.norm);
    return cache.features;
}

// Accumulates into grad_h.
void transform_backward(const HeadTransform &t, std::span<const double> h, const HeadCache &cache,
                        std::span<const double> upstream, HeadTransform &grad, std::span<double> grad_h) {
    const Vector d_act = layernorm_backward(t.norm, cache.norm, upstream, grad.norm);
    const Vector d_pre = relu_backward(cache.pre, d_act);
    linear_backward_accumulate(t.linear, h, d_pre, grad.linear, grad_h);
}

Vector router_logits(const RouterHead &router, std::span<const double> features) {
    Vector logits(router.weights.rows, 0.0);
    for (std::size_t k = 0; k < router.weights.rows; ++k) {
        const auto v = router.weights.row(k);
        double acc = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) acc += v[i] * features[i];
        logits[k] = acc;
    }
    return logits;
}

} // namespace

Vector encode(const ModelParams &params, std::span<const double> x) {
    const Vector pre = linear_forward(params.encoder.input, x);
    return linear_forward(params.encoder.output, relu_forward(pre));
}

MixtureOutput mixture_forward(const ModelParams &params, std::span<const double> x, bool keep_cache) {
    const std::size_t k_count = params.experts.size();
    const std::size_t labels = params.config.num_labels;
    if (x.size() != params.encoder.input.in_dim()) throw ShapeError("mixture_forward: input length mismatch");
    if (params.router.weights.rows != k_count) throw ShapeError("mixture_forward: router/expert count mismatch");

    ForwardCache cache;
    cache.x.assign(x.begin(), x.end());
    cache.encoder_pre = linear_forward(params.encoder.input, x);
    cache.encoder_hidden = relu_forward(cache.encoder_pre);
    cache.h = linear_forward(params.encoder.output, cache.encoder_hidden);
    cache.experts.resize(k_count);

    MixtureOutput out;
    out.expert_dists = Tensor2(k_count, labels);
    for (std::size_t k = 0; k < k_count; ++k) {
        const auto &head = params.experts[k];
        const Vector f = transform_forward(head.transform, cache.h, cache.experts[k]);
        const Vector p = softmax(linear_forward(head.classifier, f));
        std::copy(p.begin(), p.end(), out.expert_dists.row(k).begin());
    }
    const Vector f_r = transform_forward(params.router.transform, cache.h, cache.router);
    out.router_dist = softmax(router_logits(params.router, f_r));

    out.aggregate.assign(labels, 0.0);
    for (std::size_t k = 0; k < k_count; ++k)
        for (std::size_t y = 0; y < labels; ++y) out.aggregate[y] += out.router_dist[k] * out.expert_dists(k, y);

    if (keep_cache) out.cache = std::move(cache);
    return out;
}

void mixture_backward(const ModelParams &params, const MixtureOutput &out, std::span<const double> upstream_aggregate,
                      std::span<const double> upstream_router, ModelParams &grads) {
    if (!out.cache) throw UsageError("mixture_backward: forward pass was run without keep_cache");
    const auto &cache = *out.cache;
    const std::size_t k_count = params.experts.size();
    const std::size_t labels = params.config.num_labels;
    if (upstream_aggregate.size() != labels) throw ShapeError("mixture_backward: aggregate upstream length mismatch");
    if (!upstream_router.empty() && upstream_router.size() != k_count)
        throw ShapeError("mixture_backward: router upstream length mismatch");
    if (grads.experts.size() != k_count) throw ShapeError("mixture_backward: gradient buffer has wrong expert count");

    const std::size_t d = cache.h.size();
    Vector grad_h(d, 0.0);

    // aggregate = sum_k pi_k P_k  =>  dP_k = pi_k * g,  dpi_k = <P_k, g>
    Vector grad_pi(k_count, 0.0);
    for (std::size_t k = 0; k < k_count; ++k) {
        const auto p_k = out.expert_dists.row(k);
        Vector grad_p(labels);
        double dot = 0.0;
        for (std::size_t y = 0; y < labels; ++y) {
            grad_p[y] = out.router_dist[k] * upstream_aggregate[y];
            dot += p_k[y] * upstream_aggregate[y];
        }
        grad_pi[k] = dot + (upstream_router.empty() ? 0.0 : upstream_router[k]);

        const Vector grad_logits = softmax_backward(p_k, grad_p);
        const auto &head = params.experts[k];
        auto &ghead = grads.experts[k];
        const auto &hc = cache.experts[k];
        Vector grad_f(d, 0.0);
        linear_backward_accumulate(head.classifier, hc.features, grad_logits, ghead.classifier, grad_f);
        transform_backward(head.transform, cache.h, hc, grad_f, ghead.transform, grad_h);
    }

    const Vector grad_router_logits = softmax_backward(out.router_dist, grad_pi);
    Vector grad_fr(d, 0.0);
    const auto &rc = cache.router;
    for (std::size_t k = 0; k < k_count; ++k) {
        const double u = grad_router_logits[k];
        if (u == 0.0) continue;
        auto gv = grads.router.weights.row(k);
        const auto v = params.router.weights.row(k);
        for (std::size_t i = 0; i < d; ++i) {
            gv[i] += u * rc.features[i];
            grad_fr[i] += u * v[i];
        }
    }
    transform_backward(params.router.transform, cache.h, rc, grad_fr, grads.router.transform, grad_h);

    Vector grad_hidden(cache.encoder_hidden.size(), 0.0);
    linear_backward_accumulate(params.encoder.output, cache.encoder_hidden, grad_h, grads.encoder.output, grad_hidden);
    const Vector grad_pre = relu_backward(cache.encoder_pre, grad_hidden);
    linear_backward_accumulate(params.encoder.input, cache.x, grad_pre, grads.encoder.input, {});
}

std::uint64_t activation_signature(const MixtureOutput &out) {
    if (!out.cache) throw UsageError("activation_signature: forward pass was run without keep_cache");
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&](std::span<const double> v) {
        for (double x : v) {
            hash ^= x > 0.0 ? 0x9eU : 0x3bU;
            hash *= 1099511628211ULL;
        }
    };
    mix(out.cache->encoder_pre);
    for (const auto &hc : out.cache->experts) mix(hc.pre);
    mix(out.cache->router.pre);
    return hash;
}

Decision predict(const ModelParams &params, std::span<const double> x, DecisionRule rule) {
    const auto out = mixture_forward(params, x);
    return aggregate(out.expert_dists, out.router_dist, rule);
}

} // namespace mos
