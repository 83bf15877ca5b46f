#pragma once

// Dense float64 primitives with hand-written backward passes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace mos {

using Vector = std::vector<double>;

/// Row-major matrix.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    static Tensor2 identity(std::size_t n);
    static Tensor2 from_rows(const std::vector<std::vector<double>> &rows);

    bool operator==(const Tensor2 &) const = default;
};

/// y = weight * x + bias, weight is (out x in).
struct LinearLayer {
    Tensor2 weight;
    Vector bias;

    LinearLayer() = default;
    LinearLayer(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }

    bool operator==(const LinearLayer &) const = default;
};

struct LayerNormParams {
    Vector gain;
    Vector bias;
    double epsilon = 1e-5;

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t dim, double eps = 1e-5) : gain(dim, 1.0), bias(dim, 0.0), epsilon(eps) {}

    std::size_t dim() const { return gain.size(); }

    bool operator==(const LayerNormParams &) const = default;
};

struct LinearGrads {
    Tensor2 weight;
    Vector bias;
    Vector x;
};

Vector linear_forward(const LinearLayer &layer, std::span<const double> x);

LinearGrads linear_backward(const LinearLayer &layer, std::span<const double> x, std::span<const double> upstream);

/// Accumulating variant used inside the model backward pass. `grad_x` may be
/// empty when the input gradient is not needed.
void linear_backward_accumulate(const LinearLayer &layer, std::span<const double> x,
                                std::span<const double> upstream, LinearLayer &grad, std::span<double> grad_x);

struct ReluResult {
    Vector y;
    Vector grad_x;
};

Vector relu_forward(std::span<const double> x);
Vector relu_backward(std::span<const double> x, std::span<const double> upstream);
ReluResult relu_forward_backward(std::span<const double> x, std::span<const double> upstream);

/// Values kept from the forward pass that the backward pass needs.
struct LayerNormCache {
    Vector normalized; // (x - mean) / sqrt(var + eps)
    double inv_std = 0.0;
};

Vector layernorm_forward(const LayerNormParams &p, std::span<const double> x, LayerNormCache *cache = nullptr);

/// Returns grad wrt x; gain/bias gradients are added into `grad`.
Vector layernorm_backward(const LayerNormParams &p, const LayerNormCache &cache, std::span<const double> upstream,
                          LayerNormParams &grad);

struct LayerNormResult {
    Vector y;
    Vector grad_x;
    Vector grad_gain;
    Vector grad_bias;
};

LayerNormResult layernorm_forward_backward(const LayerNormParams &p, std::span<const double> x,
                                           std::span<const double> upstream);

/// Max-subtracted softmax.
Vector softmax(std::span<const double> logits);

/// Backward of softmax: grad_logits = p * (g - <p, g>).
Vector softmax_backward(std::span<const double> probs, std::span<const double> upstream);

inline constexpr double kProbabilityFloor = 1e-12;

struct CrossEntropyResult {
    double loss = 0.0;
    Vector grad_logits; // p - onehot(y), exact when p is a plain softmax output
};

CrossEntropyResult cross_entropy_with_grad(std::span<const double> probs, std::size_t label);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;

    AdamState() = default;
    /// Zero moments shaped like the given parameter blocks.
    AdamState(AdamConfig cfg, const std::vector<std::size_t> &block_sizes);
};

/// Bias-corrected adaptive-moment update over a list of parameter blocks.
void adam_step(AdamState &state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);

struct GradCheckOptions {
    std::size_t probes = 50;
    double step = 1e-5;
    std::uint64_t seed = 0x5eedULL;
    /// Magnitude below which relative error degrades to absolute error.
    double scale_floor = 1e-6;
    /// Upper bound on rejected probes before giving up.
    std::size_t max_attempts_factor = 20;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t probed = 0;
    std::size_t rejected = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

using ScalarFunction = std::function<double(std::span<const double>)>;
/// Returns false when a probe straddles a non-differentiable boundary.
using ProbeFilter = std::function<bool(std::span<const double> plus, std::span<const double> minus)>;

/// Compares `analytic` against central differences of `f` at randomly probed
/// coordinates of `params`. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const ScalarFunction &f, std::span<const double> params, std::span<const double> analytic,
                           const GradCheckOptions &options = {}, const ProbeFilter &accept = {});

double relative_error(double analytic, double numeric, double floor);

bool all_finite(std::span<const double> v);

} // namespace mos
