#include "mos/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include "mos/errors.hpp"

namespace mos {

namespace {

void require(bool ok, const char *what) {
    if (!ok) throw ShapeError(what);
}

} // namespace

Tensor2 Tensor2::identity(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor2 Tensor2::from_rows(const std::vector<std::vector<double>> &rows) {
    if (rows.empty()) return {};
    Tensor2 t(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == t.cols, "Tensor2::from_rows: ragged rows");
        std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
    }
    return t;
}

Vector linear_forward(const LinearLayer &layer, std::span<const double> x) {
    require(x.size() == layer.in_dim(), "linear_forward: input length does not match layer in-dim");
    require(layer.bias.size() == layer.out_dim(), "linear_forward: bias length does not match layer out-dim");
    Vector y(layer.bias);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const auto w = layer.weight.row(o);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
        y[o] += acc;
    }
    return y;
}

void linear_backward_accumulate(const LinearLayer &layer, std::span<const double> x,
                                std::span<const double> upstream, LinearLayer &grad, std::span<double> grad_x) {
    require(x.size() == layer.in_dim(), "linear_backward: input length does not match layer in-dim");
    require(upstream.size() == layer.out_dim(), "linear_backward: upstream length does not match layer out-dim");
    require(grad.weight.rows == layer.weight.rows && grad.weight.cols == layer.weight.cols &&
                grad.bias.size() == layer.bias.size(),
            "linear_backward: gradient buffer shape mismatch");
    require(grad_x.empty() || grad_x.size() == x.size(), "linear_backward: grad_x length mismatch");
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double u = upstream[o];
        if (u == 0.0) continue;
        grad.bias[o] += u;
        auto gw = grad.weight.row(o);
        for (std::size_t i = 0; i < x.size(); ++i) gw[i] += u * x[i];
        if (!grad_x.empty()) {
            const auto w = layer.weight.row(o);
            for (std::size_t i = 0; i < x.size(); ++i) grad_x[i] += u * w[i];
        }
    }
}

LinearGrads linear_backward(const LinearLayer &layer, std::span<const double> x, std::span<const double> upstream) {
    LinearLayer grad(layer.in_dim(), layer.out_dim());
    Vector grad_x(x.size(), 0.0);
    linear_backward_accumulate(layer, x, upstream, grad, grad_x);
    return {std::move(grad.weight), std::move(grad.bias), std::move(grad_x)};
}

Vector relu_forward(std::span<const double> x) {
    Vector y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
    return y;
}

Vector relu_backward(std::span<const double> x, std::span<const double> upstream) {
    require(x.size() == upstream.size(), "relu_backward: length mismatch");
    Vector g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return g;
}

ReluResult relu_forward_backward(std::span<const double> x, std::span<const double> upstream) {
    return {relu_forward(x), relu_backward(x, upstream)};
}

Vector layernorm_forward(const LayerNormParams &p, std::span<const double> x, LayerNormCache *cache) {
    require(x.size() == p.dim() && p.bias.size() == p.dim(), "layernorm_forward: dimension mismatch");
    if (!(p.epsilon > 0.0)) throw UsageError("layernorm_forward: epsilon must be positive");
    const auto n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv_std = 1.0 / std::sqrt(var + p.epsilon);

    Vector y(x.size());
    Vector normalized(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        normalized[i] = (x[i] - mean) * inv_std;
        y[i] = p.gain[i] * normalized[i] + p.bias[i];
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = inv_std;
    }
    return y;
}

Vector layernorm_backward(const LayerNormParams &p, const LayerNormCache &cache, std::span<const double> upstream,
                          LayerNormParams &grad) {
    const std::size_t n = p.dim();
    require(upstream.size() == n && cache.normalized.size() == n, "layernorm_backward: dimension mismatch");
    require(grad.gain.size() == n && grad.bias.size() == n, "layernorm_backward: gradient buffer mismatch");

    // dxhat = upstream * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    Vector dxhat(n);
    double sum_d = 0.0;
    double sum_dx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        grad.gain[i] += upstream[i] * cache.normalized[i];
        grad.bias[i] += upstream[i];
        dxhat[i] = upstream[i] * p.gain[i];
        sum_d += dxhat[i];
        sum_dx += dxhat[i] * cache.normalized[i];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    Vector dx(n);
    for (std::size_t i = 0; i < n; ++i)
        dx[i] = cache.inv_std * (dxhat[i] - sum_d * inv_n - cache.normalized[i] * sum_dx * inv_n);
    return dx;
}

LayerNormResult layernorm_forward_backward(const LayerNormParams &p, std::span<const double> x,
                                           std::span<const double> upstream) {
    LayerNormCache cache;
    LayerNormResult out;
    out.y = layernorm_forward(p, x, &cache);
    LayerNormParams grad(p.dim(), p.epsilon);
    std::fill(grad.gain.begin(), grad.gain.end(), 0.0);
    out.grad_x = layernorm_backward(p, cache, upstream, grad);
    out.grad_gain = std::move(grad.gain);
    out.grad_bias = std::move(grad.bias);
    return out;
}

Vector softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double top = *std::max_element(logits.begin(), logits.end());
    Vector p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - top);
        total += p[i];
    }
    for (double &v : p) v /= total;
    return p;
}

Vector softmax_backward(std::span<const double> probs, std::span<const double> upstream) {
    require(probs.size() == upstream.size(), "softmax_backward: length mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * upstream[i];
    Vector g(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (upstream[i] - dot);
    return g;
}

CrossEntropyResult cross_entropy_with_grad(std::span<const double> probs, std::size_t label) {
    if (label >= probs.size())
        throw UsageError("cross_entropy_with_grad: label " + std::to_string(label) + " out of range");
    CrossEntropyResult out;
    out.loss = -std::log(std::max(probs[label], kProbabilityFloor));
    out.grad_logits.assign(probs.begin(), probs.end());
    out.grad_logits[label] -= 1.0;
    return out;
}

AdamState::AdamState(AdamConfig cfg, const std::vector<std::size_t> &block_sizes) : config(cfg) {
    first_moment.reserve(block_sizes.size());
    second_moment.reserve(block_sizes.size());
    for (auto n : block_sizes) {
        first_moment.emplace_back(n, 0.0);
        second_moment.emplace_back(n, 0.0);
    }
}

void adam_step(AdamState &state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
    require(params.size() == grads.size() && params.size() == state.first_moment.size(),
            "adam_step: parameter/gradient/state block count mismatch");
    for (std::size_t b = 0; b < params.size(); ++b)
        require(params[b].size() == grads[b].size() && params[b].size() == state.first_moment[b].size(),
                "adam_step: block size mismatch");

    const auto &c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto &m = state.first_moment[b];
        auto &v = state.second_moment[b];
        auto p = params[b];
        auto g = grads[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

GradCheckResult grad_check(const ScalarFunction &f, std::span<const double> params, std::span<const double> analytic,
                           const GradCheckOptions &options, const ProbeFilter &accept) {
    require(params.size() == analytic.size(), "grad_check: analytic gradient length mismatch");
    GradCheckResult result;
    if (params.empty() || options.probes == 0) return result;

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
    const std::size_t wanted = std::min(options.probes, params.size());
    const std::size_t max_attempts = wanted * options.max_attempts_factor;
    std::unordered_set<std::size_t> seen;

    Vector plus(params.begin(), params.end());
    Vector minus(params.begin(), params.end());
    for (std::size_t attempt = 0; attempt < max_attempts && result.probed < wanted; ++attempt) {
        const std::size_t i = pick(rng);
        if (!seen.insert(i).second) continue;
        plus[i] = params[i] + options.step;
        minus[i] = params[i] - options.step;
        const bool ok = !accept || accept(plus, minus);
        if (ok) {
            const double numeric = (f(plus) - f(minus)) / (2.0 * options.step);
            const double err = relative_error(analytic[i], numeric, options.scale_floor);
            if (err > result.max_relative_error || result.probed == 0) {
                result.max_relative_error = std::max(result.max_relative_error, err);
                result.worst_index = i;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
            ++result.probed;
        } else {
            ++result.rejected;
        }
        plus[i] = params[i];
        minus[i] = params[i];
    }
    return result;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace mos
