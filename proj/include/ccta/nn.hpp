#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccta/core.hpp"

namespace ccta::nn {

/// Channels x width x length feature map; the length axis is contiguous.
template <class T>
struct FeatureMap {
    int channels = 0;
    int width = 0;
    int length = 0;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(int c, int w, int l) : channels(c), width(w), length(l), data(static_cast<std::size_t>(c) * w * l, T(0)) {}

    [[nodiscard]] std::size_t offset(int c, int x) const {
        return (static_cast<std::size_t>(c) * width + x) * length;
    }
    T* row(int c, int x) { return data.data() + offset(c, x); }
    [[nodiscard]] const T* row(int c, int x) const { return data.data() + offset(c, x); }
    [[nodiscard]] std::size_t size() const { return data.size(); }
    void resize(int c, int w, int l) {
        channels = c;
        width = w;
        length = l;
        data.assign(static_cast<std::size_t>(c) * w * l, T(0));
    }
};

struct Architecture {
    int input_width = 15;
    int input_length = 1152;
    std::vector<int> channels{8, 16, 32};
    int hidden = 1024;
    double dropout = 0.25;
};

/// Shape of each conv block's output after pooling.
struct BlockShape {
    int in_channels, out_channels;
    int width, length;            ///< conv input/output (same padding)
    int pooled_width, pooled_length;
};

inline std::vector<BlockShape> block_shapes(const Architecture& a) {
    std::vector<BlockShape> out;
    int c = 1, w = a.input_width, l = a.input_length;
    for (int oc : a.channels) {
        require(w >= 2 && l >= 2, ErrorKind::ShapeMismatch, "input too small for the number of pooling stages");
        out.push_back({c, oc, w, l, w / 2, l / 2});
        c = oc;
        w /= 2;
        l /= 2;
    }
    return out;
}

/// Parameter offsets inside the flat parameter vector.
struct ParameterLayout {
    std::vector<std::size_t> conv_w, conv_b;
    std::size_t dense1_w = 0, dense1_b = 0, dense2_w = 0, dense2_b = 0, total = 0;
    int features = 0;
};

inline ParameterLayout parameter_layout(const Architecture& a) {
    require(!a.channels.empty() && a.hidden >= 1, ErrorKind::InvalidArgument, "empty architecture");
    ParameterLayout p;
    std::size_t at = 0;
    for (const auto& b : block_shapes(a)) {
        p.conv_w.push_back(at);
        at += static_cast<std::size_t>(b.out_channels) * b.in_channels * 9;
        p.conv_b.push_back(at);
        at += static_cast<std::size_t>(b.out_channels);
    }
    p.features = a.channels.back();
    p.dense1_w = at;
    at += static_cast<std::size_t>(a.hidden) * p.features;
    p.dense1_b = at;
    at += static_cast<std::size_t>(a.hidden);
    p.dense2_w = at;
    at += static_cast<std::size_t>(a.hidden);
    p.dense2_b = at;
    at += 1;
    p.total = at;
    return p;
}

/// Activations kept from a forward pass for the backward pass.
template <class T>
struct Workspace {
    std::vector<FeatureMap<T>> block_in;    ///< input of each block
    std::vector<FeatureMap<T>> conv_out;    ///< post-ReLU conv output
    std::vector<std::vector<std::uint32_t>> pool_arg;
    FeatureMap<T> last;                     ///< output of the final block
    std::vector<T> features;
    std::vector<std::uint32_t> feature_arg;
    std::vector<T> hidden;                  ///< post-ReLU
    std::vector<T> keep;                    ///< dropout multiplier per hidden unit
    T logit = 0;

    // backward scratch
    std::vector<FeatureMap<T>> grad_conv;
    std::vector<FeatureMap<T>> grad_in;
};

template <class T>
T sigmoid(T z) {
    return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

/// Binary cross-entropy from a logit, numerically stable.
template <class T>
T bce_from_logit(T z, T y) {
    return std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

/// Conv(3x3, same) -> ReLU -> MaxPool(2) blocks, global max pooling,
/// Dense(hidden) -> ReLU -> Dropout -> Dense(1) -> sigmoid.
template <class T>
class Network {
public:
    explicit Network(Architecture arch) : arch_(std::move(arch)), shapes_(block_shapes(arch_)),
                                          layout_(parameter_layout(arch_)), params_(layout_.total, T(0)) {}

    [[nodiscard]] const Architecture& architecture() const { return arch_; }
    [[nodiscard]] const ParameterLayout& layout() const { return layout_; }
    [[nodiscard]] std::span<T> parameters() { return params_; }
    [[nodiscard]] std::span<const T> parameters() const { return params_; }

    /// He-uniform weights, zero biases.
    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        std::fill(params_.begin(), params_.end(), T(0));
        auto fill = [&](std::size_t at, std::size_t n, int fan_in) {
            const double limit = std::sqrt(6.0 / fan_in);
            for (std::size_t i = 0; i < n; ++i) params_[at + i] = static_cast<T>(rng.uniform(-limit, limit));
        };
        for (std::size_t b = 0; b < shapes_.size(); ++b)
            fill(layout_.conv_w[b], static_cast<std::size_t>(shapes_[b].out_channels) * shapes_[b].in_channels * 9,
                 shapes_[b].in_channels * 9);
        fill(layout_.dense1_w, static_cast<std::size_t>(arch_.hidden) * layout_.features, layout_.features);
        fill(layout_.dense2_w, static_cast<std::size_t>(arch_.hidden), arch_.hidden);
    }

    template <class U>
    void load(std::span<const U> values) {
        require(values.size() == params_.size(), ErrorKind::ShapeMismatch, "parameter count mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) params_[i] = static_cast<T>(values[i]);
    }

    /// Forward pass returning the logit. `dropout_seed` of 0 disables dropout.
    T forward(const FeatureMap<T>& input, Workspace<T>& ws, std::uint64_t dropout_seed = 0) const {
        require(input.channels == 1 && input.width == arch_.input_width && input.length == arch_.input_length,
                ErrorKind::ShapeMismatch, "network input shape mismatch");
        const std::size_t nb = shapes_.size();
        ws.block_in.resize(nb);
        ws.conv_out.resize(nb);
        ws.pool_arg.resize(nb);
        ws.block_in[0] = input;
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& s = shapes_[b];
            auto& conv = ws.conv_out[b];
            conv.resize(s.out_channels, s.width, s.length);
            conv_forward(ws.block_in[b], conv, b);
            for (auto& v : conv.data) v = v > T(0) ? v : T(0);
            maxpool_forward(conv, b + 1 < nb ? ws.block_in[b + 1] : ws.last, ws.pool_arg[b]);
        }
        // global max pool
        const auto& last = ws.last;
        const int c = last.channels;
        const std::size_t per = static_cast<std::size_t>(last.width) * last.length;
        ws.features.assign(c, T(0));
        ws.feature_arg.assign(c, 0);
        for (int ch = 0; ch < c; ++ch) {
            const T* p = last.data.data() + ch * per;
            std::size_t best = 0;
            for (std::size_t i = 1; i < per; ++i)
                if (p[i] > p[best]) best = i;
            ws.features[ch] = p[best];
            ws.feature_arg[ch] = static_cast<std::uint32_t>(best);
        }
        // dense 1 + relu + dropout
        const int h = arch_.hidden;
        ws.hidden.assign(h, T(0));
        const T* w1 = params_.data() + layout_.dense1_w;
        const T* b1 = params_.data() + layout_.dense1_b;
        for (int j = 0; j < h; ++j) {
            T acc = b1[j];
            const T* wr = w1 + static_cast<std::size_t>(j) * c;
            for (int i = 0; i < c; ++i) acc += wr[i] * ws.features[i];
            ws.hidden[j] = acc > T(0) ? acc : T(0);
        }
        ws.keep.assign(h, T(1));
        if (dropout_seed != 0 && arch_.dropout > 0) {
            Rng rng(dropout_seed);
            const T scale = static_cast<T>(1.0 / (1.0 - arch_.dropout));
            for (int j = 0; j < h; ++j) ws.keep[j] = rng.uniform() < arch_.dropout ? T(0) : scale;
        }
        const T* w2 = params_.data() + layout_.dense2_w;
        T z = params_[layout_.dense2_b];
        for (int j = 0; j < h; ++j) z += w2[j] * ws.hidden[j] * ws.keep[j];
        ws.logit = z;
        return z;
    }

    /// Accumulates d(objective)/d(params) into `grad` given d(objective)/d(logit).
    /// If `input_grad` is non-null it receives d(objective)/d(input).
    void backward(T dlogit, Workspace<T>& ws, std::span<T> grad, FeatureMap<T>* input_grad = nullptr) const {
        require(grad.size() == params_.size(), ErrorKind::ShapeMismatch, "gradient buffer size mismatch");
        const int h = arch_.hidden;
        const int c = layout_.features;
        const T* w1 = params_.data() + layout_.dense1_w;
        const T* w2 = params_.data() + layout_.dense2_w;
        grad[layout_.dense2_b] += dlogit;
        std::vector<T> dh(h);
        for (int j = 0; j < h; ++j) {
            const T a = ws.hidden[j] * ws.keep[j];
            grad[layout_.dense2_w + j] += dlogit * a;
            dh[j] = ws.hidden[j] > T(0) ? dlogit * w2[j] * ws.keep[j] : T(0);
        }
        std::vector<T> dfeat(c, T(0));
        for (int j = 0; j < h; ++j) {
            if (dh[j] == T(0)) continue;
            grad[layout_.dense1_b + j] += dh[j];
            T* gw = grad.data() + layout_.dense1_w + static_cast<std::size_t>(j) * c;
            const T* wr = w1 + static_cast<std::size_t>(j) * c;
            for (int i = 0; i < c; ++i) {
                gw[i] += dh[j] * ws.features[i];
                dfeat[i] += dh[j] * wr[i];
            }
        }
        const std::size_t nb = shapes_.size();
        ws.grad_conv.resize(nb);
        ws.grad_in.resize(nb);
        // gradient w.r.t. the last block output
        FeatureMap<T> dlast(ws.last.channels, ws.last.width, ws.last.length);
        const std::size_t per = static_cast<std::size_t>(ws.last.width) * ws.last.length;
        for (int ch = 0; ch < c; ++ch) dlast.data[ch * per + ws.feature_arg[ch]] = dfeat[ch];
        const FeatureMap<T>* dout = &dlast;
        for (std::size_t bi = nb; bi-- > 0;) {
            const auto& s = shapes_[bi];
            auto& dconv = ws.grad_conv[bi];
            dconv.resize(s.out_channels, s.width, s.length);
            for (std::size_t i = 0; i < dout->data.size(); ++i)
                dconv.data[ws.pool_arg[bi][i]] += dout->data[i];
            // ReLU mask (post-activation output is zero where the unit was off)
            for (std::size_t i = 0; i < dconv.data.size(); ++i)
                if (!(ws.conv_out[bi].data[i] > T(0))) dconv.data[i] = T(0);
            const bool want_input = bi > 0 || input_grad != nullptr;
            auto& din = ws.grad_in[bi];
            if (want_input) din.resize(s.in_channels, s.width, s.length);
            conv_backward(ws.block_in[bi], dconv, want_input ? &din : nullptr, grad, bi);
            dout = &din;
        }
        if (input_grad) *input_grad = ws.grad_in[0];
    }

    /// Probability for one input with dropout disabled.
    T predict(const FeatureMap<T>& input) const {
        Workspace<T> ws;
        return sigmoid(forward(input, ws));
    }

private:
    void conv_forward(const FeatureMap<T>& in, FeatureMap<T>& out, std::size_t b) const {
        const auto& s = shapes_[b];
        const T* w = params_.data() + layout_.conv_w[b];
        const T* bias = params_.data() + layout_.conv_b[b];
        const int W = s.width, L = s.length;
        for (int co = 0; co < s.out_channels; ++co) {
            for (int x = 0; x < W; ++x) {
                T* o = out.row(co, x);
                std::fill(o, o + L, bias[co]);
            }
            for (int ci = 0; ci < s.in_channels; ++ci) {
                const T* k = w + (static_cast<std::size_t>(co) * s.in_channels + ci) * 9;
                for (int x = 0; x < W; ++x) {
                    T* __restrict o = out.row(co, x);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xs = x + kx - 1;
                        if (xs < 0 || xs >= W) continue;
                        const T* __restrict src = in.row(ci, xs);
                        const T k0 = k[kx * 3 + 0], k1 = k[kx * 3 + 1], k2 = k[kx * 3 + 2];
                        o[0] += k1 * src[0] + k2 * src[1];
#pragma omp simd
                        for (int y = 1; y < L - 1; ++y) o[y] += k0 * src[y - 1] + k1 * src[y] + k2 * src[y + 1];
                        o[L - 1] += k0 * src[L - 2] + k1 * src[L - 1];
                    }
                }
            }
        }
    }

    void conv_backward(const FeatureMap<T>& in, const FeatureMap<T>& dout, FeatureMap<T>* din, std::span<T> grad,
                       std::size_t b) const {
        const auto& s = shapes_[b];
        const T* w = params_.data() + layout_.conv_w[b];
        T* gw = grad.data() + layout_.conv_w[b];
        T* gb = grad.data() + layout_.conv_b[b];
        const int W = s.width, L = s.length;
        for (int co = 0; co < s.out_channels; ++co) {
            T bsum = 0;
            for (int x = 0; x < W; ++x) {
                const T* d = dout.row(co, x);
#pragma omp simd reduction(+ : bsum)
                for (int y = 0; y < L; ++y) bsum += d[y];
            }
            gb[co] += bsum;
            for (int ci = 0; ci < s.in_channels; ++ci) {
                const std::size_t kbase = (static_cast<std::size_t>(co) * s.in_channels + ci) * 9;
                const T* k = w + kbase;
                T* gk = gw + kbase;
                for (int x = 0; x < W; ++x) {
                    const T* __restrict d = dout.row(co, x);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xs = x + kx - 1;
                        if (xs < 0 || xs >= W) continue;
                        const T* __restrict src = in.row(ci, xs);
                        T a0 = d[1] * src[0], a1 = d[0] * src[0], a2 = 0;
#pragma omp simd reduction(+ : a0, a1, a2)
                        for (int y = 1; y < L - 1; ++y) {
                            a0 += d[y + 1] * src[y];
                            a1 += d[y] * src[y];
                            a2 += d[y - 1] * src[y];
                        }
                        a1 += d[L - 1] * src[L - 1];
                        a2 += d[L - 2] * src[L - 1];
                        // out[y] += k0*src[y-1] + k1*src[y] + k2*src[y+1]
                        gk[kx * 3 + 0] += a0;
                        gk[kx * 3 + 1] += a1;
                        gk[kx * 3 + 2] += a2;
                        if (din) {
                            T* __restrict g = din->row(ci, xs);
                            const T k0 = k[kx * 3 + 0], k1 = k[kx * 3 + 1], k2 = k[kx * 3 + 2];
                            g[0] += k1 * d[0] + k0 * d[1];
#pragma omp simd
                            for (int y = 1; y < L - 1; ++y) g[y] += k2 * d[y - 1] + k1 * d[y] + k0 * d[y + 1];
                            g[L - 1] += k2 * d[L - 2] + k1 * d[L - 1];
                        }
                    }
                }
            }
        }
    }

    static void maxpool_forward(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::uint32_t>& arg) {
        const int w = in.width / 2, l = in.length / 2;
        out.resize(in.channels, w, l);
        arg.assign(out.size(), 0);
        std::size_t o = 0;
        for (int c = 0; c < in.channels; ++c)
            for (int x = 0; x < w; ++x) {
                const T* r0 = in.row(c, 2 * x);
                const T* r1 = in.row(c, 2 * x + 1);
                const auto base0 = static_cast<std::uint32_t>(in.offset(c, 2 * x));
                const auto base1 = static_cast<std::uint32_t>(in.offset(c, 2 * x + 1));
                T* dst = out.row(c, x);
                for (int y = 0; y < l; ++y, ++o) {
                    std::uint32_t best = base0 + 2 * y;
                    T v = r0[2 * y];
                    if (r0[2 * y + 1] > v) { v = r0[2 * y + 1]; best = base0 + 2 * y + 1; }
                    if (r1[2 * y] > v) { v = r1[2 * y]; best = base1 + 2 * y; }
                    if (r1[2 * y + 1] > v) { v = r1[2 * y + 1]; best = base1 + 2 * y + 1; }
                    dst[y] = v;
                    arg[o] = best;
                }
            }
    }

    Architecture arch_;
    std::vector<BlockShape> shapes_;
    ParameterLayout layout_;
    std::vector<T> params_;
};

}  // namespace ccta::nn
