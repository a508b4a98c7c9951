#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnv2/tensor.hpp"

namespace cnv2 {

/// View into one trainable parameter vector. mask, when set, pins entries
/// whose mask byte is 0: their gradient is zeroed and the optimizer skips
/// them entirely. decay marks participation in weight decay.
struct ParamRef {
    std::string name;
    std::vector<float>* value = nullptr;
    std::vector<float>* grad = nullptr;
    const std::vector<std::uint8_t>* mask = nullptr;
    bool decay = true;
};

enum class Act { relu, hard_swish };

inline Tensor4 apply_act(Act a, const Tensor4& x) {
    return a == Act::relu ? relu(x) : hard_swish(x);
}
inline Tensor4 apply_act_backward(Act a, const Tensor4& x, const Tensor4& grad_out) {
    return a == Act::relu ? relu_backward(x, grad_out) : hard_swish_backward(x, grad_out);
}

/// Plain convolution layer; caches its input in training mode so backward
/// can run without re-supplying it.
struct Conv2dLayer {
    ConvWeights w;
    int stride = 1, padding = 0;
    Tensor4 cached_input;

    Conv2dLayer() = default;
    Conv2dLayer(int out_c, int in_c, int k, int stride_, int padding_, int groups = 1)
        : w(out_c, in_c, k, k, groups), stride(stride_), padding(padding_) {}

    void init(std::mt19937& rng) {
        const float fan_in = static_cast<float>(w.in_per_group()) * w.kh * w.kw;
        fill_normal(w.data, rng, std::sqrt(2.0f / fan_in));
    }

    Tensor4 forward(const Tensor4& x, bool training) {
        if (training) cached_input = x;
        return conv2d(x, w, stride, padding);
    }

    Tensor4 backward(const Tensor4& grad_out) {
        ConvGrads g = conv2d_backward(cached_input, w, grad_out, stride, padding);
        w.ensure_grad();
        for (std::size_t i = 0; i < w.grad.size(); ++i) w.grad[i] += g.weights.data[i];
        return g.input;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        w.ensure_grad();
        out.push_back({prefix + ".weight", &w.data, &w.grad, nullptr, true});
    }
};

struct BatchNormLayer {
    std::vector<float> gamma, beta, gamma_grad, beta_grad;
    BnStats running;
    BnCache cache;
    Tensor4 cached_input;
    BnMode cached_mode = BnMode::train;

    BatchNormLayer() = default;
    explicit BatchNormLayer(int channels)
        : gamma(channels, 1.0f), beta(channels, 0.0f),
          gamma_grad(channels, 0.0f), beta_grad(channels, 0.0f), running(channels) {}

    int channels() const { return static_cast<int>(gamma.size()); }

    Tensor4 forward(const Tensor4& x, bool training) {
        const BnMode mode = training ? BnMode::train : BnMode::eval;
        cached_input = x;
        cached_mode = mode;
        if (training) return batch_norm(x, gamma, beta, running, mode, &cache);
        BnStats frozen = running;  // eval never advances the running stats
        return batch_norm(x, gamma, beta, frozen, mode, &cache);
    }

    Tensor4 backward(const Tensor4& grad_out) {
        BnGrads g = batch_norm_backward(cached_input, gamma, cache, grad_out, cached_mode);
        for (int c = 0; c < channels(); ++c) {
            gamma_grad[c] += g.gamma[c];
            beta_grad[c] += g.beta[c];
        }
        return g.input;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", &gamma, &gamma_grad, nullptr, false});
        out.push_back({prefix + ".beta", &beta, &beta_grad, nullptr, false});
    }
};

struct ActivationLayer {
    Act kind = Act::relu;
    Tensor4 cached_input;

    ActivationLayer() = default;
    explicit ActivationLayer(Act k) : kind(k) {}

    Tensor4 forward(const Tensor4& x, bool training) {
        if (training) cached_input = x;
        return apply_act(kind, x);
    }
    Tensor4 backward(const Tensor4& grad_out) {
        return apply_act_backward(kind, cached_input, grad_out);
    }
};

struct AvgPoolLayer {
    int k = 2, stride = 2;
    Tensor4 cached_input;

    AvgPoolLayer() = default;
    AvgPoolLayer(int k_, int stride_) : k(k_), stride(stride_) {}

    Tensor4 forward(const Tensor4& x, bool training) {
        if (training) cached_input = x;
        return avg_pool(x, k, stride);
    }
    Tensor4 backward(const Tensor4& grad_out) {
        return avg_pool_backward(cached_input, k, stride, grad_out);
    }
};

struct GlobalAvgPoolLayer {
    Tensor4 cached_input;
    Tensor4 forward(const Tensor4& x, bool training) {
        if (training) cached_input = x;
        return global_avg_pool(x);
    }
    Tensor4 backward(const Tensor4& grad_out) {
        return global_avg_pool_backward(cached_input, grad_out);
    }
};

struct LinearLayer {
    int in_features = 0, out_features = 0;
    std::vector<float> weight, bias, weight_grad, bias_grad;
    Tensor4 cached_input;

    LinearLayer() = default;
    LinearLayer(int in_f, int out_f)
        : in_features(in_f), out_features(out_f),
          weight(static_cast<std::size_t>(in_f) * out_f, 0.0f), bias(out_f, 0.0f),
          weight_grad(weight.size(), 0.0f), bias_grad(out_f, 0.0f) {}

    void init(std::mt19937& rng) {
        fill_normal(weight, rng, std::sqrt(2.0f / static_cast<float>(in_features)));
    }

    Tensor4 forward(const Tensor4& x, bool training) {
        if (training) cached_input = x;
        return fully_connected(x, weight, bias, out_features);
    }

    Tensor4 backward(const Tensor4& grad_out) {
        FcGrads g = fully_connected_backward(cached_input, weight, out_features, grad_out);
        for (std::size_t i = 0; i < weight.size(); ++i) weight_grad[i] += g.weight[i];
        for (std::size_t i = 0; i < bias.size(); ++i) bias_grad[i] += g.bias[i];
        return g.input;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", &weight, &weight_grad, nullptr, true});
        out.push_back({prefix + ".bias", &bias, &bias_grad, nullptr, false});
    }
};

struct ChannelShuffleLayer {
    int groups = 1;
    ChannelShuffleLayer() = default;
    explicit ChannelShuffleLayer(int g) : groups(g) {}
    Tensor4 forward(const Tensor4& x, bool) const { return channel_shuffle(x, groups); }
    Tensor4 backward(const Tensor4& grad_out) const {
        return channel_shuffle_backward(grad_out, groups);
    }
};

/// Squeeze-and-excite: global pool -> FC(C -> C/r) -> ReLU -> FC(C/r -> C)
/// -> sigmoid -> channel-wise scale.
struct SEBlock {
    int channels = 0, reduction = 4;
    LinearLayer fc1, fc2;
    Tensor4 cached_input, cached_pooled, cached_mid, cached_gate;

    SEBlock() = default;
    SEBlock(int channels_, int reduction_) : channels(channels_), reduction(reduction_) {
        if (reduction_ < 1 || channels_ % reduction_ != 0)
            throw std::invalid_argument("SEBlock: reduction " + std::to_string(reduction_) +
                                        " does not divide " + std::to_string(channels_) +
                                        " channels");
        fc1 = LinearLayer(channels_, channels_ / reduction_);
        fc2 = LinearLayer(channels_ / reduction_, channels_);
    }

    void init(std::mt19937& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }

    Tensor4 forward(const Tensor4& x, bool training) {
        cached_input = x;
        cached_pooled = global_avg_pool(x);
        Tensor4 mid = fc1.forward(cached_pooled, true);
        cached_mid = mid;
        Tensor4 gate = sigmoid(fc2.forward(relu(mid), true));
        cached_gate = gate;
        (void)training;  // caches are needed in eval too (gate recomputation)
        Tensor4 out = zeros_like(x);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int in = 0; in < x.n; ++in)
            for (int ch = 0; ch < x.c; ++ch) {
                const float s = gate.at(in, ch, 0, 0);
                const float* p = &x.data[x.index(in, ch, 0, 0)];
                float* q = &out.data[out.index(in, ch, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * s;
            }
        return out;
    }

    Tensor4 backward(const Tensor4& grad_out) {
        const Tensor4& x = cached_input;
        Tensor4 grad_x = zeros_like(x);
        Tensor4 grad_gate(x.n, x.c, 1, 1);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int in = 0; in < x.n; ++in)
            for (int ch = 0; ch < x.c; ++ch) {
                const float s = cached_gate.at(in, ch, 0, 0);
                double acc = 0.0;
                const float* px = &x.data[x.index(in, ch, 0, 0)];
                const float* pg = &grad_out.data[grad_out.index(in, ch, 0, 0)];
                float* pq = &grad_x.data[grad_x.index(in, ch, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) {
                    pq[i] = pg[i] * s;
                    acc += static_cast<double>(pg[i]) * px[i];
                }
                grad_gate.at(in, ch, 0, 0) = static_cast<float>(acc);
            }
        // through sigmoid: s(1-s)
        Tensor4 grad_fc2 = grad_gate;
        for (std::size_t i = 0; i < grad_fc2.data.size(); ++i) {
            const float s = cached_gate.data[i];
            grad_fc2.data[i] *= s * (1.0f - s);
        }
        Tensor4 grad_mid_relu = fc2.backward(grad_fc2);
        Tensor4 grad_mid = relu_backward(cached_mid, grad_mid_relu);
        Tensor4 grad_pooled = fc1.backward(grad_mid);
        Tensor4 grad_from_pool = global_avg_pool_backward(x, grad_pooled);
        add_inplace(grad_x, grad_from_pool);
        return grad_x;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        fc1.collect_params(prefix + ".fc1", out);
        fc2.collect_params(prefix + ".fc2", out);
    }
};

}  // namespace cnv2
