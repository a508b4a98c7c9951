#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cnv2 {

inline int max_threads() {
    static const int n = [] {
        if (const char* e = std::getenv("CNV2_THREADS")) {
            int v = std::atoi(e);
            if (v >= 1) return v;
        }
        return 1;
    }();
    return n;
}

/// Runs fn(i) for i in [begin, end). Each index is owned by exactly one
/// thread, so results are bit-identical for any thread count. The count
/// defaults to the CNV2_THREADS environment variable (1 if unset).
template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn, int threads = 0) {
    const std::int64_t count = end - begin;
    if (threads <= 0) threads = max_threads();
    if (threads == 1 || count < 2) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const int used = static_cast<int>(std::min<std::int64_t>(threads, count));
    std::vector<std::thread> pool;
    pool.reserve(used);
    const std::int64_t chunk = (count + used - 1) / used;
    for (int t = 0; t < used; ++t) {
        const std::int64_t lo = begin + t * chunk;
        const std::int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Dense rank-4 array (batch, channel, height, width), row-major float32.
/// grad, when non-empty, mirrors data element for element.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;
    std::vector<float> grad;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("Tensor4: negative dimension");
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    float& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
    float at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

inline Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.n, t.c, t.h, t.w); }

inline Tensor4 ones_like(const Tensor4& t) { return Tensor4(t.n, t.c, t.h, t.w, 1.0f); }

inline void check_same_shape(const Tensor4& a, const Tensor4& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

/// Element-wise sum; the reactivation update U(x, y) = x + y.
inline Tensor4 add(const Tensor4& a, const Tensor4& b) {
    check_same_shape(a, b, "add");
    Tensor4 out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline void add_inplace(Tensor4& a, const Tensor4& b) {
    check_same_shape(a, b, "add_inplace");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

/// Weights of a 2-D convolution: out_channels x (in_channels/groups) x kh x kw.
/// in_channels is the total input width seen by the op.
struct ConvWeights {
    int out_channels = 0, in_channels = 0, kh = 1, kw = 1, groups = 1;
    std::vector<float> data;
    std::vector<float> grad;

    ConvWeights() = default;
    ConvWeights(int out_c, int in_c, int kh_, int kw_, int groups_ = 1)
        : out_channels(out_c), in_channels(in_c), kh(kh_), kw(kw_), groups(groups_) {
        if (out_c <= 0 || in_c <= 0 || kh_ <= 0 || kw_ <= 0 || groups_ <= 0)
            throw std::invalid_argument("ConvWeights: non-positive dimension");
        if (out_c % groups_ != 0)
            throw std::invalid_argument("ConvWeights: out_channels " + std::to_string(out_c) +
                                        " not divisible by groups " + std::to_string(groups_));
        if (in_c % groups_ != 0)
            throw std::invalid_argument("ConvWeights: in_channels " + std::to_string(in_c) +
                                        " not divisible by groups " + std::to_string(groups_));
        data.assign(weight_count(), 0.0f);
    }

    int in_per_group() const { return in_channels / groups; }
    int out_per_group() const { return out_channels / groups; }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_per_group() * kh * kw;
    }
    std::size_t index(int oc, int icg, int ky, int kx) const {
        return ((static_cast<std::size_t>(oc) * in_per_group() + icg) * kh + ky) * kw + kx;
    }
    float& at(int oc, int icg, int ky, int kx) { return data[index(oc, icg, ky, kx)]; }
    float at(int oc, int icg, int ky, int kx) const { return data[index(oc, icg, ky, kx)]; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Direct group convolution, zero padding, no bias.
inline Tensor4 conv2d(const Tensor4& x, const ConvWeights& w, int stride, int padding) {
    if (x.c != w.in_channels)
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.c) +
                                    " channels, weights expect " + std::to_string(w.in_channels));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
    const int ho = conv_out_extent(x.h, w.kh, stride, padding);
    const int wo = conv_out_extent(x.w, w.kw, stride, padding);
    if (ho <= 0 || wo <= 0)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(w.kh) + "x" +
                                    std::to_string(w.kw) + " does not fit input " + x.shape_str());

    Tensor4 out(x.n, w.out_channels, ho, wo);
    const int icg = w.in_per_group();
    const int ocg = w.out_per_group();
    parallel_for(0, static_cast<std::int64_t>(x.n) * w.out_channels, [&](std::int64_t job) {
        const int in = static_cast<int>(job / w.out_channels);
        const int oc = static_cast<int>(job % w.out_channels);
        const int g = oc / ocg;
        const int ic0 = g * icg;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < icg; ++ic) {
                    for (int ky = 0; ky < w.kh; ++ky) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < w.kw; ++kx) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            acc += static_cast<double>(x.at(in, ic0 + ic, iy, ix)) *
                                   w.at(oc, ic, ky, kx);
                        }
                    }
                }
                out.at(in, oc, oy, ox) = static_cast<float>(acc);
            }
        }
    });
    return out;
}

struct ConvGrads {
    Tensor4 input;
    ConvWeights weights;  // data holds the gradient values
};

/// Gradients of conv2d w.r.t. input and weights given upstream grad_out.
inline ConvGrads conv2d_backward(const Tensor4& x, const ConvWeights& w,
                                 const Tensor4& grad_out, int stride, int padding) {
    const int ho = conv_out_extent(x.h, w.kh, stride, padding);
    const int wo = conv_out_extent(x.w, w.kw, stride, padding);
    if (grad_out.n != x.n || grad_out.c != w.out_channels || grad_out.h != ho ||
        grad_out.w != wo)
        throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                                    " does not match forward output");

    ConvGrads g{zeros_like(x), ConvWeights(w.out_channels, w.in_channels, w.kh, w.kw, w.groups)};
    const int icg = w.in_per_group();
    const int ocg = w.out_per_group();

    // d/dinput: batches are independent.
    parallel_for(0, x.n, [&](std::int64_t in) {
        for (int oc = 0; oc < w.out_channels; ++oc) {
            const int ic0 = (oc / ocg) * icg;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const float go = grad_out.at(static_cast<int>(in), oc, oy, ox);
                    if (go == 0.0f) continue;
                    for (int ic = 0; ic < icg; ++ic) {
                        for (int ky = 0; ky < w.kh; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < w.kw; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                g.input.at(static_cast<int>(in), ic0 + ic, iy, ix) +=
                                    go * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    });

    // d/dweights: each output channel's slab is independent.
    parallel_for(0, w.out_channels, [&](std::int64_t ocj) {
        const int oc = static_cast<int>(ocj);
        const int ic0 = (oc / ocg) * icg;
        for (int ic = 0; ic < icg; ++ic) {
            for (int ky = 0; ky < w.kh; ++ky) {
                for (int kx = 0; kx < w.kw; ++kx) {
                    double acc = 0.0;
                    for (int in = 0; in < x.n; ++in) {
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += static_cast<double>(grad_out.at(in, oc, oy, ox)) *
                                       x.at(in, ic0 + ic, iy, ix);
                            }
                        }
                    }
                    g.weights.at(oc, ic, ky, kx) = static_cast<float>(acc);
                }
            }
        }
    });
    return g;
}

enum class BnMode { train, eval };

/// Per-channel running statistics for batch normalization.
struct BnStats {
    std::vector<float> mean, var;
    explicit BnStats(int channels = 0)
        : mean(channels, 0.0f), var(channels, 1.0f) {}
};

struct BnCache {
    std::vector<float> batch_mean, batch_inv_std;
};

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

/// Batch normalization over (N, H, W) per channel. Train mode uses batch
/// statistics (float64 accumulators) and updates the running stats; eval
/// mode normalizes with the running stats.
inline Tensor4 batch_norm(const Tensor4& x, const std::vector<float>& gamma,
                          const std::vector<float>& beta, BnStats& running, BnMode mode,
                          BnCache* cache = nullptr, float momentum = kBnMomentum,
                          float eps = kBnEps) {
    if (static_cast<int>(gamma.size()) != x.c || static_cast<int>(beta.size()) != x.c ||
        static_cast<int>(running.mean.size()) != x.c)
        throw std::invalid_argument("batch_norm: channel count mismatch for input " +
                                    x.shape_str());
    Tensor4 out = zeros_like(x);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    std::vector<float> mu(x.c), inv_std(x.c);
    for (int ch = 0; ch < x.c; ++ch) {
        double mean, var;
        if (mode == BnMode::train) {
            double s = 0.0, s2 = 0.0;
            for (int in = 0; in < x.n; ++in) {
                const float* p = &x.data[x.index(in, ch, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
            }
            mean = s / m;
            var = std::max(0.0, s2 / m - mean * mean);
            running.mean[ch] = static_cast<float>((1.0 - momentum) * running.mean[ch] +
                                                  momentum * mean);
            running.var[ch] = static_cast<float>((1.0 - momentum) * running.var[ch] +
                                                 momentum * var);
        } else {
            mean = running.mean[ch];
            var = running.var[ch];
        }
        mu[ch] = static_cast<float>(mean);
        inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
        const float g = gamma[ch], b = beta[ch];
        for (int in = 0; in < x.n; ++in) {
            const float* p = &x.data[x.index(in, ch, 0, 0)];
            float* q = &out.data[out.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i)
                q[i] = (p[i] - mu[ch]) * inv_std[ch] * g + b;
        }
    }
    if (cache) {
        cache->batch_mean = mu;
        cache->batch_inv_std = inv_std;
    }
    return out;
}

struct BnGrads {
    Tensor4 input;
    std::vector<float> gamma, beta;
};

inline BnGrads batch_norm_backward(const Tensor4& x, const std::vector<float>& gamma,
                                   const BnCache& cache, const Tensor4& grad_out,
                                   BnMode mode) {
    check_same_shape(x, grad_out, "batch_norm_backward");
    BnGrads g{zeros_like(x), std::vector<float>(x.c, 0.0f), std::vector<float>(x.c, 0.0f)};
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    for (int ch = 0; ch < x.c; ++ch) {
        const float mu = cache.batch_mean[ch];
        const float is = cache.batch_inv_std[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const float* px = &x.data[x.index(in, ch, 0, 0)];
            const float* pg = &grad_out.data[grad_out.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (px[i] - mu) * is;
                sum_dy += pg[i];
                sum_dy_xhat += pg[i] * xhat;
            }
        }
        g.beta[ch] = static_cast<float>(sum_dy);
        g.gamma[ch] = static_cast<float>(sum_dy_xhat);
        const float scale = gamma[ch] * is;
        for (int in = 0; in < x.n; ++in) {
            const float* px = &x.data[x.index(in, ch, 0, 0)];
            const float* pg = &grad_out.data[grad_out.index(in, ch, 0, 0)];
            float* pq = &g.input.data[g.input.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                if (mode == BnMode::train) {
                    const double xhat = (px[i] - mu) * is;
                    pq[i] = static_cast<float>(
                        scale * (pg[i] - sum_dy / m - xhat * sum_dy_xhat / m));
                } else {
                    pq[i] = scale * pg[i];
                }
            }
        }
    }
    return g;
}

inline Tensor4 relu(const Tensor4& x) {
    Tensor4 out = x;
    for (float& v : out.data) v = std::max(0.0f, v);
    return out;
}

inline Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out) {
    check_same_shape(x, grad_out, "relu_backward");
    Tensor4 g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] <= 0.0f) g.data[i] = 0.0f;
    return g;
}

inline float hard_swish_scalar(float v) {
    return v * std::clamp(v + 3.0f, 0.0f, 6.0f) / 6.0f;
}

/// x * clamp(x+3, 0, 6) / 6.
inline Tensor4 hard_swish(const Tensor4& x) {
    Tensor4 out = x;
    for (float& v : out.data) v = hard_swish_scalar(v);
    return out;
}

inline Tensor4 hard_swish_backward(const Tensor4& x, const Tensor4& grad_out) {
    check_same_shape(x, grad_out, "hard_swish_backward");
    Tensor4 g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const float v = x.data[i];
        float d;
        if (v <= -3.0f) d = 0.0f;
        else if (v >= 3.0f) d = 1.0f;
        else d = (2.0f * v + 3.0f) / 6.0f;
        g.data[i] *= d;
    }
    return g;
}

inline Tensor4 sigmoid(const Tensor4& x) {
    Tensor4 out = x;
    for (float& v : out.data) v = 1.0f / (1.0f + std::exp(-v));
    return out;
}

/// Mean over k x k windows; float64 window accumulator.
inline Tensor4 avg_pool(const Tensor4& x, int k, int stride) {
    if (k < 1 || stride < 1) throw std::invalid_argument("avg_pool: bad window/stride");
    if (x.h < k || x.w < k)
        throw std::invalid_argument("avg_pool: window " + std::to_string(k) +
                                    " larger than input " + x.shape_str());
    const int ho = (x.h - k) / stride + 1;
    const int wo = (x.w - k) / stride + 1;
    Tensor4 out(x.n, x.c, ho, wo);
    const double inv = 1.0 / (static_cast<double>(k) * k);
    for (int in = 0; in < x.n; ++in)
        for (int ch = 0; ch < x.c; ++ch)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            acc += x.at(in, ch, oy * stride + ky, ox * stride + kx);
                    out.at(in, ch, oy, ox) = static_cast<float>(acc * inv);
                }
    return out;
}

inline Tensor4 avg_pool_backward(const Tensor4& x, int k, int stride,
                                 const Tensor4& grad_out) {
    Tensor4 g = zeros_like(x);
    const float inv = 1.0f / (static_cast<float>(k) * k);
    for (int in = 0; in < x.n; ++in)
        for (int ch = 0; ch < x.c; ++ch)
            for (int oy = 0; oy < grad_out.h; ++oy)
                for (int ox = 0; ox < grad_out.w; ++ox) {
                    const float go = grad_out.at(in, ch, oy, ox) * inv;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            g.at(in, ch, oy * stride + ky, ox * stride + kx) += go;
                }
    return g;
}

inline Tensor4 global_avg_pool(const Tensor4& x) {
    Tensor4 out(x.n, x.c, 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        for (int ch = 0; ch < x.c; ++ch) {
            double acc = 0.0;
            const float* p = &x.data[x.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out.at(in, ch, 0, 0) = static_cast<float>(acc / plane);
        }
    return out;
}

inline Tensor4 global_avg_pool_backward(const Tensor4& x, const Tensor4& grad_out) {
    Tensor4 g = zeros_like(x);
    const float inv = 1.0f / (static_cast<float>(x.h) * x.w);
    for (int in = 0; in < x.n; ++in)
        for (int ch = 0; ch < x.c; ++ch) {
            const float go = grad_out.at(in, ch, 0, 0) * inv;
            float* p = &g.data[g.index(in, ch, 0, 0)];
            for (int i = 0; i < x.h * x.w; ++i) p[i] += go;
        }
    return g;
}

/// Moves channel g*(C/G)+i to i*G+g: the transpose of the (G, C/G) grid.
inline Tensor4 channel_shuffle(const Tensor4& x, int groups) {
    if (groups < 1 || x.c % groups != 0)
        throw std::invalid_argument("channel_shuffle: " + std::to_string(x.c) +
                                    " channels not divisible by " + std::to_string(groups) +
                                    " groups");
    const int per = x.c / groups;
    Tensor4 out = zeros_like(x);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        for (int q = 0; q < x.c; ++q) {
            const int g = q % groups, i = q / groups;
            const int src = g * per + i;
            std::copy_n(&x.data[x.index(in, src, 0, 0)], plane,
                        &out.data[out.index(in, q, 0, 0)]);
        }
    return out;
}

inline Tensor4 channel_shuffle_backward(const Tensor4& grad_out, int groups) {
    const int per = grad_out.c / groups;
    Tensor4 g = zeros_like(grad_out);
    const std::size_t plane = static_cast<std::size_t>(grad_out.h) * grad_out.w;
    for (int in = 0; in < grad_out.n; ++in)
        for (int q = 0; q < grad_out.c; ++q) {
            const int gg = q % groups, i = q / groups;
            const int src = gg * per + i;
            std::copy_n(&grad_out.data[grad_out.index(in, q, 0, 0)], plane,
                        &g.data[g.index(in, src, 0, 0)]);
        }
    return g;
}

/// Affine map on (N, C) carried as a Tensor4 with h = w = 1.
/// weight is row-major (C, out); bias has length out.
inline Tensor4 fully_connected(const Tensor4& x, const std::vector<float>& weight,
                               const std::vector<float>& bias, int out_features) {
    if (x.h != 1 || x.w != 1)
        throw std::invalid_argument("fully_connected: expected (N,C,1,1) input, got " +
                                    x.shape_str());
    if (static_cast<int>(weight.size()) != x.c * out_features ||
        static_cast<int>(bias.size()) != out_features)
        throw std::invalid_argument("fully_connected: weight/bias size mismatch");
    Tensor4 out(x.n, out_features, 1, 1);
    for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < out_features; ++o) {
            double acc = bias[o];
            for (int ch = 0; ch < x.c; ++ch)
                acc += static_cast<double>(x.at(in, ch, 0, 0)) * weight[ch * out_features + o];
            out.at(in, o, 0, 0) = static_cast<float>(acc);
        }
    return out;
}

struct FcGrads {
    Tensor4 input;
    std::vector<float> weight, bias;
};

inline FcGrads fully_connected_backward(const Tensor4& x, const std::vector<float>& weight,
                                        int out_features, const Tensor4& grad_out) {
    FcGrads g{zeros_like(x), std::vector<float>(x.c * out_features, 0.0f),
              std::vector<float>(out_features, 0.0f)};
    for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < out_features; ++o) {
            const float go = grad_out.at(in, o, 0, 0);
            g.bias[o] += go;
            for (int ch = 0; ch < x.c; ++ch) {
                g.weight[ch * out_features + o] += go * x.at(in, ch, 0, 0);
                g.input.at(in, ch, 0, 0) += go * weight[ch * out_features + o];
            }
        }
    return g;
}

inline Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() +
                                    " vs " + b.shape_str());
    Tensor4 out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int in = 0; in < a.n; ++in) {
        std::copy_n(&a.data[a.index(in, 0, 0, 0)], plane * a.c,
                    &out.data[out.index(in, 0, 0, 0)]);
        std::copy_n(&b.data[b.index(in, 0, 0, 0)], plane * b.c,
                    &out.data[out.index(in, a.c, 0, 0)]);
    }
    return out;
}

inline Tensor4 slice_channels(const Tensor4& x, int first, int count) {
    if (first < 0 || count < 0 || first + count > x.c)
        throw std::invalid_argument("slice_channels: range out of bounds");
    Tensor4 out(x.n, count, x.h, x.w);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        std::copy_n(&x.data[x.index(in, first, 0, 0)], plane * count,
                    &out.data[out.index(in, 0, 0, 0)]);
    return out;
}

inline void fill_normal(std::vector<float>& v, std::mt19937& rng, float stddev,
                        float mean = 0.0f) {
    std::normal_distribution<float> dist(mean, stddev);
    for (float& x : v) x = dist(rng);
}

inline void fill_uniform(std::vector<float>& v, std::mt19937& rng, float lo, float hi) {
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& x : v) x = dist(rng);
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

}  // namespace cnv2
