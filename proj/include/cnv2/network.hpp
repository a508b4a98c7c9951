#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnv2/layers.hpp"
#include "cnv2/lgc.hpp"
#include "cnv2/sfr.hpp"
#include "cnv2/tensor.hpp"

namespace cnv2 {

struct BlockConfig {
    int layers = 1;
    int growth = 8;
    bool use_se = false;
    bool use_hs = false;
};

struct StemConfig {
    int kernel = 3;
    int stride = 2;
    int out_channels = 0;  // 0 -> 2 * first growth rate
};

struct HeadConfig {
    int width = 1024;
    bool use_se = false;
};

/// Declarative description of a CondenseNetV2-style model.
struct NetworkConfig {
    std::string dataset = "synthetic";  // imagenet | cifar10 | synthetic
    int input_resolution = 32;
    int input_channels = 3;
    int num_classes = 10;
    StemConfig stem;
    std::vector<BlockConfig> blocks;
    int condense_factor = 1;  // C
    int sparse_factor = 1;    // S
    int groups = 1;           // G for LGC filter groups and the 3x3 group conv
    int sfr_groups = 0;       // SFR input groups; 0 -> same as groups
    int bottleneck = 4;       // LGC output width multiplier on the growth rate
    int se_reduction = 4;
    std::optional<HeadConfig> head;
    bool use_sfr = true;
    std::string name;

    int effective_sfr_groups() const { return sfr_groups > 0 ? sfr_groups : groups; }
    int stem_out() const {
        return stem.out_channels > 0 ? stem.out_channels
                                     : 2 * (blocks.empty() ? 1 : blocks.front().growth);
    }

    void validate() const {
        if (blocks.empty()) throw std::invalid_argument("config: no dense blocks");
        if (dataset == "imagenet" && blocks.size() != 5)
            throw std::invalid_argument("config: imagenet models use 5 dense blocks");
        if (dataset == "cifar10" && blocks.size() != 3)
            throw std::invalid_argument("config: cifar10 models use 3 dense blocks");
        if (condense_factor < 1 || sparse_factor < 1 || groups < 1 || bottleneck < 1)
            throw std::invalid_argument("config: C, S, G, bottleneck must be >= 1");
        for (const auto& b : blocks) {
            if (b.layers < 1 || b.growth < 1)
                throw std::invalid_argument("config: block layer count and growth must be >= 1");
            if (b.growth % groups != 0)
                throw std::invalid_argument("config: growth rate " + std::to_string(b.growth) +
                                            " not divisible by G=" + std::to_string(groups));
            if (b.growth % effective_sfr_groups() != 0)
                throw std::invalid_argument("config: growth rate " + std::to_string(b.growth) +
                                            " not divisible by SFR groups " +
                                            std::to_string(effective_sfr_groups()));
        }
        if (num_classes < 2) throw std::invalid_argument("config: need at least two classes");
        if (input_resolution < 1) throw std::invalid_argument("config: bad input resolution");
    }
};

struct Segment {
    int owner = 0;  // 0 = stem, 1.. = dense layer (global index)
    int channels = 0;
};

/// The growing concatenation [x_0, x_1, ...] a dense block reads from and
/// reactivates in place.
struct FeatureBuffer {
    Tensor4 features;
    std::vector<Segment> segments;

    int width() const { return features.c; }

    void append(const Tensor4& x, int owner) {
        features = features.size() == 0 ? x : concat_channels(features, x);
        segments.push_back({owner, x.c});
    }

    void reactivate_with(const Tensor4& y) { add_inplace(features, y); }
};

/// One SFR-DenseLayer:
///   x_new = GC3x3(shuffle(act(BN(LGC1x1(buffer)))))   [+ SE]
///   y     = SFR(x_new)
///   buffer <- buffer + y, then append x_new.
struct DenseLayer {
    int global_index = 0;
    int in_width = 0, growth = 0;
    bool use_se = false;
    bool sfr_enabled = true;

    LgcLayer lgc;
    BatchNormLayer bn1;
    ActivationLayer act1;
    ChannelShuffleLayer shuffle;
    Conv2dLayer conv3;
    SEBlock se;
    SfrModule sfr;

    DenseLayer() = default;
    DenseLayer(int global_index_, int in_width_, const BlockConfig& bc,
               const NetworkConfig& cfg)
        : global_index(global_index_), in_width(in_width_), growth(bc.growth),
          use_se(bc.use_se), sfr_enabled(cfg.use_sfr) {
        const int mid = cfg.bottleneck * growth;
        lgc = LgcLayer(mid, in_width, cfg.groups, cfg.condense_factor);
        bn1 = BatchNormLayer(mid);
        act1 = ActivationLayer(bc.use_hs ? Act::hard_swish : Act::relu);
        shuffle = ChannelShuffleLayer(cfg.groups);
        conv3 = Conv2dLayer(growth, mid, 3, 1, 1, cfg.groups);
        if (use_se) se = SEBlock(growth, cfg.se_reduction);
        if (sfr_enabled)
            sfr = SfrModule(in_width, growth, cfg.effective_sfr_groups(), cfg.sparse_factor);
    }

    void init(std::mt19937& rng) {
        lgc.init(rng);
        conv3.init(rng);
        if (use_se) se.init(rng);
        if (sfr_enabled) sfr.init(rng);
    }

    void forward(FeatureBuffer& buf, bool training) {
        if (buf.width() != in_width)
            throw std::invalid_argument("DenseLayer " + std::to_string(global_index) +
                                        ": buffer width " + std::to_string(buf.width()) +
                                        " != expected " + std::to_string(in_width));
        Tensor4 x = conv3.forward(
            shuffle.forward(act1.forward(bn1.forward(lgc.forward(buf.features, training),
                                                     training),
                                         training),
                            training),
            training);
        if (use_se) x = se.forward(x, training);
        if (sfr_enabled) {
            Tensor4 y = sfr.forward(x, training);
            buf.reactivate_with(y);
        }
        buf.append(x, global_index);
    }

    /// grad over the post-layer buffer -> grad over the pre-layer buffer.
    Tensor4 backward(const Tensor4& grad_buffer_after) {
        Tensor4 grad_prev = slice_channels(grad_buffer_after, 0, in_width);
        Tensor4 grad_x = slice_channels(grad_buffer_after, in_width, growth);
        if (sfr_enabled) {
            // the reactivation add routes grad_prev into y as well
            add_inplace(grad_x, sfr.backward(grad_prev));
        }
        if (use_se) grad_x = se.backward(grad_x);
        Tensor4 g = lgc.backward(
            bn1.backward(act1.backward(shuffle.backward(conv3.backward(grad_x)))));
        add_inplace(g, grad_prev);  // identity path of buffer <- buffer + y
        return g;
    }

    void collect_params(std::vector<ParamRef>& out) {
        const std::string p = "layer" + std::to_string(global_index);
        lgc.collect_params(p + ".lgc", out);
        bn1.collect_params(p + ".bn1", out);
        conv3.collect_params(p + ".conv3", out);
        if (use_se) se.collect_params(p + ".se", out);
        if (sfr_enabled) sfr.collect_params(p + ".sfr", out);
    }
};

struct LossResult {
    double loss = 0.0;
    Tensor4 grad;
};

/// Mean softmax cross-entropy over the batch; grad is w.r.t. the logits.
inline LossResult softmax_cross_entropy(const Tensor4& logits,
                                        const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != logits.n)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    LossResult r;
    r.grad = zeros_like(logits);
    const int k = logits.c;
    for (int in = 0; in < logits.n; ++in) {
        double mx = -1e30;
        for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(in, j, 0, 0)));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(logits.at(in, j, 0, 0) - mx);
        const int y = labels[in];
        if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: bad label");
        r.loss += -(logits.at(in, y, 0, 0) - mx - std::log(denom));
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(logits.at(in, j, 0, 0) - mx) / denom;
            r.grad.at(in, j, 0, 0) =
                static_cast<float>((p - (j == y ? 1.0 : 0.0)) / logits.n);
        }
    }
    r.loss /= logits.n;
    return r;
}

/// Full model: stem, dense blocks with average-pool transitions, optional
/// 1x1 head, linear classifier.
struct Network {
    NetworkConfig config;
    Conv2dLayer stem;
    BatchNormLayer stem_bn;
    ActivationLayer stem_act{Act::relu};
    std::vector<std::vector<DenseLayer>> blocks;
    std::vector<AvgPoolLayer> transitions;
    GlobalAvgPoolLayer gpool;
    Conv2dLayer head_conv;
    BatchNormLayer head_bn;
    ActivationLayer head_act{Act::relu};
    SEBlock head_se;
    LinearLayer classifier;

    int dense_layer_count = 0;
    int final_width = 0;

    explicit Network(const NetworkConfig& cfg) : config(cfg) {
        config.validate();
        const int stem_out = config.stem_out();
        stem = Conv2dLayer(stem_out, config.input_channels, config.stem.kernel,
                           config.stem.stride, config.stem.kernel / 2);
        stem_bn = BatchNormLayer(stem_out);

        int width = stem_out;
        int idx = 1;
        for (std::size_t b = 0; b < config.blocks.size(); ++b) {
            blocks.emplace_back();
            for (int l = 0; l < config.blocks[b].layers; ++l) {
                blocks.back().emplace_back(idx, width, config.blocks[b], config);
                width += config.blocks[b].growth;
                ++idx;
            }
            if (b + 1 < config.blocks.size()) transitions.emplace_back(2, 2);
        }
        dense_layer_count = idx - 1;
        final_width = width;

        int classifier_in = width;
        if (config.head) {
            head_conv = Conv2dLayer(config.head->width, width, 1, 1, 0);
            head_bn = BatchNormLayer(config.head->width);
            if (config.head->use_se) head_se = SEBlock(config.head->width, config.se_reduction);
            classifier_in = config.head->width;
        }
        classifier = LinearLayer(classifier_in, config.num_classes);
    }

    void init(unsigned seed) {
        std::mt19937 rng(seed);
        stem.init(rng);
        for (auto& blk : blocks)
            for (auto& l : blk) l.init(rng);
        if (config.head) {
            head_conv.init(rng);
            if (config.head->use_se) head_se.init(rng);
        }
        classifier.init(rng);
    }

    /// Channel segments of the fully grown buffer, in order: stem then one
    /// per dense layer. Layer with global index t consumes segments [0, t).
    std::vector<Segment> segment_layout() const {
        std::vector<Segment> segs{{0, config.stem_out()}};
        int idx = 1;
        for (const auto& blk : blocks)
            for (const auto& l : blk) segs.push_back({idx++, l.growth});
        return segs;
    }

    FeatureBuffer cached_final_buffer;

    Tensor4 forward(const Tensor4& batch, bool training) {
        if (batch.h != config.input_resolution || batch.w != config.input_resolution ||
            batch.c != config.input_channels)
            throw std::invalid_argument("Network: input " + batch.shape_str() +
                                        " does not match configured resolution " +
                                        std::to_string(config.input_resolution));
        Tensor4 t = stem_act.forward(stem_bn.forward(stem.forward(batch, training), training),
                                     training);
        FeatureBuffer buf;
        buf.append(t, 0);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (b > 0) buf.features = transitions[b - 1].forward(buf.features, training);
            for (auto& layer : blocks[b]) layer.forward(buf, training);
        }
        cached_final_buffer = buf;
        Tensor4 p = gpool.forward(buf.features, training);
        if (config.head) {
            p = head_act.forward(head_bn.forward(head_conv.forward(p, training), training),
                                 training);
            if (config.head->use_se) p = head_se.forward(p, training);
        }
        return classifier.forward(p, training);
    }

    /// Backpropagates the loss gradient; parameter grads accumulate into
    /// the layers' grad buffers.
    void backward(const Tensor4& grad_logits) {
        Tensor4 g = classifier.backward(grad_logits);
        if (config.head) {
            if (config.head->use_se) g = head_se.backward(g);
            g = head_conv.backward(head_bn.backward(head_act.backward(g)));
        }
        g = gpool.backward(g);
        for (int b = static_cast<int>(blocks.size()) - 1; b >= 0; --b) {
            for (int l = static_cast<int>(blocks[b].size()) - 1; l >= 0; --l)
                g = blocks[b][l].backward(g);
            if (b > 0) g = transitions[b - 1].backward(g);
        }
        g = stem.backward(stem_bn.backward(stem_act.backward(g)));
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        stem.collect_params("stem", out);
        stem_bn.collect_params("stem.bn", out);
        for (auto& blk : blocks)
            for (auto& l : blk) l.collect_params(out);
        if (config.head) {
            head_conv.collect_params("head", out);
            head_bn.collect_params("head.bn", out);
            if (config.head->use_se) head_se.collect_params("head.se", out);
        }
        classifier.collect_params("classifier", out);
        return out;
    }

    void zero_grads() {
        for (auto& p : parameters())
            std::fill(p.grad->begin(), p.grad->end(), 0.0f);
    }

    void for_each_sfr(const std::function<void(SfrModule&)>& fn) {
        for (auto& blk : blocks)
            for (auto& l : blk)
                if (l.sfr_enabled) fn(l.sfr);
    }
    void for_each_lgc(const std::function<void(LgcLayer&)>& fn) {
        for (auto& blk : blocks)
            for (auto& l : blk) fn(l.lgc);
    }

    std::size_t live_sfr_connections() {
        std::size_t n = 0;
        for_each_sfr([&](SfrModule& m) { n += m.live_connections(); });
        return n;
    }
    std::size_t live_lgc_connections() {
        std::size_t n = 0;
        for_each_lgc([&](LgcLayer& l) { n += l.live_connections(); });
        return n;
    }

    bool fully_sparsified() {
        bool ok = true;
        for_each_sfr([&](SfrModule& m) { ok = ok && m.fully_sparsified(); });
        for_each_lgc([&](LgcLayer& l) { ok = ok && l.fully_condensed(); });
        return ok;
    }

    /// Runs every outstanding prune stage; the resulting structure is the
    /// deployable one regardless of weight values.
    void sparsify_fully() {
        for (int s = 0; s < config.sparse_factor - 1; ++s)
            for_each_sfr([&](SfrModule& m) {
                if (!m.fully_sparsified()) m.prune_stage();
            });
        for (int c = 0; c < config.condense_factor - 1; ++c)
            for_each_lgc([&](LgcLayer& l) {
                if (!l.fully_condensed()) l.prune_stage();
            });
    }
};

inline Network build_network(const NetworkConfig& cfg, unsigned seed = 1) {
    Network net(cfg);
    net.init(seed);
    return net;
}

/// Copies every identically named parameter (and BN running stats) from
/// src into dst; names missing on either side are skipped.
inline void copy_shared_weights(Network& src, Network& dst);

struct OpCost {
    std::int64_t flops = 0;   // multiply-adds
    std::int64_t params = 0;  // live weights
};

struct CostBreakdown {
    std::int64_t conv_flops = 0, fc_flops = 0;
    std::int64_t conv_params = 0, bn_params = 0, fc_params = 0, se_params = 0;
    std::int64_t sfr_flops = 0;  // subset of conv_flops attributed to SFR modules

    std::int64_t total_flops() const { return conv_flops + fc_flops; }
    std::int64_t total_params() const {
        return conv_params + bn_params + fc_params + se_params;
    }
};

/// Multiply-add and parameter accounting on the live (deploy-form)
/// connections: convolutions count live weights x output positions, FC
/// counts its weight matrix, BN contributes affine parameters only.
inline CostBreakdown count_cost(Network& net) {
    CostBreakdown c;
    const NetworkConfig& cfg = net.config;
    int res = conv_out_extent(cfg.input_resolution, cfg.stem.kernel, cfg.stem.stride,
                              cfg.stem.kernel / 2);
    const std::int64_t stem_w =
        static_cast<std::int64_t>(net.stem.w.weight_count());
    c.conv_flops += stem_w * res * res;
    c.conv_params += stem_w;
    c.bn_params += 2LL * net.stem_bn.channels();

    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        if (b > 0) res /= 2;
        for (auto& l : net.blocks[b]) {
            const std::int64_t spatial = static_cast<std::int64_t>(res) * res;
            const std::int64_t lgc_live = static_cast<std::int64_t>(l.lgc.live_connections());
            c.conv_flops += lgc_live * spatial;
            c.conv_params += lgc_live;
            c.bn_params += 2LL * l.bn1.channels();
            const std::int64_t c3 = static_cast<std::int64_t>(l.conv3.w.weight_count());
            c.conv_flops += c3 * spatial;
            c.conv_params += c3;
            if (l.use_se) {
                const std::int64_t fc1 = static_cast<std::int64_t>(l.se.fc1.weight.size());
                const std::int64_t fc2 = static_cast<std::int64_t>(l.se.fc2.weight.size());
                c.fc_flops += fc1 + fc2;
                c.se_params += fc1 + fc2 + static_cast<std::int64_t>(l.se.fc1.bias.size()) +
                               static_cast<std::int64_t>(l.se.fc2.bias.size());
            }
            if (l.sfr_enabled) {
                const std::int64_t live = static_cast<std::int64_t>(l.sfr.live_connections());
                c.conv_flops += live * spatial;
                c.sfr_flops += live * spatial;
                c.conv_params += live;
                c.bn_params += 2LL * l.sfr.bn.channels();
            }
        }
    }
    if (cfg.head) {
        const std::int64_t hw = static_cast<std::int64_t>(net.head_conv.w.weight_count());
        c.conv_flops += hw;  // operates on the 1x1 pooled map
        c.conv_params += hw;
        c.bn_params += 2LL * net.head_bn.channels();
        if (cfg.head->use_se) {
            const std::int64_t fc1 = static_cast<std::int64_t>(net.head_se.fc1.weight.size());
            const std::int64_t fc2 = static_cast<std::int64_t>(net.head_se.fc2.weight.size());
            c.fc_flops += fc1 + fc2;
            c.se_params += fc1 + fc2 +
                           static_cast<std::int64_t>(net.head_se.fc1.bias.size()) +
                           static_cast<std::int64_t>(net.head_se.fc2.bias.size());
        }
    }
    c.fc_flops += static_cast<std::int64_t>(net.classifier.weight.size());
    c.fc_params += static_cast<std::int64_t>(net.classifier.weight.size()) +
                   static_cast<std::int64_t>(net.classifier.bias.size());
    return c;
}

inline std::int64_t count_flops(Network& net) { return count_cost(net).total_flops(); }
inline std::int64_t count_params(Network& net) { return count_cost(net).total_params(); }

inline void copy_shared_weights(Network& src, Network& dst) {
    auto sp = src.parameters();
    auto dp = dst.parameters();
    for (auto& d : dp)
        for (auto& s : sp)
            if (s.name == d.name && s.value->size() == d.value->size()) {
                *d.value = *s.value;
                break;
            }
    // BN running statistics travel with the weights
    auto copy_bn = [](BatchNormLayer& a, BatchNormLayer& b) {
        if (a.channels() == b.channels()) b.running = a.running;
    };
    copy_bn(src.stem_bn, dst.stem_bn);
    for (std::size_t b = 0; b < src.blocks.size() && b < dst.blocks.size(); ++b)
        for (std::size_t l = 0; l < src.blocks[b].size() && l < dst.blocks[b].size(); ++l) {
            copy_bn(src.blocks[b][l].bn1, dst.blocks[b][l].bn1);
            if (src.blocks[b][l].sfr_enabled && dst.blocks[b][l].sfr_enabled)
                copy_bn(src.blocks[b][l].sfr.bn, dst.blocks[b][l].sfr.bn);
        }
    if (src.config.head && dst.config.head) copy_bn(src.head_bn, dst.head_bn);
}

}  // namespace cnv2
