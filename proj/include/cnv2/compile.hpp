#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cnv2/network.hpp"
#include "cnv2/tensor.hpp"

namespace cnv2 {

/// Channel rearrangement applied to a convolution's packed output
/// (scatter_sum) or input (gather). scatter_sum accumulates repeated
/// destinations in entry order; destinations with no source stay zero.
struct IndexMap {
    enum class Mode : std::uint8_t { scatter_sum = 0, gather = 1 };
    struct Entry {
        std::uint32_t source = 0;
        std::uint32_t dest = 0;
    };
    Mode mode = Mode::gather;
    std::vector<Entry> entries;
    int output_width = 0;

    Tensor4 apply(const Tensor4& x) const {
        Tensor4 out(x.n, output_width, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int in = 0; in < x.n; ++in)
            for (const Entry& e : entries) {
                const float* src = &x.data[x.index(in, static_cast<int>(e.source), 0, 0)];
                float* dst = &out.data[out.index(in, static_cast<int>(e.dest), 0, 0)];
                if (mode == Mode::gather)
                    std::copy_n(src, plane, dst);
                else
                    for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
        return out;
    }

    static IndexMap identity(int width, Mode mode) {
        IndexMap m;
        m.mode = mode;
        m.output_width = width;
        for (int i = 0; i < width; ++i)
            m.entries.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i)});
        return m;
    }
};

inline Tensor4 bn_eval(const Tensor4& x, const std::vector<float>& gamma,
                       const std::vector<float>& beta, const std::vector<float>& mean,
                       const std::vector<float>& var, float eps = kBnEps) {
    Tensor4 out = zeros_like(x);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int ch = 0; ch < x.c; ++ch) {
        const float is = 1.0f / std::sqrt(var[ch] + eps);
        const float g = gamma[ch] * is;
        const float b = beta[ch] - mean[ch] * g;
        for (int in = 0; in < x.n; ++in) {
            const float* p = &x.data[x.index(in, ch, 0, 0)];
            float* q = &out.data[out.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * g + b;
        }
    }
    return out;
}

inline Tensor4 add_channel_bias(const Tensor4& x, const std::vector<float>& bias) {
    Tensor4 out = x;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        for (int ch = 0; ch < x.c; ++ch) {
            float* q = &out.data[out.index(in, ch, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) q[i] += bias[ch];
        }
    return out;
}

/// Frozen BN parameters carried by a compiled layer; when `folded` the
/// scale/shift already live in the adjacent convolution and bias.
struct FrozenBn {
    std::vector<float> gamma, beta, mean, var;
    bool folded = false;

    static FrozenBn from(const BatchNormLayer& bn) {
        return {bn.gamma, bn.beta, bn.running.mean, bn.running.var, false};
    }
    Tensor4 apply(const Tensor4& x) const {
        return folded ? x : bn_eval(x, gamma, beta, mean, var);
    }
};

struct SfrConversion {
    ConvWeights group_conv;
    IndexMap index;  // scatter_sum back to the original row positions
};

/// Packs each group's live rows into a standard group convolution of shape
/// (sum of live rows, I) with G groups, plus the scatter that reassembles
/// (and sums) rows into their original indices.
inline SfrConversion convert_sfr(const SfrModule& m) {
    if (!m.fully_sparsified())
        throw std::runtime_error("convert_sfr: module not fully sparsified (" +
                                 std::to_string(m.stages_done) + "/" +
                                 std::to_string(m.sparse_factor - 1) + " stages)");
    SfrConversion out;
    if (m.sparse_factor == 1) {
        // nothing pruned: the module is the dense convolution itself
        out.group_conv = m.masked_weights();
        out.index = IndexMap::identity(m.out_channels, IndexMap::Mode::gather);
        return out;
    }
    const int icg = m.in_per_group();
    const int live = m.live_rows(0);
    for (int g = 1; g < m.groups; ++g)
        if (m.live_rows(g) != live)
            throw std::runtime_error("convert_sfr: uneven live rows across groups");
    out.group_conv = ConvWeights(live * m.groups, m.in_channels, 1, 1, m.groups);
    out.index.mode = IndexMap::Mode::scatter_sum;
    out.index.output_width = m.out_channels;
    for (int g = 0; g < m.groups; ++g) {
        int p = 0;
        for (int o = 0; o < m.out_channels; ++o) {
            if (!m.row_live(g, o)) continue;
            const int packed = g * live + p;
            for (int j = 0; j < icg; ++j)
                out.group_conv.at(packed, j, 0, 0) = m.weights.at(o, g * icg + j, 0, 0);
            out.index.entries.push_back(
                {static_cast<std::uint32_t>(packed), static_cast<std::uint32_t>(o)});
            ++p;
        }
    }
    return out;
}

struct LgcConversion {
    IndexMap gather;  // selects each group's live input columns
    ConvWeights group_conv;
};

/// Gathers each group's live input columns into a contiguous slab and
/// emits the standard group convolution over the gathered channels.
inline LgcConversion convert_lgc(const LgcLayer& l) {
    if (!l.fully_condensed())
        throw std::runtime_error("convert_lgc: layer not fully condensed (" +
                                 std::to_string(l.stages_done) + "/" +
                                 std::to_string(l.condense_factor - 1) + " stages)");
    LgcConversion out;
    if (l.condense_factor == 1) {
        // every column live in every group: plain dense convolution
        out.gather = IndexMap::identity(l.in_channels, IndexMap::Mode::gather);
        out.group_conv = l.masked_weights();
        return out;
    }
    const int live = l.live_cols(0);
    for (int g = 1; g < l.groups; ++g)
        if (l.live_cols(g) != live)
            throw std::runtime_error("convert_lgc: uneven live columns across groups");
    out.gather.mode = IndexMap::Mode::gather;
    out.gather.output_width = live * l.groups;
    out.group_conv = ConvWeights(l.out_channels, live * l.groups, 1, 1, l.groups);
    const int rpg = l.rows_per_group();
    for (int g = 0; g < l.groups; ++g) {
        int p = 0;
        for (int j = 0; j < l.in_channels; ++j) {
            if (!l.col_mask[g][j]) continue;
            out.gather.entries.push_back(
                {static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(g * live + p)});
            for (int o = g * rpg; o < (g + 1) * rpg; ++o)
                out.group_conv.at(o, p, 0, 0) =
                    l.weights.data[static_cast<std::size_t>(o) * l.in_channels + j];
            ++p;
        }
    }
    return out;
}

struct SeWeights {
    bool present = false;
    int channels = 0, reduction = 0;
    std::vector<float> fc1_w, fc1_b, fc2_w, fc2_b;

    static SeWeights from(const SEBlock& se) {
        return {true, se.channels, se.reduction, se.fc1.weight, se.fc1.bias,
                se.fc2.weight, se.fc2.bias};
    }

    Tensor4 apply(const Tensor4& x) const {
        Tensor4 pooled = global_avg_pool(x);
        Tensor4 mid = relu(fully_connected(pooled, fc1_w, fc1_b, channels / reduction));
        Tensor4 gate = sigmoid(fully_connected(mid, fc2_w, fc2_b, channels));
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
};

struct CompiledDenseLayer {
    int in_width = 0, growth = 0;
    IndexMap lgc_gather;
    ConvWeights lgc_conv;
    std::vector<float> lgc_bias;  // folded BN shift, empty otherwise
    FrozenBn bn1;
    Act act1 = Act::relu;
    int shuffle_groups = 1;
    ConvWeights conv3;
    SeWeights se;
    bool sfr_enabled = true;
    ConvWeights sfr_conv;
    IndexMap sfr_index;
    std::vector<float> sfr_bias;
    FrozenBn sfr_bn;
};

/// Deploy form of a trained network: every masked convolution replaced by
/// a packed group convolution plus an index layer. Evaluation is const and
/// thread-safe.
struct InferencePlan {
    NetworkConfig config;
    bool folded = false;
    ConvWeights stem_w;
    std::vector<float> stem_bias;
    FrozenBn stem_bn;
    std::vector<std::vector<CompiledDenseLayer>> blocks;
    ConvWeights head_w;
    std::vector<float> head_bias;
    FrozenBn head_bn;
    SeWeights head_se;
    std::vector<float> fc_w, fc_b;
    int fc_out = 0;

    Tensor4 forward(const Tensor4& batch) const {
        Tensor4 t = conv2d(batch, stem_w, config.stem.stride, config.stem.kernel / 2);
        if (!stem_bias.empty()) t = add_channel_bias(t, stem_bias);
        t = relu(stem_bn.apply(t));
        Tensor4 buf = t;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (b > 0) buf = avg_pool(buf, 2, 2);
            for (const auto& l : blocks[b]) {
                Tensor4 u = conv2d(l.lgc_gather.apply(buf), l.lgc_conv, 1, 0);
                if (!l.lgc_bias.empty()) u = add_channel_bias(u, l.lgc_bias);
                Tensor4 v = apply_act(l.act1, l.bn1.apply(u));
                Tensor4 x = conv2d(channel_shuffle(v, l.shuffle_groups), l.conv3, 1, 1);
                if (l.se.present) x = l.se.apply(x);
                if (l.sfr_enabled) {
                    Tensor4 y = l.sfr_index.apply(conv2d(x, l.sfr_conv, 1, 0));
                    if (!l.sfr_bias.empty()) y = add_channel_bias(y, l.sfr_bias);
                    y = relu(l.sfr_bn.apply(y));
                    add_inplace(buf, y);
                }
                buf = concat_channels(buf, x);
            }
        }
        Tensor4 p = global_avg_pool(buf);
        if (config.head) {
            p = conv2d(p, head_w, 1, 0);
            if (!head_bias.empty()) p = add_channel_bias(p, head_bias);
            p = relu(head_bn.apply(p));
            if (head_se.present) p = head_se.apply(p);
        }
        return fully_connected(p, fc_w, fc_b, fc_out);
    }
};

namespace detail {

/// Folds frozen BN into the preceding conv: rows scaled by gamma/sigma,
/// shift emitted as a per-channel bias. `row_dest` maps a conv output row
/// to the BN channel normalizing it (identity for unindexed convs).
inline void fold_bn_into_conv(ConvWeights& w, FrozenBn& bn, std::vector<float>& bias,
                              const std::vector<int>& row_dest) {
    const int channels = static_cast<int>(bn.gamma.size());
    bias.assign(channels, 0.0f);
    std::vector<float> scale(channels);
    for (int c = 0; c < channels; ++c) {
        const float is = 1.0f / std::sqrt(bn.var[c] + kBnEps);
        scale[c] = bn.gamma[c] * is;
        bias[c] = bn.beta[c] - bn.mean[c] * scale[c];
    }
    const std::size_t per_row = w.data.size() / w.out_channels;
    for (int o = 0; o < w.out_channels; ++o) {
        const float s = scale[row_dest[o]];
        for (std::size_t i = 0; i < per_row; ++i)
            w.data[o * per_row + i] *= s;
    }
    bn.folded = true;
}

inline std::vector<int> identity_rows(int n) {
    std::vector<int> v(n);
    for (int i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace detail

/// Converts every SFR and LGC layer of a fully sparsified network.
/// fold_bn additionally folds each frozen BN into its adjacent conv.
inline InferencePlan compile_network(Network& net, bool fold_bn = false) {
    if (!net.fully_sparsified())
        throw std::runtime_error(
            "compile_network: not fully sparsified; finish the staged pruning first");
    InferencePlan plan;
    plan.config = net.config;
    plan.folded = fold_bn;
    plan.stem_w = net.stem.w;
    plan.stem_bn = FrozenBn::from(net.stem_bn);
    if (fold_bn)
        detail::fold_bn_into_conv(plan.stem_w, plan.stem_bn, plan.stem_bias,
                                  detail::identity_rows(plan.stem_w.out_channels));

    for (auto& blk : net.blocks) {
        plan.blocks.emplace_back();
        for (auto& l : blk) {
            CompiledDenseLayer c;
            c.in_width = l.in_width;
            c.growth = l.growth;
            LgcConversion lc = convert_lgc(l.lgc);
            c.lgc_gather = std::move(lc.gather);
            c.lgc_conv = std::move(lc.group_conv);
            c.bn1 = FrozenBn::from(l.bn1);
            c.act1 = l.act1.kind;
            c.shuffle_groups = l.shuffle.groups;
            c.conv3 = l.conv3.w;
            if (l.use_se) c.se = SeWeights::from(l.se);
            c.sfr_enabled = l.sfr_enabled;
            if (l.sfr_enabled) {
                SfrConversion sc = convert_sfr(l.sfr);
                c.sfr_conv = std::move(sc.group_conv);
                c.sfr_index = std::move(sc.index);
                c.sfr_bn = FrozenBn::from(l.sfr.bn);
            }
            if (fold_bn) {
                detail::fold_bn_into_conv(c.lgc_conv, c.bn1, c.lgc_bias,
                                          detail::identity_rows(c.lgc_conv.out_channels));
                if (l.sfr_enabled) {
                    std::vector<int> dest(c.sfr_conv.out_channels, 0);
                    for (const auto& e : c.sfr_index.entries)
                        if (c.sfr_index.mode == IndexMap::Mode::scatter_sum)
                            dest[e.source] = static_cast<int>(e.dest);
                        else
                            dest[e.dest] = static_cast<int>(e.dest);
                    detail::fold_bn_into_conv(c.sfr_conv, c.sfr_bn, c.sfr_bias, dest);
                }
            }
            plan.blocks.back().push_back(std::move(c));
        }
    }
    if (net.config.head) {
        plan.head_w = net.head_conv.w;
        plan.head_bn = FrozenBn::from(net.head_bn);
        if (fold_bn)
            detail::fold_bn_into_conv(plan.head_w, plan.head_bn, plan.head_bias,
                                      detail::identity_rows(plan.head_w.out_channels));
        if (net.config.head->use_se) plan.head_se = SeWeights::from(net.head_se);
    }
    plan.fc_w = net.classifier.weight;
    plan.fc_b = net.classifier.bias;
    plan.fc_out = net.classifier.out_features;
    return plan;
}

/// Max abs logit difference between the eval-mode training form and the
/// compiled plan over `rounds` random input batches.
inline double verify_equivalence(Network& net, const InferencePlan& plan, int rounds,
                                 unsigned seed, int batch = 2) {
    std::mt19937 rng(seed);
    double worst = 0.0;
    for (int r = 0; r < rounds; ++r) {
        Tensor4 x(batch, net.config.input_channels, net.config.input_resolution,
                  net.config.input_resolution);
        fill_normal(x.data, rng, 1.0f);
        worst = std::max(worst, max_abs_diff(net.forward(x, false), plan.forward(x)));
    }
    return worst;
}

}  // namespace cnv2
