#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cnv2/layers.hpp"
#include "cnv2/tensor.hpp"

namespace cnv2 {

/// Collapses (O, I/G, kh, kw) weights to an (O, I/G) importance matrix by
/// taking the max absolute value over the spatial positions. For 1x1
/// kernels this is just |weight|.
inline std::vector<float> reduce_kernel(const ConvWeights& w) {
    std::vector<float> out(static_cast<std::size_t>(w.out_channels) * w.in_per_group(), 0.0f);
    for (int oc = 0; oc < w.out_channels; ++oc)
        for (int ic = 0; ic < w.in_per_group(); ++ic) {
            float m = 0.0f;
            for (int ky = 0; ky < w.kh; ++ky)
                for (int kx = 0; kx < w.kw; ++kx)
                    m = std::max(m, std::abs(w.at(oc, ic, ky, kx)));
            out[static_cast<std::size_t>(oc) * w.in_per_group() + ic] = m;
        }
    return out;
}

/// Sparse feature reactivation module: a 1x1 convolution whose (O, I)
/// weight matrix is split column-wise into G input groups, each carrying a
/// binary mask over its output rows, followed by BN and ReLU. Training
/// uses the mask-multiplied dense convolution; prune_stage zeroes whole
/// rows per group by L1 importance.
struct SfrModule {
    int in_channels = 0;   // I, the width of the newly produced feature
    int out_channels = 0;  // O, the width of the buffer being reactivated
    int groups = 1;        // G input groups
    int sparse_factor = 1; // S
    ConvWeights weights;   // dense (O, I, 1, 1)
    std::vector<std::uint8_t> mask;  // elementwise O x I, rows zeroed per group
    BatchNormLayer bn;
    ActivationLayer act{Act::relu};
    int stages_done = 0;
    std::vector<std::vector<int>> pruned_outputs;  // per group, in prune order

    SfrModule() = default;
    SfrModule(int out_c, int in_c, int groups_, int sparse_factor_)
        : in_channels(in_c), out_channels(out_c), groups(groups_),
          sparse_factor(sparse_factor_), weights(out_c, in_c, 1, 1, 1),
          mask(static_cast<std::size_t>(out_c) * in_c, 1),
          bn(out_c), pruned_outputs(groups_) {
        if (groups_ < 1 || in_c % groups_ != 0)
            throw std::invalid_argument("SfrModule: input width " + std::to_string(in_c) +
                                        " not divisible by G=" + std::to_string(groups_));
        if (sparse_factor_ < 1)
            throw std::invalid_argument("SfrModule: sparse factor must be >= 1");
    }

    void init(std::mt19937& rng) {
        fill_normal(weights.data, rng, std::sqrt(2.0f / static_cast<float>(in_channels)));
    }

    int in_per_group() const { return in_channels / groups; }

    std::uint8_t mask_at(int o, int i) const {
        return mask[static_cast<std::size_t>(o) * in_channels + i];
    }
    bool row_live(int g, int o) const { return mask_at(o, g * in_per_group()) != 0; }

    int live_rows(int g) const {
        int n = 0;
        for (int o = 0; o < out_channels; ++o) n += row_live(g, o) ? 1 : 0;
        return n;
    }

    std::size_t live_connections() const {
        return std::accumulate(mask.begin(), mask.end(), std::size_t{0});
    }

    /// Rows pruned per stage; the paper's O/S with ceil rounding.
    int rows_per_stage() const {
        return (out_channels + sparse_factor - 1) / sparse_factor;
    }

    ConvWeights masked_weights() const {
        ConvWeights m = weights;
        for (std::size_t i = 0; i < m.data.size(); ++i)
            m.data[i] *= mask[i];
        return m;
    }

    Tensor4 cached_input, cached_conv;

    /// y = ReLU(BN(conv1x1(x, mask .* weights)))
    Tensor4 forward(const Tensor4& x, bool training) {
        if (x.c != in_channels)
            throw std::invalid_argument("SfrModule: expected " + std::to_string(in_channels) +
                                        " channels, got " + std::to_string(x.c));
        cached_input = x;
        cached_conv = conv2d(x, masked_weights(), 1, 0);
        return act.forward(bn.forward(cached_conv, training), training);
    }

    /// Pre-BN convolution output of the last forward (the tensor the
    /// fully-pruned-row claim is made about).
    const Tensor4& last_conv_out() const { return cached_conv; }

    Tensor4 backward(const Tensor4& grad_y) {
        Tensor4 g = bn.backward(act.backward(grad_y));
        ConvGrads cg = conv2d_backward(cached_input, masked_weights(), g, 1, 0);
        weights.ensure_grad();
        for (std::size_t i = 0; i < weights.grad.size(); ++i)
            weights.grad[i] += cg.weights.data[i] * mask[i];
        return cg.input;
    }

    /// L1 importance of each output row within group g, on the reduced
    /// weight matrix; pruned rows report 0.
    std::vector<float> importance(int g) const {
        if (g < 0 || g >= groups) throw std::invalid_argument("importance: bad group index");
        const std::vector<float> reduced = reduce_kernel(weights);
        std::vector<float> score(out_channels, 0.0f);
        const int icg = in_per_group();
        for (int o = 0; o < out_channels; ++o) {
            if (!row_live(g, o)) continue;
            double s = 0.0;
            for (int j = 0; j < icg; ++j)
                s += reduced[static_cast<std::size_t>(o) * in_channels + g * icg + j];
            score[o] = static_cast<float>(s);
        }
        return score;
    }

    /// Zeroes the ceil(O/S) lowest-importance live rows of every group
    /// (ties favor the lower output index), keeping at least one live row.
    void prune_stage() {
        if (stages_done >= sparse_factor - 1)
            throw std::runtime_error("SfrModule: prune_stage called more than S-1 times");
        const int icg = in_per_group();
        for (int g = 0; g < groups; ++g) {
            std::vector<float> score = importance(g);
            std::vector<int> live;
            for (int o = 0; o < out_channels; ++o)
                if (row_live(g, o)) live.push_back(o);
            const int count = std::min(rows_per_stage(), static_cast<int>(live.size()) - 1);
            std::stable_sort(live.begin(), live.end(),
                             [&](int a, int b) { return score[a] < score[b]; });
            for (int i = 0; i < count; ++i) {
                const int o = live[i];
                for (int j = 0; j < icg; ++j)
                    mask[static_cast<std::size_t>(o) * in_channels + g * icg + j] = 0;
                pruned_outputs[g].push_back(o);
            }
        }
        ++stages_done;
    }

    bool fully_sparsified() const { return stages_done == sparse_factor - 1; }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        weights.ensure_grad();
        out.push_back({prefix + ".weight", &weights.data, &weights.grad, &mask, true});
        bn.collect_params(prefix + ".bn", out);
    }
};

/// x_out = x_in + y, the reactivation update.
inline Tensor4 reactivate(const Tensor4& x_in, const Tensor4& y) {
    check_same_shape(x_in, y, "reactivate");
    return add(x_in, y);
}

/// Epoch layout of the staged sparsification: S-1 equal stages of
/// floor(E / (2(S-1))) epochs, remainder folded into the optimization
/// stage; a prune event fires at the end of each stage.
struct StageSchedule {
    int total_epochs = 0;
    std::vector<int> stage_epochs;
    int optimization_epochs = 0;
    std::vector<int> prune_events;  // 1-based epoch numbers

    bool is_prune_epoch(int epoch_1based) const {
        return std::find(prune_events.begin(), prune_events.end(), epoch_1based) !=
               prune_events.end();
    }
};

inline StageSchedule build_schedule(int total_epochs, int sparse_factor) {
    if (total_epochs < 1) throw std::invalid_argument("build_schedule: epochs must be >= 1");
    if (sparse_factor < 1) throw std::invalid_argument("build_schedule: S must be >= 1");
    StageSchedule s;
    s.total_epochs = total_epochs;
    if (sparse_factor == 1) {
        s.optimization_epochs = total_epochs;
        return s;
    }
    const int stages = sparse_factor - 1;
    if (total_epochs < 2 * stages)
        throw std::invalid_argument("build_schedule: " + std::to_string(total_epochs) +
                                    " epochs too few for S=" + std::to_string(sparse_factor));
    const int per_stage = total_epochs / (2 * stages);
    int cursor = 0;
    for (int i = 0; i < stages; ++i) {
        s.stage_epochs.push_back(per_stage);
        cursor += per_stage;
        s.prune_events.push_back(cursor);
    }
    s.optimization_epochs = total_epochs - cursor;
    return s;
}

}  // namespace cnv2
