#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cnv2/layers.hpp"
#include "cnv2/tensor.hpp"

namespace cnv2 {

/// Learned group convolution: a 1x1 convolution whose output rows are
/// partitioned into G contiguous filter groups; each group learns which
/// input columns to keep via staged L1 pruning with condense factor C.
/// Training runs the mask-multiplied dense convolution.
struct LgcLayer {
    int in_channels = 0, out_channels = 0;
    int groups = 1;          // filter groups over the outputs
    int condense_factor = 1; // C
    ConvWeights weights;     // dense (O, I, 1, 1)
    std::vector<std::vector<std::uint8_t>> col_mask;  // per group, length I
    int stages_done = 0;

    LgcLayer() = default;
    LgcLayer(int out_c, int in_c, int groups_, int condense_factor_)
        : in_channels(in_c), out_channels(out_c), groups(groups_),
          condense_factor(condense_factor_), weights(out_c, in_c, 1, 1, 1),
          col_mask(groups_, std::vector<std::uint8_t>(in_c, 1)) {
        if (groups_ < 1 || out_c % groups_ != 0)
            throw std::invalid_argument("LgcLayer: output width " + std::to_string(out_c) +
                                        " not divisible by G=" + std::to_string(groups_));
        if (condense_factor_ < 1)
            throw std::invalid_argument("LgcLayer: condense factor must be >= 1");
    }

    void init(std::mt19937& rng) {
        fill_normal(weights.data, rng, std::sqrt(2.0f / static_cast<float>(in_channels)));
    }

    int rows_per_group() const { return out_channels / groups; }
    int group_of_row(int o) const { return o / rows_per_group(); }
    int cols_per_stage() const { return in_channels / condense_factor; }

    int live_cols(int g) const {
        return static_cast<int>(
            std::accumulate(col_mask[g].begin(), col_mask[g].end(), 0));
    }

    std::size_t live_connections() const {
        std::size_t n = 0;
        for (int g = 0; g < groups; ++g)
            n += static_cast<std::size_t>(live_cols(g)) * rows_per_group();
        return n;
    }

    /// Elementwise O x I mask implied by the per-group column masks.
    std::vector<std::uint8_t> elementwise_mask() const {
        std::vector<std::uint8_t> m(static_cast<std::size_t>(out_channels) * in_channels);
        for (int o = 0; o < out_channels; ++o) {
            const auto& cm = col_mask[group_of_row(o)];
            std::copy(cm.begin(), cm.end(),
                      m.begin() + static_cast<std::size_t>(o) * in_channels);
        }
        return m;
    }

    ConvWeights masked_weights() const {
        ConvWeights m = weights;
        for (int o = 0; o < out_channels; ++o) {
            const auto& cm = col_mask[group_of_row(o)];
            for (int i = 0; i < in_channels; ++i)
                m.data[static_cast<std::size_t>(o) * in_channels + i] *= cm[i];
        }
        return m;
    }

    Tensor4 cached_input;
    std::vector<std::uint8_t> param_mask;  // refreshed on collect_params

    Tensor4 forward(const Tensor4& x, bool training) {
        if (x.c != in_channels)
            throw std::invalid_argument("LgcLayer: expected " + std::to_string(in_channels) +
                                        " channels, got " + std::to_string(x.c));
        if (training) cached_input = x;
        return conv2d(x, masked_weights(), 1, 0);
    }

    Tensor4 backward(const Tensor4& grad_out) {
        ConvGrads cg = conv2d_backward(cached_input, masked_weights(), grad_out, 1, 0);
        weights.ensure_grad();
        const std::vector<std::uint8_t> m = elementwise_mask();
        for (std::size_t i = 0; i < weights.grad.size(); ++i)
            weights.grad[i] += cg.weights.data[i] * m[i];
        return cg.input;
    }

    /// L1 importance of input column j for group g: sum of |w| over the
    /// group's rows. Pruned columns report 0.
    std::vector<float> importance(int g) const {
        if (g < 0 || g >= groups) throw std::invalid_argument("lgc importance: bad group");
        std::vector<float> score(in_channels, 0.0f);
        const int r0 = g * rows_per_group();
        for (int j = 0; j < in_channels; ++j) {
            if (!col_mask[g][j]) continue;
            double s = 0.0;
            for (int o = r0; o < r0 + rows_per_group(); ++o)
                s += std::abs(weights.data[static_cast<std::size_t>(o) * in_channels + j]);
            score[j] = static_cast<float>(s);
        }
        return score;
    }

    /// Zeroes each group's floor(I/C) lowest-importance live columns
    /// (ties favor the lower column index), keeping at least one.
    void prune_stage() {
        if (stages_done >= condense_factor - 1)
            throw std::runtime_error("LgcLayer: prune_stage called more than C-1 times");
        for (int g = 0; g < groups; ++g) {
            std::vector<float> score = importance(g);
            std::vector<int> live;
            for (int j = 0; j < in_channels; ++j)
                if (col_mask[g][j]) live.push_back(j);
            const int count = std::min(cols_per_stage(), static_cast<int>(live.size()) - 1);
            std::stable_sort(live.begin(), live.end(),
                             [&](int a, int b) { return score[a] < score[b]; });
            for (int i = 0; i < count; ++i) col_mask[g][live[i]] = 0;
        }
        ++stages_done;
        // keep any outstanding ParamRef mask view current
        if (!param_mask.empty()) param_mask = elementwise_mask();
    }

    bool fully_condensed() const { return stages_done == condense_factor - 1; }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        weights.ensure_grad();
        param_mask = elementwise_mask();
        out.push_back({prefix + ".weight", &weights.data, &weights.grad, &param_mask, true});
    }
};

}  // namespace cnv2
