#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "cnv2/config.hpp"
#include "cnv2/network.hpp"

namespace cnv2::testing {

inline std::string preset_path(const std::string& name) {
    return std::string(CNV2_PRESET_DIR) + "/" + name;
}

inline NetworkConfig toy_config(int blocks = 3, int csg = 4) {
    NetworkConfig c;
    c.dataset = "synthetic";
    c.input_resolution = 8;
    c.num_classes = 2;
    c.stem = {3, 1, 0};
    const int growth[3] = {4, 8, 16};
    for (int b = 0; b < blocks; ++b) c.blocks.push_back({2, growth[b], false, false});
    c.condense_factor = c.sparse_factor = c.groups = csg;
    return c;
}

/// Central finite differences on the whole network: weighted logit loss,
/// every `stride`-th parameter coordinate probed. A probe sitting on a
/// ReLU kink is detected by comparing the eps and eps/2 estimates and
/// skipped; the remaining errors are reported relative to the largest
/// gradient magnitude seen, so the metric certifies the gradient vector
/// to that fraction of its scale.
inline double network_grad_check(Network& net, const Tensor4& input, float eps = 5e-4f,
                                 std::size_t stride = 7) {
    Tensor4 probe_input = input;
    Tensor4 out = net.forward(probe_input, true);
    Tensor4 loss_grad = ones_like(out);
    std::mt19937 rng(99);
    fill_uniform(loss_grad.data, rng, 0.5f, 1.5f);

    auto params = net.parameters();
    net.zero_grads();
    net.forward(probe_input, true);
    net.backward(loss_grad);

    // snapshot analytic grads; probing reruns forward which reuses buffers
    std::vector<std::vector<float>> analytic;
    for (auto& p : params) analytic.push_back(*p.grad);

    auto loss = [&]() {
        Tensor4 logits = net.forward(probe_input, true);
        double s = 0.0;
        for (std::size_t i = 0; i < logits.data.size(); ++i)
            s += static_cast<double>(logits.data[i]) * loss_grad.data[i];
        return s;
    };

    std::vector<std::pair<double, double>> kept;  // (analytic, numeric)
    double scale = 1e-3;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = *params[pi].value;
        for (std::size_t i = 0; i < vals.size(); i += stride) {
            if (params[pi].mask && !(*params[pi].mask)[i]) continue;
            const float keep = vals[i];
            auto fd = [&](float e) {
                vals[i] = keep + e;
                const double f1 = loss();
                vals[i] = keep - e;
                const double f0 = loss();
                vals[i] = keep;
                return (f1 - f0) / (2.0 * e);
            };
            const double n1 = fd(eps);
            const double n2 = fd(eps * 0.5f);
            if (std::abs(n1 - n2) > 0.1 * std::max(std::abs(n1), std::abs(n2)) + 2e-3)
                continue;  // probe straddles an activation kink
            const double a = analytic[pi][i];
            kept.push_back({a, n2});
            scale = std::max({scale, std::abs(a), std::abs(n2)});
        }
    }
    double max_err = 0.0;
    for (const auto& [a, n] : kept) max_err = std::max(max_err, std::abs(a - n) / scale);
    return max_err;
}

/// Independent separability oracle: multinomial logistic regression on the
/// flattened pixels, plain gradient descent. Returns train accuracy.
inline double logistic_regression_accuracy(const Dataset& ds, int classes,
                                           int iterations = 300, double lr = 0.5) {
    const std::size_t dim = ds.images.empty() ? 0 : ds.images[0].size();
    std::vector<double> w(dim * classes, 0.0), b(classes, 0.0);
    const double n = static_cast<double>(ds.size());
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> gw(dim * classes, 0.0), gb(classes, 0.0);
        for (std::size_t s = 0; s < ds.size(); ++s) {
            std::vector<double> z(classes, 0.0);
            for (int k = 0; k < classes; ++k) {
                z[k] = b[k];
                for (std::size_t d = 0; d < dim; ++d)
                    z[k] += w[d * classes + k] * ds.images[s][d];
            }
            const double mx = *std::max_element(z.begin(), z.end());
            double denom = 0.0;
            for (int k = 0; k < classes; ++k) denom += std::exp(z[k] - mx);
            for (int k = 0; k < classes; ++k) {
                const double p = std::exp(z[k] - mx) / denom;
                const double g = (p - (k == ds.labels[s] ? 1.0 : 0.0)) / n;
                gb[k] += g;
                for (std::size_t d = 0; d < dim; ++d)
                    gw[d * classes + k] += g * ds.images[s][d];
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
        for (int k = 0; k < classes; ++k) b[k] -= lr * gb[k];
    }
    std::size_t correct = 0;
    for (std::size_t s = 0; s < ds.size(); ++s) {
        int best = 0;
        double best_z = -1e300;
        for (int k = 0; k < classes; ++k) {
            double z = b[k];
            for (std::size_t d = 0; d < dim; ++d) z += w[d * classes + k] * ds.images[s][d];
            if (z > best_z) {
                best_z = z;
                best = k;
            }
        }
        if (best == ds.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / ds.size();
}

}  // namespace cnv2::testing
