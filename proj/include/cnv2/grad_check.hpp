#pragma once

#include <cmath>
#include <vector>

#include "cnv2/layers.hpp"
#include "cnv2/tensor.hpp"

namespace cnv2 {

inline double tensor_sum(const Tensor4& t) {
    double s = 0.0;
    for (float v : t.data) s += v;
    return s;
}

/// Central finite differences against analytic gradients, on the scalar
/// loss sum(forward(x)). Layer must expose forward(x, training) and
/// backward(grad_out); parameter coordinates come from `params` (pass an
/// empty list for parameter-free layers). Returns the max relative error
/// with denominator max(|analytic|, |numeric|, scale_floor).
///
/// weighted switches the loss to a fixed pseudo-random weighting of the
/// outputs. The plain sum is degenerate for batch norm (the normalized
/// sum is constant), leaving nothing but cancellation noise to compare.
template <typename Layer>
double grad_check(Layer& layer, Tensor4 input, float eps = 1e-3f,
                  std::vector<ParamRef> params = {}, double scale_floor = 1e-3,
                  std::size_t max_probes_per_param = 0, bool weighted = false) {
    for (auto& p : params)
        std::fill(p.grad->begin(), p.grad->end(), 0.0f);

    Tensor4 out = layer.forward(input, true);
    Tensor4 loss_grad = ones_like(out);
    if (weighted) {
        std::mt19937 rng(12345);
        fill_uniform(loss_grad.data, rng, 0.5f, 1.5f);
    }
    Tensor4 grad_in = layer.backward(loss_grad);

    auto weighted_sum = [&](const Tensor4& t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.data.size(); ++i)
            s += static_cast<double>(t.data[i]) * loss_grad.data[i];
        return s;
    };

    double max_err = 0.0;
    auto probe = [&](float* coord, double analytic) {
        const float keep = *coord;
        *coord = keep + eps;
        const double f_plus = weighted_sum(layer.forward(input, true));
        *coord = keep - eps;
        const double f_minus = weighted_sum(layer.forward(input, true));
        *coord = keep;
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), scale_floor});
        max_err = std::max(max_err, std::abs(numeric - analytic) / denom);
    };

    for (std::size_t i = 0; i < input.data.size(); ++i)
        probe(&input.data[i], grad_in.data[i]);
    for (const auto& p : params) {
        const std::size_t count = p.value->size();
        std::size_t step = 1;
        if (max_probes_per_param > 0 && count > max_probes_per_param)
            step = count / max_probes_per_param;
        for (std::size_t i = 0; i < count; i += step)
            probe(&(*p.value)[i], (*p.grad)[i]);
    }
    return max_err;
}

}  // namespace cnv2
