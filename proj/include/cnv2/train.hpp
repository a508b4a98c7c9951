#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnv2/data.hpp"
#include "cnv2/network.hpp"
#include "cnv2/sfr.hpp"

namespace cnv2 {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    float lr0 = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 4e-5f;
    bool nesterov = true;
    unsigned seed = 1;
    DataConfig data;
};

/// lr(t) = 0.5 * lr0 * (1 + cos(pi t)), t in [0, 1].
inline double cosine_lr(double t, double lr0) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("cosine_lr: t outside [0,1]");
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

/// One Nesterov SGD update on a single parameter vector. Entries whose
/// mask byte is 0 are skipped entirely (weights, velocity and the decay
/// term all frozen). decay gates the weight-decay term.
inline void sgd_step(std::vector<float>& w, const std::vector<float>& g,
                     std::vector<float>& velocity, float lr, float momentum = 0.9f,
                     float weight_decay = 4e-5f, bool nesterov = true,
                     const std::vector<std::uint8_t>* mask = nullptr, bool decay = true) {
    if (g.size() != w.size() || velocity.size() != w.size())
        throw std::invalid_argument("sgd_step: size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        if (std::isnan(g[i]))
            throw std::runtime_error("sgd_step: NaN gradient at index " + std::to_string(i));
        float eff = g[i] + (decay ? weight_decay * w[i] : 0.0f);
        velocity[i] = momentum * velocity[i] + eff;
        w[i] -= lr * (nesterov ? eff + momentum * velocity[i] : velocity[i]);
    }
}

struct SgdOptimizer {
    float momentum = 0.9f;
    float weight_decay = 4e-5f;
    bool nesterov = true;
    std::vector<std::vector<float>> velocity;

    void step(std::vector<ParamRef>& params, float lr) {
        if (velocity.empty())
            for (const auto& p : params) velocity.emplace_back(p.value->size(), 0.0f);
        if (velocity.size() != params.size())
            throw std::runtime_error("SgdOptimizer: parameter set changed");
        for (std::size_t i = 0; i < params.size(); ++i)
            sgd_step(*params[i].value, *params[i].grad, velocity[i], lr, momentum,
                     weight_decay, nesterov, params[i].mask, params[i].decay);
    }
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0, acc = 0.0;
    std::size_t live_sfr = 0, live_lgc = 0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    double final_acc = 0.0;
};

inline void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write metrics file " + path);
    f << "epoch,loss,acc,live_sfr,live_lgc,lr\n";
    char line[160];
    for (const auto& m : log) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.4f,%zu,%zu,%.8g\n", m.epoch, m.loss,
                      m.acc, m.live_sfr, m.live_lgc, m.lr);
        f << line;
    }
}

/// Epoch loop: forward, cross-entropy, backward, masked Nesterov SGD.
/// Prune events fire at the stage boundaries of build_schedule (S for the
/// SFR modules, C for the LGCs; the grids coincide whenever C == S).
/// on_epoch_end, when set, runs after each epoch's prune handling.
inline TrainResult train(Network& net, const TrainConfig& tc, const Dataset& ds,
                         const std::string& metrics_path = "",
                         const std::function<void(int)>& on_epoch_end = {}) {
    if (ds.size() == 0) throw std::runtime_error("train: empty dataset");
    if (tc.epochs < 1 || tc.batch_size < 1 || tc.lr0 <= 0.0f)
        throw std::invalid_argument("train: bad epochs/batch/lr");
    const StageSchedule sfr_schedule = build_schedule(tc.epochs, net.config.sparse_factor);
    const StageSchedule lgc_schedule = build_schedule(tc.epochs, net.config.condense_factor);

    std::mt19937 rng(tc.seed);
    auto params = net.parameters();
    SgdOptimizer opt{tc.momentum, tc.weight_decay, tc.nesterov, {}};
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        const double lr = cosine_lr(static_cast<double>(epoch - 1) / tc.epochs, tc.lr0);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t first = 0; first < ds.size(); first += tc.batch_size) {
            const std::size_t count = std::min<std::size_t>(tc.batch_size, ds.size() - first);
            Tensor4 batch = assemble_batch(ds, order, first, count, tc.data.augment, rng);
            std::vector<int> labels(count);
            for (std::size_t b = 0; b < count; ++b) labels[b] = ds.labels[order[first + b]];

            net.zero_grads();
            Tensor4 logits = net.forward(batch, true);
            LossResult lr_ = softmax_cross_entropy(logits, labels);
            if (std::isnan(lr_.loss))
                throw std::runtime_error("train: NaN loss at epoch " + std::to_string(epoch));
            net.backward(lr_.grad);
            opt.step(params, static_cast<float>(lr));

            loss_sum += lr_.loss * count;
            seen += count;
            for (std::size_t b = 0; b < count; ++b) {
                int best = 0;
                for (int j = 1; j < logits.c; ++j)
                    if (logits.at(static_cast<int>(b), j, 0, 0) >
                        logits.at(static_cast<int>(b), best, 0, 0))
                        best = j;
                if (best == labels[b]) ++correct;
            }
        }
        if (sfr_schedule.is_prune_epoch(epoch))
            net.for_each_sfr([](SfrModule& m) {
                if (!m.fully_sparsified()) m.prune_stage();
            });
        if (net.config.condense_factor > 1 && lgc_schedule.is_prune_epoch(epoch))
            net.for_each_lgc([](LgcLayer& l) {
                if (!l.fully_condensed()) l.prune_stage();
            });
        result.log.push_back({epoch, loss_sum / seen,
                              static_cast<double>(correct) / seen,
                              net.live_sfr_connections(), net.live_lgc_connections(), lr});
        if (on_epoch_end) on_epoch_end(epoch);
    }
    result.final_acc = result.log.back().acc;
    if (!metrics_path.empty()) write_metrics_csv(result.log, metrics_path);
    return result;
}

/// Training accuracy of an eval-mode pass, batched.
inline double evaluate_accuracy(Network& net, const Dataset& ds, int batch_size = 64) {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937 rng(0);
    std::size_t correct = 0;
    for (std::size_t first = 0; first < ds.size(); first += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, ds.size() - first);
        Tensor4 batch = assemble_batch(ds, order, first, count, false, rng);
        Tensor4 logits = net.forward(batch, false);
        for (std::size_t b = 0; b < count; ++b) {
            int best = 0;
            for (int j = 1; j < logits.c; ++j)
                if (logits.at(static_cast<int>(b), j, 0, 0) >
                    logits.at(static_cast<int>(b), best, 0, 0))
                    best = j;
            if (best == ds.labels[order[first + b]]) ++correct;
        }
    }
    return ds.size() ? static_cast<double>(correct) / ds.size() : 0.0;
}

}  // namespace cnv2
