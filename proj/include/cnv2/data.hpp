#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnv2/tensor.hpp"

namespace cnv2 {

/// Where training samples come from and how they are normalized.
/// kinds: cifar10_binary (1 label byte + 3072 pixel bytes per record,
/// R/G/B planes), synthetic_blobs (seeded class templates plus noise),
/// raw_tensor_folder (*.bin files: u32 label + float32 payload).
struct DataConfig {
    std::string kind = "synthetic_blobs";
    std::vector<std::string> paths;
    int samples = 200;  // synthetic only
    int classes = 2;
    int resolution = 8;
    int channels = 3;
    float noise = 0.25f;
    bool augment = false;
    std::vector<float> mean{0.5f, 0.5f, 0.5f};
    std::vector<float> stddev{0.5f, 0.5f, 0.5f};
    unsigned seed = 1;
};

struct Dataset {
    int channels = 0, height = 0, width = 0;
    std::vector<std::vector<float>> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

inline Dataset load_cifar10_binary(const DataConfig& cfg) {
    constexpr int kRecord = 3073;
    constexpr int kPlane = 32 * 32;
    Dataset ds{3, 32, 32, {}, {}};
    if (cfg.paths.empty())
        throw std::runtime_error("cifar10_binary: no input files configured");
    for (const auto& path : cfg.paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cifar10_binary: cannot open " + path);
        f.seekg(0, std::ios::end);
        const std::streamoff bytes = f.tellg();
        f.seekg(0);
        if (bytes <= 0 || bytes % kRecord != 0)
            throw std::runtime_error("cifar10_binary: " + path + " has " +
                                     std::to_string(bytes) +
                                     " bytes, not a multiple of 3073");
        std::vector<unsigned char> rec(kRecord);
        const std::streamoff count = bytes / kRecord;
        for (std::streamoff r = 0; r < count; ++r) {
            f.read(reinterpret_cast<char*>(rec.data()), kRecord);
            ds.labels.push_back(rec[0]);
            std::vector<float> img(3 * kPlane);
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < kPlane; ++i)
                    img[c * kPlane + i] =
                        (rec[1 + c * kPlane + i] / 255.0f - cfg.mean[c]) / cfg.stddev[c];
            ds.images.push_back(std::move(img));
        }
    }
    return ds;
}

/// Two (or more) linearly separable Gaussian blobs rendered as images:
/// a fixed per-class template plus isotropic noise.
inline Dataset make_synthetic_blobs(const DataConfig& cfg) {
    Dataset ds{cfg.channels, cfg.resolution, cfg.resolution, {}, {}};
    std::mt19937 rng(cfg.seed);
    const std::size_t dim =
        static_cast<std::size_t>(cfg.channels) * cfg.resolution * cfg.resolution;
    std::vector<std::vector<float>> templates(cfg.classes, std::vector<float>(dim));
    for (auto& t : templates) fill_normal(t, rng, 1.0f);
    std::normal_distribution<float> noise(0.0f, cfg.noise);
    for (int i = 0; i < cfg.samples; ++i) {
        const int label = i % cfg.classes;
        std::vector<float> img = templates[label];
        for (float& v : img) v += noise(rng);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

inline Dataset load_raw_tensor_folder(const DataConfig& cfg) {
    if (cfg.paths.empty())
        throw std::runtime_error("raw_tensor_folder: no folder configured");
    Dataset ds{cfg.channels, cfg.resolution, cfg.resolution, {}, {}};
    const std::size_t dim =
        static_cast<std::size_t>(cfg.channels) * cfg.resolution * cfg.resolution;
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.paths.front()))
        if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("raw_tensor_folder: cannot open " + path);
        std::uint32_t label = 0;
        f.read(reinterpret_cast<char*>(&label), 4);
        std::vector<float> img(dim);
        f.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(dim * 4));
        if (!f)
            throw std::runtime_error("raw_tensor_folder: " + path + " truncated (need " +
                                     std::to_string(4 + dim * 4) + " bytes)");
        ds.labels.push_back(static_cast<int>(label));
        ds.images.push_back(std::move(img));
    }
    return ds;
}

inline Dataset load_dataset(const DataConfig& cfg) {
    if (cfg.kind == "cifar10_binary") return load_cifar10_binary(cfg);
    if (cfg.kind == "synthetic_blobs") return make_synthetic_blobs(cfg);
    if (cfg.kind == "raw_tensor_folder") return load_raw_tensor_folder(cfg);
    throw std::runtime_error("unknown dataset kind: " + cfg.kind);
}

/// Pad-4 random crop plus horizontal flip, the standard CIFAR recipe.
inline std::vector<float> augment_sample(const std::vector<float>& img, int c, int h, int w,
                                         std::mt19937& rng) {
    std::uniform_int_distribution<int> shift(-4, 4);
    std::uniform_int_distribution<int> coin(0, 1);
    const int dy = shift(rng), dx = shift(rng);
    const bool flip = coin(rng) != 0;
    std::vector<float> out(img.size(), 0.0f);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y + dy;
                int sx = x + dx;
                if (flip) sx = w - 1 - sx;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                out[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                    img[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
            }
    return out;
}

inline Tensor4 assemble_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                              std::size_t first, std::size_t count, bool augment,
                              std::mt19937& rng) {
    Tensor4 batch(static_cast<int>(count), ds.channels, ds.height, ds.width);
    for (std::size_t b = 0; b < count; ++b) {
        const auto& img = ds.images[idx[first + b]];
        if (augment) {
            const auto aug = augment_sample(img, ds.channels, ds.height, ds.width, rng);
            std::copy(aug.begin(), aug.end(), batch.data.begin() + b * img.size());
        } else {
            std::copy(img.begin(), img.end(), batch.data.begin() + b * img.size());
        }
    }
    return batch;
}

}  // namespace cnv2
