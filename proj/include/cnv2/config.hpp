#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "cnv2/data.hpp"
#include "cnv2/network.hpp"
#include "cnv2/train.hpp"

namespace cnv2 {

using json = nlohmann::json;

/// Raised for malformed or inconsistent configuration input.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline json network_config_to_json(const NetworkConfig& c) {
    json j;
    j["name"] = c.name;
    j["dataset"] = c.dataset;
    j["input_resolution"] = c.input_resolution;
    j["input_channels"] = c.input_channels;
    j["num_classes"] = c.num_classes;
    j["stem"] = {{"kernel", c.stem.kernel},
                 {"stride", c.stem.stride},
                 {"out_channels", c.stem.out_channels}};
    j["blocks"] = json::array();
    for (const auto& b : c.blocks)
        j["blocks"].push_back({{"layers", b.layers},
                               {"growth", b.growth},
                               {"se", b.use_se},
                               {"hs", b.use_hs}});
    j["condense_factor"] = c.condense_factor;
    j["sparse_factor"] = c.sparse_factor;
    j["groups"] = c.groups;
    j["sfr_groups"] = c.sfr_groups;
    j["bottleneck"] = c.bottleneck;
    j["se_reduction"] = c.se_reduction;
    j["use_sfr"] = c.use_sfr;
    if (c.head) j["head"] = {{"width", c.head->width}, {"se", c.head->use_se}};
    return j;
}

inline NetworkConfig network_config_from_json(const json& j) {
    try {
        NetworkConfig c;
        c.name = j.value("name", std::string{});
        c.dataset = j.value("dataset", std::string{"synthetic"});
        c.input_resolution = j.value("input_resolution", 32);
        c.input_channels = j.value("input_channels", 3);
        c.num_classes = j.value("num_classes", 10);
        if (j.contains("stem")) {
            const auto& s = j.at("stem");
            c.stem.kernel = s.value("kernel", 3);
            c.stem.stride = s.value("stride", 1);
            c.stem.out_channels = s.value("out_channels", 0);
        }
        for (const auto& b : j.at("blocks"))
            c.blocks.push_back({b.value("layers", 1), b.value("growth", 8),
                                b.value("se", false), b.value("hs", false)});
        c.condense_factor = j.value("condense_factor", 1);
        c.sparse_factor = j.value("sparse_factor", 1);
        c.groups = j.value("groups", 1);
        c.sfr_groups = j.value("sfr_groups", 0);
        c.bottleneck = j.value("bottleneck", 4);
        c.se_reduction = j.value("se_reduction", 4);
        c.use_sfr = j.value("use_sfr", true);
        if (j.contains("head") && !j.at("head").is_null())
            c.head = HeadConfig{j.at("head").value("width", 1024),
                                j.at("head").value("se", false)};
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

inline json data_config_to_json(const DataConfig& d) {
    json j;
    j["kind"] = d.kind;
    j["paths"] = d.paths;
    j["samples"] = d.samples;
    j["classes"] = d.classes;
    j["resolution"] = d.resolution;
    j["channels"] = d.channels;
    j["noise"] = d.noise;
    j["augment"] = d.augment;
    j["mean"] = d.mean;
    j["stddev"] = d.stddev;
    j["seed"] = d.seed;
    return j;
}

inline DataConfig data_config_from_json(const json& j) {
    DataConfig d;
    d.kind = j.value("kind", std::string{"synthetic_blobs"});
    if (j.contains("paths")) d.paths = j.at("paths").get<std::vector<std::string>>();
    d.samples = j.value("samples", 200);
    d.classes = j.value("classes", 2);
    d.resolution = j.value("resolution", 8);
    d.channels = j.value("channels", 3);
    d.noise = j.value("noise", 0.25f);
    d.augment = j.value("augment", false);
    if (j.contains("mean")) d.mean = j.at("mean").get<std::vector<float>>();
    if (j.contains("stddev")) d.stddev = j.at("stddev").get<std::vector<float>>();
    d.seed = j.value("seed", 1u);
    return d;
}

inline json train_config_to_json(const TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["lr"] = t.lr0;
    j["momentum"] = t.momentum;
    j["weight_decay"] = t.weight_decay;
    j["nesterov"] = t.nesterov;
    j["seed"] = t.seed;
    j["data"] = data_config_to_json(t.data);
    return j;
}

inline TrainConfig train_config_from_json(const json& j) {
    try {
        TrainConfig t;
        t.epochs = j.value("epochs", 30);
        t.batch_size = j.value("batch_size", 32);
        t.lr0 = j.value("lr", 0.1f);
        t.momentum = j.value("momentum", 0.9f);
        t.weight_decay = j.value("weight_decay", 4e-5f);
        t.nesterov = j.value("nesterov", true);
        t.seed = j.value("seed", 1u);
        if (j.contains("data")) t.data = data_config_from_json(j.at("data"));
        return t;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
}

/// A run configuration file: {"model": {...}, "train": {...}}; the train
/// section is optional for analysis-only subcommands.
struct RunConfig {
    NetworkConfig model;
    TrainConfig train;
    bool has_train = false;
};

inline RunConfig parse_run_config(const json& j) {
    try {
        RunConfig rc;
        rc.model = network_config_from_json(j.contains("model") ? j.at("model") : j);
        if (j.contains("train")) {
            rc.train = train_config_from_json(j.at("train"));
            rc.has_train = true;
        }
        return rc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("parse error in " + path + ": " + e.what());
    }
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(load_json_file(path));
}

}  // namespace cnv2
