#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnv2/compile.hpp"
#include "cnv2/config.hpp"
#include "cnv2/network.hpp"

namespace cnv2 {

// Single binary container for checkpoints and compiled plans:
//   magic "CNV2" | version u32 | section tag ("CKPT" or "PLAN")
//   | config length u32 + canonical JSON | record count u32 | records.
// Record: name (u32 length + bytes), shape (u32 ndims + u32 dims),
// kind u8, payload. Kinds: 0 float32 data, 1 float32 data + mask bytes,
// 2 index map (u8 mode, u32 output width, u32 (source,dest) pairs),
// 3 u32 data. All integers and floats little-endian.

constexpr std::uint32_t kContainerVersion = 1;

namespace io {

inline void put_u32(std::ostream& s, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    s.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& s) {
    unsigned char b[4];
    s.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& s, const std::vector<float>& v) {
    for (float x : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        put_u32(s, bits);
    }
}

inline void get_f32(std::istream& s, std::vector<float>& v) {
    for (float& x : v) {
        const std::uint32_t bits = get_u32(s);
        std::memcpy(&x, &bits, 4);
    }
}

}  // namespace io

struct Record {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::uint8_t kind = 0;
    std::vector<float> f32;
    std::vector<std::uint8_t> mask;
    std::vector<std::uint32_t> u32;
    std::uint8_t index_mode = 0;
    std::uint32_t index_width = 0;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

class ContainerWriter {
public:
    ContainerWriter(const std::string& path, const std::string& section,
                    const std::string& config_json)
        : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot write " + path);
        out_.write("CNV2", 4);
        io::put_u32(out_, kContainerVersion);
        out_.write(section.c_str(), 4);
        io::put_u32(out_, static_cast<std::uint32_t>(config_json.size()));
        out_.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
        count_pos_ = out_.tellp();
        io::put_u32(out_, 0);
    }

    void add_f32(const std::string& name, const std::vector<std::uint32_t>& dims,
                 const std::vector<float>& data,
                 const std::vector<std::uint8_t>* mask = nullptr) {
        header(name, dims, mask ? 1 : 0);
        io::put_f32(out_, data);
        if (mask)
            out_.write(reinterpret_cast<const char*>(mask->data()),
                       static_cast<std::streamsize>(mask->size()));
        ++count_;
    }

    void add_u32(const std::string& name, const std::vector<std::uint32_t>& data) {
        header(name, {static_cast<std::uint32_t>(data.size())}, 3);
        for (auto v : data) io::put_u32(out_, v);
        ++count_;
    }

    void add_index(const std::string& name, const IndexMap& m) {
        header(name, {static_cast<std::uint32_t>(m.entries.size()), 2}, 2);
        out_.put(static_cast<char>(m.mode));
        io::put_u32(out_, static_cast<std::uint32_t>(m.output_width));
        io::put_u32(out_, static_cast<std::uint32_t>(m.entries.size()));
        for (const auto& e : m.entries) {
            io::put_u32(out_, e.source);
            io::put_u32(out_, e.dest);
        }
        ++count_;
    }

    void finish() {
        out_.seekp(count_pos_);
        io::put_u32(out_, count_);
        out_.flush();
        if (!out_) throw std::runtime_error("write failure while finishing container");
    }

private:
    void header(const std::string& name, const std::vector<std::uint32_t>& dims,
                std::uint8_t kind) {
        io::put_u32(out_, static_cast<std::uint32_t>(name.size()));
        out_.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put_u32(out_, static_cast<std::uint32_t>(dims.size()));
        for (auto d : dims) io::put_u32(out_, d);
        out_.put(static_cast<char>(kind));
    }

    std::ofstream out_;
    std::streampos count_pos_;
    std::uint32_t count_ = 0;
};

struct Container {
    std::string section;
    std::string config_json;
    std::map<std::string, Record> records;

    const Record& at(const std::string& name) const {
        auto it = records.find(name);
        if (it == records.end())
            throw std::runtime_error("container: missing record " + name);
        return it->second;
    }
};

inline Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CNV2", 4) != 0)
        throw std::runtime_error(path + ": not a CNV2 container");
    const std::uint32_t version = io::get_u32(in);
    if (version != kContainerVersion)
        throw std::runtime_error(path + ": unsupported container version " +
                                 std::to_string(version));
    Container c;
    char tag[4];
    in.read(tag, 4);
    c.section.assign(tag, 4);
    const std::uint32_t cfg_len = io::get_u32(in);
    c.config_json.resize(cfg_len);
    in.read(c.config_json.data(), cfg_len);
    const std::uint32_t count = io::get_u32(in);
    for (std::uint32_t r = 0; r < count; ++r) {
        Record rec;
        const std::uint32_t name_len = io::get_u32(in);
        rec.name.resize(name_len);
        in.read(rec.name.data(), name_len);
        const std::uint32_t ndims = io::get_u32(in);
        rec.dims.resize(ndims);
        for (auto& d : rec.dims) d = io::get_u32(in);
        rec.kind = static_cast<std::uint8_t>(in.get());
        if (rec.kind == 0 || rec.kind == 1) {
            rec.f32.resize(rec.count());
            io::get_f32(in, rec.f32);
            if (rec.kind == 1) {
                rec.mask.resize(rec.count());
                in.read(reinterpret_cast<char*>(rec.mask.data()),
                        static_cast<std::streamsize>(rec.mask.size()));
            }
        } else if (rec.kind == 2) {
            rec.index_mode = static_cast<std::uint8_t>(in.get());
            rec.index_width = io::get_u32(in);
            const std::uint32_t pairs = io::get_u32(in);
            rec.u32.resize(static_cast<std::size_t>(pairs) * 2);
            for (auto& v : rec.u32) v = io::get_u32(in);
        } else if (rec.kind == 3) {
            rec.u32.resize(rec.count());
            for (auto& v : rec.u32) v = io::get_u32(in);
        } else {
            throw std::runtime_error(path + ": unknown record kind");
        }
        if (!in) throw std::runtime_error(path + ": truncated record " + rec.name);
        c.records[rec.name] = std::move(rec);
    }
    return c;
}

namespace detail {

// Conv shapes are stored as (G, O/G, I/G, kh, kw) so the dim product
// equals the payload length while keeping every field recoverable.
inline std::vector<std::uint32_t> conv_dims(const ConvWeights& w) {
    return {static_cast<std::uint32_t>(w.groups),
            static_cast<std::uint32_t>(w.out_per_group()),
            static_cast<std::uint32_t>(w.in_per_group()), static_cast<std::uint32_t>(w.kh),
            static_cast<std::uint32_t>(w.kw)};
}

inline ConvWeights conv_from_record(const Record& r) {
    if (r.dims.size() != 5) throw std::runtime_error("record " + r.name + ": bad conv dims");
    const int groups = static_cast<int>(r.dims[0]);
    ConvWeights w(groups * static_cast<int>(r.dims[1]), groups * static_cast<int>(r.dims[2]),
                  static_cast<int>(r.dims[3]), static_cast<int>(r.dims[4]), groups);
    if (r.f32.size() != w.data.size())
        throw std::runtime_error("record " + r.name + ": payload size mismatch");
    w.data = r.f32;
    return w;
}

inline void write_bn(ContainerWriter& w, const std::string& p, const BatchNormLayer& bn) {
    const auto dims = std::vector<std::uint32_t>{static_cast<std::uint32_t>(bn.channels())};
    w.add_f32(p + ".gamma", dims, bn.gamma);
    w.add_f32(p + ".beta", dims, bn.beta);
    w.add_f32(p + ".running_mean", dims, bn.running.mean);
    w.add_f32(p + ".running_var", dims, bn.running.var);
}

inline void read_bn(const Container& c, const std::string& p, BatchNormLayer& bn) {
    bn.gamma = c.at(p + ".gamma").f32;
    bn.beta = c.at(p + ".beta").f32;
    bn.running.mean = c.at(p + ".running_mean").f32;
    bn.running.var = c.at(p + ".running_var").f32;
    bn.gamma_grad.assign(bn.gamma.size(), 0.0f);
    bn.beta_grad.assign(bn.beta.size(), 0.0f);
}

inline void write_frozen_bn(ContainerWriter& w, const std::string& p, const FrozenBn& bn) {
    if (bn.folded) return;
    const auto dims = std::vector<std::uint32_t>{static_cast<std::uint32_t>(bn.gamma.size())};
    w.add_f32(p + ".gamma", dims, bn.gamma);
    w.add_f32(p + ".beta", dims, bn.beta);
    w.add_f32(p + ".mean", dims, bn.mean);
    w.add_f32(p + ".var", dims, bn.var);
}

inline FrozenBn read_frozen_bn(const Container& c, const std::string& p, bool folded) {
    FrozenBn bn;
    bn.folded = folded;
    if (!folded) {
        bn.gamma = c.at(p + ".gamma").f32;
        bn.beta = c.at(p + ".beta").f32;
        bn.mean = c.at(p + ".mean").f32;
        bn.var = c.at(p + ".var").f32;
    }
    return bn;
}

inline void write_se(ContainerWriter& w, const std::string& p, const SEBlock& se) {
    w.add_f32(p + ".fc1.weight",
              {static_cast<std::uint32_t>(se.fc1.in_features),
               static_cast<std::uint32_t>(se.fc1.out_features)},
              se.fc1.weight);
    w.add_f32(p + ".fc1.bias", {static_cast<std::uint32_t>(se.fc1.out_features)}, se.fc1.bias);
    w.add_f32(p + ".fc2.weight",
              {static_cast<std::uint32_t>(se.fc2.in_features),
               static_cast<std::uint32_t>(se.fc2.out_features)},
              se.fc2.weight);
    w.add_f32(p + ".fc2.bias", {static_cast<std::uint32_t>(se.fc2.out_features)}, se.fc2.bias);
}

inline void read_se(const Container& c, const std::string& p, SEBlock& se) {
    se.fc1.weight = c.at(p + ".fc1.weight").f32;
    se.fc1.bias = c.at(p + ".fc1.bias").f32;
    se.fc2.weight = c.at(p + ".fc2.weight").f32;
    se.fc2.bias = c.at(p + ".fc2.bias").f32;
    se.fc1.weight_grad.assign(se.fc1.weight.size(), 0.0f);
    se.fc1.bias_grad.assign(se.fc1.bias.size(), 0.0f);
    se.fc2.weight_grad.assign(se.fc2.weight.size(), 0.0f);
    se.fc2.bias_grad.assign(se.fc2.bias.size(), 0.0f);
}

inline IndexMap index_from_record(const Record& r) {
    IndexMap m;
    m.mode = static_cast<IndexMap::Mode>(r.index_mode);
    m.output_width = static_cast<int>(r.index_width);
    for (std::size_t i = 0; i + 1 < r.u32.size(); i += 2)
        m.entries.push_back({r.u32[i], r.u32[i + 1]});
    return m;
}

}  // namespace detail

inline void save_checkpoint(Network& net, const std::string& path) {
    json cfg;
    cfg["model"] = network_config_to_json(net.config);
    ContainerWriter w(path, "CKPT", cfg.dump());
    w.add_f32("stem.weight", detail::conv_dims(net.stem.w), net.stem.w.data);
    detail::write_bn(w, "stem.bn", net.stem_bn);
    for (auto& blk : net.blocks)
        for (auto& l : blk) {
            const std::string p = "layer" + std::to_string(l.global_index);
            const auto lgc_mask = l.lgc.elementwise_mask();
            w.add_f32(p + ".lgc.weight", detail::conv_dims(l.lgc.weights), l.lgc.weights.data,
                      &lgc_mask);
            w.add_u32(p + ".lgc.stages", {static_cast<std::uint32_t>(l.lgc.stages_done)});
            detail::write_bn(w, p + ".bn1", l.bn1);
            w.add_f32(p + ".conv3.weight", detail::conv_dims(l.conv3.w), l.conv3.w.data);
            if (l.use_se) detail::write_se(w, p + ".se", l.se);
            if (l.sfr_enabled) {
                w.add_f32(p + ".sfr.weight", detail::conv_dims(l.sfr.weights),
                          l.sfr.weights.data, &l.sfr.mask);
                w.add_u32(p + ".sfr.stages", {static_cast<std::uint32_t>(l.sfr.stages_done)});
                detail::write_bn(w, p + ".sfr.bn", l.sfr.bn);
            }
        }
    if (net.config.head) {
        w.add_f32("head.weight", detail::conv_dims(net.head_conv.w), net.head_conv.w.data);
        detail::write_bn(w, "head.bn", net.head_bn);
        if (net.config.head->use_se) detail::write_se(w, "head.se", net.head_se);
    }
    w.add_f32("classifier.weight",
              {static_cast<std::uint32_t>(net.classifier.in_features),
               static_cast<std::uint32_t>(net.classifier.out_features)},
              net.classifier.weight);
    w.add_f32("classifier.bias", {static_cast<std::uint32_t>(net.classifier.out_features)},
              net.classifier.bias);
    w.finish();
}

inline Network load_checkpoint(const std::string& path) {
    Container c = read_container(path);
    if (c.section != "CKPT")
        throw std::runtime_error(path + ": expected a checkpoint, found section " + c.section);
    json cfg = json::parse(c.config_json);
    Network net(network_config_from_json(cfg.at("model")));

    auto load_conv = [&](const std::string& name, ConvWeights& w) {
        const Record& r = c.at(name);
        if (r.f32.size() != w.data.size())
            throw std::runtime_error(name + ": size mismatch in checkpoint");
        w.data = r.f32;
    };
    load_conv("stem.weight", net.stem.w);
    detail::read_bn(c, "stem.bn", net.stem_bn);
    for (auto& blk : net.blocks)
        for (auto& l : blk) {
            const std::string p = "layer" + std::to_string(l.global_index);
            {
                const Record& r = c.at(p + ".lgc.weight");
                if (r.f32.size() != l.lgc.weights.data.size() ||
                    r.mask.size() != r.f32.size())
                    throw std::runtime_error(p + ".lgc.weight: size mismatch in checkpoint");
                l.lgc.weights.data = r.f32;
                // column masks are shared across a group's rows; row 0 of
                // each group carries them
                for (int g = 0; g < l.lgc.groups; ++g) {
                    const std::size_t row0 =
                        static_cast<std::size_t>(g) * l.lgc.rows_per_group() *
                        l.lgc.in_channels;
                    for (int j = 0; j < l.lgc.in_channels; ++j)
                        l.lgc.col_mask[g][j] = r.mask[row0 + j];
                }
            }
            l.lgc.stages_done = static_cast<int>(c.at(p + ".lgc.stages").u32.at(0));
            detail::read_bn(c, p + ".bn1", l.bn1);
            load_conv(p + ".conv3.weight", l.conv3.w);
            if (l.use_se) detail::read_se(c, p + ".se", l.se);
            if (l.sfr_enabled) {
                const Record& r = c.at(p + ".sfr.weight");
                if (r.f32.size() != l.sfr.weights.data.size() ||
                    r.mask.size() != l.sfr.mask.size())
                    throw std::runtime_error(p + ".sfr.weight: size mismatch in checkpoint");
                l.sfr.weights.data = r.f32;
                l.sfr.mask = r.mask;
                l.sfr.stages_done = static_cast<int>(c.at(p + ".sfr.stages").u32.at(0));
                detail::read_bn(c, p + ".sfr.bn", l.sfr.bn);
            }
        }
    if (net.config.head) {
        load_conv("head.weight", net.head_conv.w);
        detail::read_bn(c, "head.bn", net.head_bn);
        if (net.config.head->use_se) detail::read_se(c, "head.se", net.head_se);
    }
    net.classifier.weight = c.at("classifier.weight").f32;
    net.classifier.bias = c.at("classifier.bias").f32;
    return net;
}

inline void save_plan(const InferencePlan& plan, const std::string& path) {
    json cfg;
    cfg["model"] = network_config_to_json(plan.config);
    cfg["folded"] = plan.folded;
    ContainerWriter w(path, "PLAN", cfg.dump());
    auto add_bias = [&](const std::string& name, const std::vector<float>& b) {
        if (!b.empty())
            w.add_f32(name, {static_cast<std::uint32_t>(b.size())}, b);
    };
    w.add_f32("stem.weight", detail::conv_dims(plan.stem_w), plan.stem_w.data);
    add_bias("stem.bias", plan.stem_bias);
    detail::write_frozen_bn(w, "stem.bn", plan.stem_bn);
    int idx = 1;
    for (const auto& blk : plan.blocks)
        for (const auto& l : blk) {
            const std::string p = "layer" + std::to_string(idx++);
            w.add_index(p + ".lgc.gather", l.lgc_gather);
            w.add_f32(p + ".lgc.weight", detail::conv_dims(l.lgc_conv), l.lgc_conv.data);
            add_bias(p + ".lgc.bias", l.lgc_bias);
            detail::write_frozen_bn(w, p + ".bn1", l.bn1);
            w.add_f32(p + ".conv3.weight", detail::conv_dims(l.conv3), l.conv3.data);
            if (l.se.present) {
                w.add_f32(p + ".se.fc1.weight", {static_cast<std::uint32_t>(l.se.fc1_w.size())},
                          l.se.fc1_w);
                w.add_f32(p + ".se.fc1.bias", {static_cast<std::uint32_t>(l.se.fc1_b.size())},
                          l.se.fc1_b);
                w.add_f32(p + ".se.fc2.weight", {static_cast<std::uint32_t>(l.se.fc2_w.size())},
                          l.se.fc2_w);
                w.add_f32(p + ".se.fc2.bias", {static_cast<std::uint32_t>(l.se.fc2_b.size())},
                          l.se.fc2_b);
            }
            if (l.sfr_enabled) {
                w.add_f32(p + ".sfr.weight", detail::conv_dims(l.sfr_conv), l.sfr_conv.data);
                w.add_index(p + ".sfr.index", l.sfr_index);
                add_bias(p + ".sfr.bias", l.sfr_bias);
                detail::write_frozen_bn(w, p + ".sfr.bn", l.sfr_bn);
            }
        }
    if (plan.config.head) {
        w.add_f32("head.weight", detail::conv_dims(plan.head_w), plan.head_w.data);
        add_bias("head.bias", plan.head_bias);
        detail::write_frozen_bn(w, "head.bn", plan.head_bn);
        if (plan.head_se.present) {
            w.add_f32("head.se.fc1.weight",
                      {static_cast<std::uint32_t>(plan.head_se.fc1_w.size())},
                      plan.head_se.fc1_w);
            w.add_f32("head.se.fc1.bias",
                      {static_cast<std::uint32_t>(plan.head_se.fc1_b.size())},
                      plan.head_se.fc1_b);
            w.add_f32("head.se.fc2.weight",
                      {static_cast<std::uint32_t>(plan.head_se.fc2_w.size())},
                      plan.head_se.fc2_w);
            w.add_f32("head.se.fc2.bias",
                      {static_cast<std::uint32_t>(plan.head_se.fc2_b.size())},
                      plan.head_se.fc2_b);
        }
    }
    w.add_f32("classifier.weight", {static_cast<std::uint32_t>(plan.fc_w.size())}, plan.fc_w);
    w.add_f32("classifier.bias", {static_cast<std::uint32_t>(plan.fc_b.size())}, plan.fc_b);
    w.finish();
}

inline InferencePlan load_plan(const std::string& path) {
    Container c = read_container(path);
    if (c.section != "PLAN")
        throw std::runtime_error(path + ": expected a plan, found section " + c.section);
    json cfg = json::parse(c.config_json);
    InferencePlan plan;
    plan.config = network_config_from_json(cfg.at("model"));
    plan.folded = cfg.value("folded", false);
    auto get_bias = [&](const std::string& name, std::vector<float>& b) {
        auto it = c.records.find(name);
        if (it != c.records.end()) b = it->second.f32;
    };
    plan.stem_w = detail::conv_from_record(c.at("stem.weight"));
    get_bias("stem.bias", plan.stem_bias);
    plan.stem_bn = detail::read_frozen_bn(c, "stem.bn", plan.folded);
    int idx = 1;
    for (const auto& bc : plan.config.blocks) {
        plan.blocks.emplace_back();
        for (int li = 0; li < bc.layers; ++li) {
            const std::string p = "layer" + std::to_string(idx++);
            CompiledDenseLayer l;
            l.growth = bc.growth;
            l.act1 = bc.use_hs ? Act::hard_swish : Act::relu;
            l.shuffle_groups = plan.config.groups;
            l.lgc_gather = detail::index_from_record(c.at(p + ".lgc.gather"));
            l.lgc_conv = detail::conv_from_record(c.at(p + ".lgc.weight"));
            get_bias(p + ".lgc.bias", l.lgc_bias);
            l.bn1 = detail::read_frozen_bn(c, p + ".bn1", plan.folded);
            l.conv3 = detail::conv_from_record(c.at(p + ".conv3.weight"));
            if (bc.use_se) {
                l.se.present = true;
                l.se.channels = bc.growth;
                l.se.reduction = plan.config.se_reduction;
                l.se.fc1_w = c.at(p + ".se.fc1.weight").f32;
                l.se.fc1_b = c.at(p + ".se.fc1.bias").f32;
                l.se.fc2_w = c.at(p + ".se.fc2.weight").f32;
                l.se.fc2_b = c.at(p + ".se.fc2.bias").f32;
            }
            l.sfr_enabled = plan.config.use_sfr;
            if (l.sfr_enabled) {
                l.sfr_conv = detail::conv_from_record(c.at(p + ".sfr.weight"));
                l.sfr_index = detail::index_from_record(c.at(p + ".sfr.index"));
                get_bias(p + ".sfr.bias", l.sfr_bias);
                l.sfr_bn = detail::read_frozen_bn(c, p + ".sfr.bn", plan.folded);
            }
            l.in_width = l.sfr_enabled ? l.sfr_index.output_width : 0;
            plan.blocks.back().push_back(std::move(l));
        }
    }
    if (plan.config.head) {
        plan.head_w = detail::conv_from_record(c.at("head.weight"));
        get_bias("head.bias", plan.head_bias);
        plan.head_bn = detail::read_frozen_bn(c, "head.bn", plan.folded);
        if (plan.config.head->use_se) {
            plan.head_se.present = true;
            plan.head_se.channels = plan.config.head->width;
            plan.head_se.reduction = plan.config.se_reduction;
            plan.head_se.fc1_w = c.at("head.se.fc1.weight").f32;
            plan.head_se.fc1_b = c.at("head.se.fc1.bias").f32;
            plan.head_se.fc2_w = c.at("head.se.fc2.weight").f32;
            plan.head_se.fc2_b = c.at("head.se.fc2.bias").f32;
        }
    }
    plan.fc_w = c.at("classifier.weight").f32;
    plan.fc_b = c.at("classifier.bias").f32;
    plan.fc_out = plan.config.num_classes;
    return plan;
}

}  // namespace cnv2
