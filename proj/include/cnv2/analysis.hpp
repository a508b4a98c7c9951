#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cnv2/network.hpp"
#include "cnv2/train.hpp"

namespace cnv2 {

enum class Granularity { per_group, per_layer };
enum class Aggregation { mean, sum };

/// Weight-strength matrix between feature producers and consumers. Rows
/// are source segments (stem, then each dense layer); columns are target
/// layers, split per LGC filter group at per_group granularity. Cells with
/// source >= target are undefined; cells whose connections were all pruned
/// are flagged distinctly from live zero-valued ones.
struct ConnectivityMatrix {
    enum class Cell : std::uint8_t { undefined, pruned, live };

    int rows = 0, cols = 0;
    std::vector<std::string> row_labels, col_labels;
    std::vector<float> values;  // rows * cols, row-major
    std::vector<Cell> flags;
    Granularity granularity = Granularity::per_group;
    Aggregation aggregation = Aggregation::mean;

    float& value(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    float value(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    Cell& flag(int r, int c) { return flags[static_cast<std::size_t>(r) * cols + c]; }
    Cell flag(int r, int c) const { return flags[static_cast<std::size_t>(r) * cols + c]; }
};

/// Strength of the reuse connections, read off the LGC weights and masks
/// and mapped back to the producing segment of each input column.
inline ConnectivityMatrix connectivity(Network& net, Granularity granularity,
                                       Aggregation agg = Aggregation::mean) {
    const std::vector<Segment> segs = net.segment_layout();
    const int num_layers = net.dense_layer_count;
    const int groups = net.config.groups;

    ConnectivityMatrix m;
    m.granularity = granularity;
    m.aggregation = agg;
    m.rows = num_layers;  // sources: stem (owner 0) .. layer num_layers-1
    m.cols = granularity == Granularity::per_group ? num_layers * groups : num_layers;
    m.values.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0f);
    m.flags.assign(m.values.size(), ConnectivityMatrix::Cell::undefined);
    for (int s = 0; s < m.rows; ++s)
        m.row_labels.push_back(s == 0 ? "stem" : "L" + std::to_string(s));
    for (int t = 1; t <= num_layers; ++t) {
        if (granularity == Granularity::per_group)
            for (int g = 0; g < groups; ++g)
                m.col_labels.push_back("L" + std::to_string(t) + ".g" + std::to_string(g));
        else
            m.col_labels.push_back("L" + std::to_string(t));
    }

    std::vector<int> seg_start(segs.size(), 0);
    for (std::size_t s = 1; s < segs.size(); ++s)
        seg_start[s] = seg_start[s - 1] + segs[s - 1].channels;

    int t = 0;
    for (auto& blk : net.blocks)
        for (auto& layer : blk) {
            ++t;  // 1-based target index; consumes segments [0, t)
            const LgcLayer& lgc = layer.lgc;
            for (int s = 0; s < t && s < m.rows; ++s) {
                const int c0 = seg_start[s];
                const int c1 = c0 + segs[s].channels;
                if (granularity == Granularity::per_group) {
                    for (int g = 0; g < groups; ++g) {
                        double acc = 0.0;
                        std::int64_t n = 0;
                        for (int j = c0; j < c1; ++j) {
                            if (!lgc.col_mask[g][j]) continue;
                            for (int o = g * lgc.rows_per_group();
                                 o < (g + 1) * lgc.rows_per_group(); ++o)
                                acc += std::abs(
                                    lgc.weights.data[static_cast<std::size_t>(o) *
                                                         lgc.in_channels +
                                                     j]);
                            n += lgc.rows_per_group();
                        }
                        const int col = (t - 1) * groups + g;
                        if (n == 0) {
                            m.flag(s, col) = ConnectivityMatrix::Cell::pruned;
                        } else {
                            m.flag(s, col) = ConnectivityMatrix::Cell::live;
                            m.value(s, col) = static_cast<float>(
                                agg == Aggregation::mean ? acc / n : acc);
                        }
                    }
                } else {
                    double acc = 0.0;
                    std::int64_t n = 0;
                    for (int g = 0; g < groups; ++g)
                        for (int j = c0; j < c1; ++j) {
                            if (!lgc.col_mask[g][j]) continue;
                            for (int o = g * lgc.rows_per_group();
                                 o < (g + 1) * lgc.rows_per_group(); ++o)
                                acc += std::abs(
                                    lgc.weights.data[static_cast<std::size_t>(o) *
                                                         lgc.in_channels +
                                                     j]);
                            n += lgc.rows_per_group();
                        }
                    const int col = t - 1;
                    if (n == 0) {
                        m.flag(s, col) = ConnectivityMatrix::Cell::pruned;
                    } else {
                        m.flag(s, col) = ConnectivityMatrix::Cell::live;
                        m.value(s, col) =
                            static_cast<float>(agg == Aggregation::mean ? acc / n : acc);
                    }
                }
            }
        }
    return m;
}

/// Writes <base>.csv (pruned cells as NA, undefined cells empty) and
/// <base>.pgm (8-bit grayscale, min-max scaled over live cells; pruned and
/// undefined cells render black). Byte output is deterministic.
inline void export_heatmap(const ConnectivityMatrix& m, const std::string& base_path) {
    {
        std::ofstream csv(base_path + ".csv");
        if (!csv) throw std::runtime_error("cannot write " + base_path + ".csv");
        csv << "# granularity="
            << (m.granularity == Granularity::per_group ? "per_group" : "per_layer")
            << " aggregation=" << (m.aggregation == Aggregation::mean ? "mean" : "sum")
            << "\n";
        csv << "source";
        for (const auto& c : m.col_labels) csv << "," << c;
        csv << "\n";
        char buf[64];
        for (int r = 0; r < m.rows; ++r) {
            csv << m.row_labels[r];
            for (int c = 0; c < m.cols; ++c) {
                csv << ",";
                switch (m.flag(r, c)) {
                    case ConnectivityMatrix::Cell::undefined: break;
                    case ConnectivityMatrix::Cell::pruned: csv << "NA"; break;
                    case ConnectivityMatrix::Cell::live:
                        std::snprintf(buf, sizeof(buf), "%.6g", m.value(r, c));
                        csv << buf;
                        break;
                }
            }
            csv << "\n";
        }
    }
    {
        float lo = 0.0f, hi = 0.0f;
        bool any = false;
        for (std::size_t i = 0; i < m.values.size(); ++i)
            if (m.flags[i] == ConnectivityMatrix::Cell::live) {
                if (!any || m.values[i] < lo) lo = m.values[i];
                if (!any || m.values[i] > hi) hi = m.values[i];
                any = true;
            }
        std::ofstream pgm(base_path + ".pgm", std::ios::binary);
        if (!pgm) throw std::runtime_error("cannot write " + base_path + ".pgm");
        pgm << "P5\n" << m.cols << " " << m.rows << "\n255\n";
        for (std::size_t i = 0; i < m.values.size(); ++i) {
            unsigned char px = 0;
            if (m.flags[i] == ConnectivityMatrix::Cell::live) {
                if (hi == lo)
                    px = 255;  // min == max maps to full scale
                else
                    px = static_cast<unsigned char>(
                        std::lround((m.values[i] - lo) / (hi - lo) * 255.0));
            }
            pgm.put(static_cast<char>(px));
        }
    }
}

/// Parses a heatmap CSV back into values/flags (labels ignored); the
/// round-trip companion of export_heatmap.
inline ConnectivityMatrix parse_heatmap_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(f, line);  // metadata comment
    std::getline(f, line);  // header
    ConnectivityMatrix m;
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        while (std::getline(ss, cell, ',')) m.col_labels.push_back(cell);
        m.cols = static_cast<int>(m.col_labels.size());
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        m.row_labels.push_back(cell);
        for (int c = 0; c < m.cols; ++c) {
            if (!std::getline(ss, cell, ',')) cell.clear();
            if (cell.empty()) {
                m.values.push_back(0.0f);
                m.flags.push_back(ConnectivityMatrix::Cell::undefined);
            } else if (cell == "NA") {
                m.values.push_back(0.0f);
                m.flags.push_back(ConnectivityMatrix::Cell::pruned);
            } else {
                m.values.push_back(std::stof(cell));
                m.flags.push_back(ConnectivityMatrix::Cell::live);
            }
        }
    }
    m.rows = static_cast<int>(m.row_labels.size());
    return m;
}

struct SweepRow {
    int value = 0;
    std::int64_t flops = 0, params = 0;
    double final_acc = -1.0;  // < 0 when training was skipped
};

/// Builds (and optionally trains) one model per axis value and reports the
/// deploy-form FLOPs/params plus the final training accuracy. Axis 'S'
/// varies the sparse factor; axis 'G' varies the SFR group count, which by
/// construction leaves the FLOPs untouched.
inline std::vector<SweepRow> ablation_sweep(const NetworkConfig& base, const TrainConfig& tc,
                                            char axis, const std::vector<int>& values,
                                            bool do_train) {
    std::vector<SweepRow> rows;
    for (int v : values) {
        NetworkConfig cfg = base;
        if (axis == 'S')
            cfg.sparse_factor = v;
        else if (axis == 'G')
            cfg.sfr_groups = v;
        else
            throw std::invalid_argument("ablation_sweep: axis must be S or G");
        cfg.validate();
        SweepRow row;
        row.value = v;
        {
            Network probe = build_network(cfg, tc.seed);
            probe.sparsify_fully();
            const CostBreakdown c = count_cost(probe);
            row.flops = c.total_flops();
            row.params = c.total_params();
        }
        if (do_train) {
            Network net = build_network(cfg, tc.seed);
            Dataset ds = load_dataset(tc.data);
            TrainResult tr = train(net, tc, ds);
            row.final_acc = tr.final_acc;
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, char axis,
                            const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << axis << ",flops,params,final_acc\n";
    char buf[96];
    for (const auto& r : rows) {
        if (r.final_acc >= 0.0)
            std::snprintf(buf, sizeof(buf), "%d,%lld,%lld,%.4f\n", r.value,
                          static_cast<long long>(r.flops), static_cast<long long>(r.params),
                          r.final_acc);
        else
            std::snprintf(buf, sizeof(buf), "%d,%lld,%lld,\n", r.value,
                          static_cast<long long>(r.flops), static_cast<long long>(r.params));
        f << buf;
    }
}

}  // namespace cnv2
