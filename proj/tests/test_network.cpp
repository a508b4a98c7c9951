#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cnv2/config.hpp"
#include "cnv2/network.hpp"
#include "helpers.hpp"

using namespace cnv2;
using cnv2::testing::preset_path;
using cnv2::testing::toy_config;

namespace {

Tensor4 random_tensor(int n, int c, int h, int w, unsigned seed) {
    Tensor4 t(n, c, h, w);
    std::mt19937 rng(seed);
    fill_normal(t.data, rng, 1.0f);
    return t;
}

// Reference interpreter for a dense block: keeps the buffer as an explicit
// list of per-segment tensors and applies the reactivation increment
// slice by slice. Composes only the free tensor functions.
std::vector<Tensor4> interpret_block(Network& net, const Tensor4& stem_out) {
    std::vector<Tensor4> segments{stem_out};
    for (auto& layer : net.blocks[0]) {
        Tensor4 xin = segments[0];
        for (std::size_t s = 1; s < segments.size(); ++s)
            xin = concat_channels(xin, segments[s]);

        Tensor4 u = conv2d(xin, layer.lgc.masked_weights(), 1, 0);
        std::vector<float> gamma = layer.bn1.gamma, beta = layer.bn1.beta;
        BnStats scratch(static_cast<int>(gamma.size()));
        Tensor4 v = apply_act(layer.act1.kind,
                              batch_norm(u, gamma, beta, scratch, BnMode::train));
        Tensor4 s = channel_shuffle(v, layer.shuffle.groups);
        Tensor4 x_new = conv2d(s, layer.conv3.w, 1, 1);

        Tensor4 conv_y = conv2d(x_new, layer.sfr.masked_weights(), 1, 0);
        std::vector<float> sg = layer.sfr.bn.gamma, sb = layer.sfr.bn.beta;
        BnStats scratch2(static_cast<int>(sg.size()));
        Tensor4 y = relu(batch_norm(conv_y, sg, sb, scratch2, BnMode::train));

        int offset = 0;
        for (auto& seg : segments) {
            Tensor4 inc = slice_channels(y, offset, seg.c);
            add_inplace(seg, inc);
            offset += seg.c;
        }
        segments.push_back(x_new);
    }
    return segments;
}

}  // namespace

TEST_CASE("dense layer grows the buffer by the growth rate") {
    NetworkConfig cfg = toy_config(1, 2);
    Network net = build_network(cfg, 3);
    CHECK(net.config.stem_out() == 8);
    Tensor4 x = random_tensor(1, 3, 8, 8, 4);
    net.forward(x, false);
    // stem 8 + two layers of growth 4
    CHECK(net.cached_final_buffer.width() == 16);
    CHECK(net.cached_final_buffer.segments.size() == 3);
}

TEST_CASE("channel bookkeeping holds across every block") {
    NetworkConfig cfg = toy_config(3, 4);
    Network net = build_network(cfg, 5);
    int expect = cfg.stem_out();
    for (const auto& b : cfg.blocks) expect += b.layers * b.growth;
    CHECK(net.final_width == expect);
    Tensor4 x = random_tensor(1, 3, 8, 8, 6);
    net.forward(x, false);
    CHECK(net.cached_final_buffer.width() == expect);
}

TEST_CASE("network forward matches the segment-list reference interpreter") {
    NetworkConfig cfg = toy_config(1, 2);
    Network net = build_network(cfg, 7);
    // make the masks non-trivial before comparing
    net.for_each_sfr([](SfrModule& m) { m.prune_stage(); });
    net.for_each_lgc([](LgcLayer& l) { l.prune_stage(); });

    Tensor4 x = random_tensor(2, 3, 8, 8, 8);
    Tensor4 stem_out =
        net.stem_act.forward(net.stem_bn.forward(net.stem.forward(x, true), true), true);
    std::vector<Tensor4> want = interpret_block(net, stem_out);

    net.forward(x, true);
    const FeatureBuffer& got = net.cached_final_buffer;
    int offset = 0;
    for (std::size_t s = 0; s < want.size(); ++s) {
        Tensor4 seg = slice_channels(got.features, offset, want[s].c);
        CHECK(max_abs_diff(seg, want[s]) == 0.0);
        offset += want[s].c;
    }

    // layer 2 must have consumed the reactivated (not original) stem segment
    Tensor4 reactivated_stem = want[0];
    CHECK(max_abs_diff(reactivated_stem, stem_out) > 0.0);
}

TEST_CASE("zeroing one layer's reactivation only removes its additive term") {
    NetworkConfig cfg = toy_config(1, 2);
    cfg.blocks[0].layers = 1;
    Network a = build_network(cfg, 21);
    Network b(cfg);
    copy_shared_weights(a, b);
    // silence the layer's reactivation in b
    std::fill(b.blocks[0][0].sfr.mask.begin(), b.blocks[0][0].sfr.mask.end(), 0);

    Tensor4 x = random_tensor(2, 3, 8, 8, 22);
    a.forward(x, true);
    b.forward(x, true);

    // x_1 is produced before the update, so it is bit-identical
    Tensor4 a_x1 = slice_channels(a.cached_final_buffer.features, cfg.stem_out(), 4);
    Tensor4 b_x1 = slice_channels(b.cached_final_buffer.features, cfg.stem_out(), 4);
    CHECK(max_abs_diff(a_x1, b_x1) == 0.0);

    // the stem segment differs from a's exactly by the missing y
    Tensor4 missing_y = a.blocks[0][0].sfr.forward(b_x1, true);
    Tensor4 patched =
        add(slice_channels(b.cached_final_buffer.features, 0, cfg.stem_out()), missing_y);
    Tensor4 a_seg0 = slice_channels(a.cached_final_buffer.features, 0, cfg.stem_out());
    CHECK(max_abs_diff(patched, a_seg0) < 1e-6);
}

TEST_CASE("fully pruned SFR leaves prior segments untouched") {
    NetworkConfig cfg = toy_config(1, 2);
    Network net = build_network(cfg, 9);
    net.for_each_sfr([](SfrModule& m) { std::fill(m.mask.begin(), m.mask.end(), 0); });

    Tensor4 x = random_tensor(1, 3, 8, 8, 10);
    Tensor4 stem_out =
        net.stem_act.forward(net.stem_bn.forward(net.stem.forward(x, true), true), true);
    net.forward(x, true);
    Tensor4 seg0 = slice_channels(net.cached_final_buffer.features, 0, stem_out.c);
    CHECK(max_abs_diff(seg0, stem_out) == 0.0);
}

TEST_CASE("ImageNet preset produces (1,1000) logits from 224x224 input") {
    RunConfig rc = load_run_config(preset_path("cnv2-a.json"));
    Network net = build_network(rc.model, 11);
    Tensor4 x = random_tensor(1, 3, 224, 224, 12);
    Tensor4 logits = net.forward(x, false);
    CHECK(logits.n == 1);
    CHECK(logits.c == 1000);
    CHECK(logits.h == 1);
    CHECK(logits.w == 1);
}

TEST_CASE("CIFAR-style toy net produces ten logits at 32x32") {
    NetworkConfig cfg;
    cfg.dataset = "cifar10";
    cfg.input_resolution = 32;
    cfg.num_classes = 10;
    cfg.stem = {3, 1, 0};
    cfg.blocks = {{2, 8, false, false}, {2, 16, false, false}, {2, 32, false, false}};
    cfg.condense_factor = cfg.sparse_factor = cfg.groups = 4;
    Network net = build_network(cfg, 13);
    Tensor4 x = random_tensor(1, 3, 32, 32, 14);
    Tensor4 logits = net.forward(x, false);
    CHECK(logits.c == 10);
}

TEST_CASE("config validation rejects malformed models") {
    NetworkConfig five = toy_config(3, 4);
    five.dataset = "imagenet";
    CHECK_THROWS_AS(Network(five), std::invalid_argument);  // needs 5 blocks

    NetworkConfig bad_growth = toy_config(1, 4);
    bad_growth.blocks[0].growth = 6;  // not divisible by G=4
    CHECK_THROWS_AS(Network(bad_growth), std::invalid_argument);

    NetworkConfig net_ok = toy_config(1, 2);
    Network n = build_network(net_ok, 15);
    Tensor4 wrong_res = random_tensor(1, 3, 16, 16, 16);
    CHECK_THROWS_AS(n.forward(wrong_res, false), std::invalid_argument);
}

TEST_CASE("end-to-end gradients agree with finite differences") {
    NetworkConfig cfg = toy_config(2, 2);
    Network net = build_network(cfg, 17);
    Tensor4 x = random_tensor(2, 3, 8, 8, 18);
    const double err = cnv2::testing::network_grad_check(net, x);
    CHECK(err < 1e-2);
}

TEST_CASE("forced-zero SFR equals the structurally SFR-free twin") {
    NetworkConfig cfg = toy_config(3, 4);
    Network net = build_network(cfg, 19);
    net.for_each_sfr([](SfrModule& m) { std::fill(m.mask.begin(), m.mask.end(), 0); });

    NetworkConfig twin_cfg = cfg;
    twin_cfg.use_sfr = false;
    Network twin(twin_cfg);
    copy_shared_weights(net, twin);

    Tensor4 x = random_tensor(2, 3, 8, 8, 20);
    Tensor4 a = net.forward(x, false);
    Tensor4 b = twin.forward(x, false);
    CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("cost accounting matches hand-computed counts") {
    NetworkConfig cfg;
    cfg.dataset = "synthetic";
    cfg.input_resolution = 4;
    cfg.num_classes = 2;
    cfg.stem = {3, 1, 8};
    cfg.blocks = {{1, 4, false, false}};
    cfg.condense_factor = cfg.sparse_factor = cfg.groups = 1;
    Network net = build_network(cfg, 21);
    const CostBreakdown c = count_cost(net);
    // stem 3*8*9 = 216 w on 4x4: 3456 MACs; LGC dense 1x1 I=8 O=16:
    // 128 w -> 128*16 = 2048 MACs; conv3 4*16*9 = 576 w -> 9216; SFR I=4
    // O=8: 32 w -> 512; FC 12*2 = 24. BN affine 16+32+16, FC params 26.
    CHECK(c.conv_flops == 3456 + 2048 + 9216 + 512);
    CHECK(c.fc_flops == 24);
    CHECK(c.conv_params == 216 + 128 + 576 + 32);
    CHECK(c.bn_params == 16 + 32 + 16);
    CHECK(c.fc_params == 26);
    CHECK(c.sfr_flops == 512);
}

TEST_CASE("ImageNet presets land near the published figures") {
    struct Ref {
        const char* file;
        double flops, params;
    };
    for (const Ref r : {Ref{"cnv2-a.json", 46e6, 2.0e6}, Ref{"cnv2-b.json", 146e6, 3.6e6},
                        Ref{"cnv2-c.json", 309e6, 6.1e6}}) {
        RunConfig rc = load_run_config(preset_path(r.file));
        Network net(rc.model);
        net.sparsify_fully();
        const CostBreakdown c = count_cost(net);
        CHECK(std::abs(c.total_flops() / r.flops - 1.0) < 0.15);
        CHECK(std::abs(c.total_params() / r.params - 1.0) < 0.10);
    }
}

TEST_CASE("sparse factor cuts SFR FLOPs, group count leaves them unchanged") {
    RunConfig rc = load_run_config(preset_path("cifar10.json"));

    std::int64_t base_flops = -1;
    for (int g : {1, 2, 4, 8}) {
        NetworkConfig cfg = rc.model;
        cfg.sfr_groups = g;
        Network net(cfg);
        net.sparsify_fully();
        const std::int64_t f = count_flops(net);
        if (base_flops < 0) base_flops = f;
        CHECK(f == base_flops);
    }

    std::int64_t prev = -1;
    for (int s : {1, 2, 4}) {
        NetworkConfig cfg = rc.model;
        cfg.sparse_factor = s;
        Network net(cfg);
        net.sparsify_fully();
        const std::int64_t f = count_cost(net).sfr_flops;
        if (prev >= 0) CHECK(f < prev);
        prev = f;
    }
}

TEST_CASE("pruning only ever removes parameters") {
    NetworkConfig cfg = toy_config(3, 4);
    Network dense = build_network(cfg, 23);
    const std::int64_t before = count_params(dense);
    dense.sparsify_fully();
    const std::int64_t after = count_params(dense);
    CHECK(after < before);

    NetworkConfig dense_cfg = toy_config(3, 1);
    Network never_pruned = build_network(dense_cfg, 24);
    const std::int64_t d0 = count_params(never_pruned);
    never_pruned.sparsify_fully();
    CHECK(count_params(never_pruned) == d0);
}
