// Command-line front end: training, compilation, equivalence checking,
// cost accounting, connectivity analysis and ablation sweeps over
// CondenseNetV2-style models described by JSON config files.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cnv2/analysis.hpp"
#include "cnv2/compile.hpp"
#include "cnv2/config.hpp"
#include "cnv2/network.hpp"
#include "cnv2/serialize.hpp"
#include "cnv2/train.hpp"

namespace {

using namespace cnv2;

struct Options {
    std::string config_path, checkpoint_path, out_path;
    std::string granularity = "per_group";
    std::string aggregation = "mean";
    std::string axis = "S";
    std::vector<int> values;
    int rounds = 32;
    int seed = -1;
    bool fold_bn = false;
    bool do_train = false;
    std::string reference_path;
};

std::string default_reference_path(const char* argv0) {
    namespace fs = std::filesystem;
    const fs::path local = fs::path("presets") / "reference_figures.json";
    if (fs::exists(local)) return local.string();
    const fs::path beside =
        fs::path(argv0).parent_path().parent_path() / "presets" / "reference_figures.json";
    if (fs::exists(beside)) return beside.string();
    return {};
}

int cmd_train(const Options& opt) {
    RunConfig rc = load_run_config(opt.config_path);
    if (!rc.has_train) throw ConfigError(opt.config_path + ": missing train section");
    if (opt.seed >= 0) rc.train.seed = static_cast<unsigned>(opt.seed);
    std::filesystem::create_directories(opt.out_path);

    Network net = build_network(rc.model, rc.train.seed);
    Dataset ds = load_dataset(rc.train.data);
    std::printf("training %s: %d epochs, %zu samples, lr0 %.4g\n",
                rc.model.name.empty() ? "model" : rc.model.name.c_str(), rc.train.epochs,
                ds.size(), rc.train.lr0);
    TrainResult r = train(net, rc.train, ds,
                          (std::filesystem::path(opt.out_path) / "metrics.csv").string());
    const std::string ckpt = (std::filesystem::path(opt.out_path) / "checkpoint.bin").string();
    save_checkpoint(net, ckpt);
    std::printf("final train accuracy %.4f, loss %.6f\n", r.final_acc, r.log.back().loss);
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int cmd_eval(const Options& opt) {
    Network net = load_checkpoint(opt.checkpoint_path);
    RunConfig rc = load_run_config(opt.config_path);
    if (!rc.has_train) throw ConfigError(opt.config_path + ": missing train.data section");
    Dataset ds = load_dataset(rc.train.data);
    const double acc = evaluate_accuracy(net, ds);
    std::printf("samples %zu  accuracy %.4f\n", ds.size(), acc);
    return 0;
}

int cmd_compile(const Options& opt) {
    Network net = load_checkpoint(opt.checkpoint_path);
    if (!net.fully_sparsified()) {
        std::fprintf(stderr, "error: checkpoint is not fully sparsified; "
                             "finish the staged training first\n");
        return 1;
    }
    InferencePlan plan = compile_network(net, opt.fold_bn);
    save_plan(plan, opt.out_path);
    std::printf("plan written to %s (BN %s)\n", opt.out_path.c_str(),
                opt.fold_bn ? "folded" : "retained");
    return 0;
}

int cmd_verify(const Options& opt) {
    Network net = load_checkpoint(opt.checkpoint_path);
    if (!net.fully_sparsified()) {
        std::fprintf(stderr, "error: checkpoint is not fully sparsified\n");
        return 1;
    }
    InferencePlan plan = compile_network(net, opt.fold_bn);
    const unsigned seed = opt.seed >= 0 ? static_cast<unsigned>(opt.seed) : 1;
    const double diff = verify_equivalence(net, plan, opt.rounds, seed);
    const double tol = opt.fold_bn ? 1e-3 : 1e-4;
    std::printf("max |logit diff| over %d random batches: %.3g (tolerance %g)\n",
                opt.rounds, diff, tol);
    if (diff >= tol) {
        std::fprintf(stderr, "error: compiled plan deviates from the training form\n");
        return 1;
    }
    return 0;
}

int cmd_flops(const Options& opt) {
    RunConfig rc = load_run_config(opt.config_path);
    Network dense(rc.model);
    const CostBreakdown dense_cost = count_cost(dense);
    Network deploy(rc.model);
    deploy.sparsify_fully();
    const CostBreakdown cost = count_cost(deploy);

    double ref_flops = -1.0, ref_params = -1.0;
    if (!opt.reference_path.empty() && std::filesystem::exists(opt.reference_path)) {
        json ref = load_json_file(opt.reference_path);
        if (ref.contains("models") && ref["models"].contains(rc.model.name)) {
            ref_flops = ref["models"][rc.model.name].value("flops", -1.0);
            ref_params = ref["models"][rc.model.name].value("params", -1.0);
        }
    }

    std::printf("%-22s %12s %12s\n", "", "FLOPs(M)", "params(M)");
    std::printf("%-22s %12.2f %12.3f\n", "dense (as built)", dense_cost.total_flops() / 1e6,
                dense_cost.total_params() / 1e6);
    std::printf("%-22s %12.2f %12.3f\n", "deploy (sparsified)", cost.total_flops() / 1e6,
                cost.total_params() / 1e6);
    if (ref_flops > 0) {
        std::printf("%-22s %12.2f %12.3f\n", "reference", ref_flops / 1e6, ref_params / 1e6);
        std::printf("%-22s %+11.1f%% %+11.1f%%\n", "deviation",
                    (cost.total_flops() / ref_flops - 1.0) * 100.0,
                    (cost.total_params() / ref_params - 1.0) * 100.0);
    }
    if (!opt.out_path.empty()) {
        std::ofstream f(opt.out_path);
        if (!f) throw std::runtime_error("cannot write " + opt.out_path);
        f << "form,flops,params\n";
        f << "dense," << dense_cost.total_flops() << "," << dense_cost.total_params() << "\n";
        f << "deploy," << cost.total_flops() << "," << cost.total_params() << "\n";
        if (ref_flops > 0)
            f << "reference," << static_cast<long long>(ref_flops) << ","
              << static_cast<long long>(ref_params) << "\n";
    }
    return 0;
}

int cmd_connectivity(const Options& opt) {
    if (opt.checkpoint_path.empty() && opt.config_path.empty())
        throw ConfigError("connectivity: need --checkpoint or --config");
    Network net = opt.checkpoint_path.empty()
                      ? build_network(load_run_config(opt.config_path).model,
                                      opt.seed >= 0 ? static_cast<unsigned>(opt.seed) : 1)
                      : load_checkpoint(opt.checkpoint_path);
    const Granularity g =
        opt.granularity == "per_layer" ? Granularity::per_layer : Granularity::per_group;
    const Aggregation a = opt.aggregation == "sum" ? Aggregation::sum : Aggregation::mean;
    ConnectivityMatrix m = connectivity(net, g, a);
    export_heatmap(m, opt.out_path);
    std::printf("%dx%d connectivity matrix (%s, %s) -> %s.{csv,pgm}\n", m.rows, m.cols,
                opt.granularity.c_str(), opt.aggregation.c_str(), opt.out_path.c_str());
    return 0;
}

int cmd_sweep(const Options& opt) {
    RunConfig rc = load_run_config(opt.config_path);
    if (opt.do_train && !rc.has_train)
        throw ConfigError(opt.config_path + ": missing train section for --train sweep");
    if (opt.seed >= 0) rc.train.seed = static_cast<unsigned>(opt.seed);
    if (opt.values.empty()) throw ConfigError("sweep: --values is empty");
    const char axis = opt.axis == "G" ? 'G' : 'S';
    auto rows = ablation_sweep(rc.model, rc.train, axis, opt.values, opt.do_train);
    std::printf("%c %14s %14s %10s\n", axis, "FLOPs", "params", "final acc");
    for (const auto& r : rows) {
        if (r.final_acc >= 0)
            std::printf("%d %14lld %14lld %10.4f\n", r.value,
                        static_cast<long long>(r.flops), static_cast<long long>(r.params),
                        r.final_acc);
        else
            std::printf("%d %14lld %14lld %10s\n", r.value,
                        static_cast<long long>(r.flops), static_cast<long long>(r.params),
                        "-");
    }
    if (!opt.out_path.empty()) write_sweep_csv(rows, axis, opt.out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CondenseNetV2: sparse feature reactivation networks"};
    app.require_subcommand(1);
    Options opt;
    opt.reference_path = default_reference_path(argv[0]);

    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", opt.config_path, "run config")->required();
    train_cmd->add_option("--out", opt.out_path, "output directory")->required();
    train_cmd->add_option("--seed", opt.seed, "override the training seed");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--config", opt.config_path, "config with a train.data section")
        ->required();

    auto* compile_cmd =
        app.add_subcommand("compile", "convert a trained checkpoint to an inference plan");
    compile_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
        ->required();
    compile_cmd->add_option("--out", opt.out_path, "plan file to write")->required();
    compile_cmd->add_flag("--fold-bn", opt.fold_bn, "fold BN into the convolutions");

    auto* verify_cmd = app.add_subcommand(
        "verify-equivalence", "check a compiled plan against the training form");
    verify_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
        ->required();
    verify_cmd->add_option("--rounds", opt.rounds, "random input batches to compare");
    verify_cmd->add_option("--seed", opt.seed, "input seed");
    verify_cmd->add_flag("--fold-bn", opt.fold_bn, "verify the BN-folded plan");

    auto* flops_cmd =
        app.add_subcommand("flops", "report multiply-adds and parameters for a config");
    flops_cmd->add_option("--config", opt.config_path, "run config")->required();
    flops_cmd->add_option("--out", opt.out_path, "also write a CSV");
    flops_cmd->add_option("--reference", opt.reference_path, "reference figures JSON");

    auto* conn_cmd =
        app.add_subcommand("connectivity", "export the connection-strength heatmap");
    conn_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file");
    conn_cmd->add_option("--config", opt.config_path, "config (fresh build) if no checkpoint");
    conn_cmd->add_option("--out", opt.out_path, "output base path")->required();
    conn_cmd->add_option("--granularity", opt.granularity, "per_group|per_layer")
        ->check(CLI::IsMember({"per_group", "per_layer"}));
    conn_cmd->add_option("--agg", opt.aggregation, "mean|sum")
        ->check(CLI::IsMember({"mean", "sum"}));
    conn_cmd->add_option("--seed", opt.seed, "init seed for fresh builds");

    auto* sweep_cmd = app.add_subcommand("sweep", "ablation sweep over S or G");
    sweep_cmd->add_option("--config", opt.config_path, "run config")->required();
    sweep_cmd->add_option("--axis", opt.axis, "S|G")->check(CLI::IsMember({"S", "G"}));
    sweep_cmd->add_option("--values", opt.values, "axis values")->required();
    sweep_cmd->add_option("--out", opt.out_path, "CSV to write");
    sweep_cmd->add_flag("--train", opt.do_train, "train the toy preset per value");
    sweep_cmd->add_option("--seed", opt.seed, "override the training seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exit 0 with help text
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(opt);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(opt);
        if (app.got_subcommand(compile_cmd)) return cmd_compile(opt);
        if (app.got_subcommand(verify_cmd)) return cmd_verify(opt);
        if (app.got_subcommand(flops_cmd)) return cmd_flops(opt);
        if (app.got_subcommand(conn_cmd)) return cmd_connectivity(opt);
        if (app.got_subcommand(sweep_cmd)) return cmd_sweep(opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
