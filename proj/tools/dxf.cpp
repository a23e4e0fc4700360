// dxf: temporal action segmentation pipeline driver.
// Subcommands: synth, train, predict, eval, metrics, gradcheck.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

#include "dxf/cli_config.hpp"
#include "dxf/data_io.hpp"
#include "dxf/gradsuite.hpp"
#include "dxf/metrics.hpp"
#include "dxf/training.hpp"

namespace fs = std::filesystem;
using namespace dxf;

namespace {

const std::set<std::string> kSynthKeys = {"config",     "out_dir",      "num_videos",   "num_classes",
                                          "t_min",      "t_max",        "mean_segment", "sigma_signal",
                                          "sigma_noise", "dim",          "seed"};
const std::set<std::string> kTrainKeys = {
    "config",        "preset",       "features_dir",   "labels_dir",      "mapping",
    "split",         "output_dir",   "resume",         "input_dim",       "model_dim",
    "num_classes",   "blocks_per_stage", "num_decoders", "cross_qv_mode", "use_cross_connections",
    "seed",          "learning_rate", "batch_size",     "epochs",          "lambda_smooth",
    "tau_clip",      "checkpoint_every", "workers"};
const std::set<std::string> kPredictKeys = {"config", "checkpoint", "features_dir", "mapping",
                                            "split",  "output_dir", "workers"};
const std::set<std::string> kEvalKeys = {"config", "checkpoint", "features_dir", "labels_dir",
                                         "mapping", "split", "workers"};
const std::set<std::string> kMetricsKeys = {"config", "pred_dir", "gt_dir", "mapping", "split"};
const std::set<std::string> kGradcheckKeys = {"config", "seeds"};

void print_help(const std::string& cmd) {
    auto keys = [](const std::set<std::string>& s) {
        std::string out;
        for (const auto& k : s) out += "  " + k + "=<value>\n";
        return out;
    };
    if (cmd == "synth")
        std::cout << "dxf synth: generate a seeded synthetic dataset (features, labels, mapping, 4 fold manifests)\n"
                  << keys(kSynthKeys);
    else if (cmd == "train")
        std::cout << "dxf train: train a model, writing a checkpoint and per-epoch key=value log lines\n"
                  << "  preset=small|large (small: N=9 lr=0.0005 batch=1; large: N=7 lr=0.001 batch=8)\n"
                  << keys(kTrainKeys);
    else if (cmd == "predict")
        std::cout << "dxf predict: write per-video predicted label files into output_dir\n" << keys(kPredictKeys);
    else if (cmd == "eval")
        std::cout << "dxf eval: run a checkpoint over a split and print the metrics report\n" << keys(kEvalKeys);
    else if (cmd == "metrics")
        std::cout << "dxf metrics: model-free scoring of a prediction dir against a ground-truth dir\n"
                  << keys(kMetricsKeys);
    else if (cmd == "gradcheck")
        std::cout << "dxf gradcheck: run the 64-bit finite-difference suite, one line per component\n"
                  << keys(kGradcheckKeys);
    else
        std::cout << "usage: dxf {synth|train|predict|eval|metrics|gradcheck} [key=value ...]\n"
                  << "       dxf <subcommand> --help\n";
}

cli::KeyValues gather(const std::vector<std::string>& args, const std::set<std::string>& schema,
                      const std::string& cmd) {
    cli::KeyValues kv = cli::parse_args(args);
    if (kv.has("config")) cli::merge_defaults(kv, cli::parse_config_file(kv.kv.at("config")));
    cli::check_schema(kv, schema, cmd);
    return kv;
}

int cmd_synth(const std::vector<std::string>& args) {
    auto kv = gather(args, kSynthKeys, "synth");
    io::SynthSpec spec;
    spec.num_videos = static_cast<int>(kv.get_int("num_videos", spec.num_videos));
    spec.num_classes = static_cast<int>(kv.get_int("num_classes", spec.num_classes));
    spec.t_min = static_cast<int>(kv.get_int("t_min", spec.t_min));
    spec.t_max = static_cast<int>(kv.get_int("t_max", spec.t_max));
    spec.mean_segment = kv.get_double("mean_segment", spec.mean_segment);
    spec.sigma_signal = kv.get_double("sigma_signal", spec.sigma_signal);
    spec.sigma_noise = kv.get_double("sigma_noise", spec.sigma_noise);
    spec.dim = static_cast<int>(kv.get_int("dim", spec.dim));
    spec.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    io::synth_generate(spec, kv.require("out_dir"));
    std::cout << "dataset=" << kv.require("out_dir") << " videos=" << spec.num_videos
              << " classes=" << spec.num_classes << "\n";
    return 0;
}

void apply_preset(const cli::KeyValues& kv, ModelConfig& mcfg, TrainConfig& tcfg) {
    std::string preset = kv.get("preset", "small");
    if (preset == "small") {
        mcfg.blocks_per_stage = 9;
        tcfg.learning_rate = 0.0005;
        tcfg.batch_size = 1;
    } else if (preset == "large") {
        mcfg.blocks_per_stage = 7;
        tcfg.learning_rate = 0.001;
        tcfg.batch_size = 8;
    } else {
        throw ConfigError("preset must be 'small' or 'large', got '" + preset + "'");
    }
}

ModelConfig model_config_from(const cli::KeyValues& kv, int data_dim, int mapping_classes,
                              const ModelConfig& base) {
    ModelConfig m = base;
    m.input_dim = static_cast<int>(kv.get_int("input_dim", data_dim));
    m.model_dim = static_cast<int>(kv.get_int("model_dim", 64));
    m.num_classes = static_cast<int>(kv.get_int("num_classes", mapping_classes));
    m.blocks_per_stage = static_cast<int>(kv.get_int("blocks_per_stage", m.blocks_per_stage));
    m.num_decoders = static_cast<int>(kv.get_int("num_decoders", 3));
    m.cross_qv_mode = kv.get_bool("cross_qv_mode", false);
    m.use_cross_connections = kv.get_bool("use_cross_connections", true);
    m.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    m.validate();
    return m;
}

TrainConfig train_config_from(const cli::KeyValues& kv, const TrainConfig& base) {
    TrainConfig t = base;
    t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
    t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
    t.epochs = static_cast<int>(kv.get_int("epochs", 50));
    t.lambda_smooth = kv.get_double("lambda_smooth", 0.15);
    t.tau_clip = kv.get_double("tau_clip", 4.0);
    t.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    t.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", 0));
    t.workers = static_cast<int>(kv.get_int("workers", 1));
    t.validate();
    return t;
}

int cmd_train(const std::vector<std::string>& args) {
    auto kv = gather(args, kTrainKeys, "train");
    auto mapping = io::read_mapping(kv.require("mapping"));
    auto ids = io::read_split(kv.require("split"));
    auto dataset = io::load_dataset(kv.require("features_dir"), kv.require("labels_dir"), mapping, ids);
    if (dataset.empty()) throw DataError("empty dataset: split lists no videos");

    ModelConfig mcfg;
    TrainConfig tcfg;
    apply_preset(kv, mcfg, tcfg);
    mcfg = model_config_from(kv, dataset.front().features.shape[0], mapping.size(), mcfg);
    tcfg = train_config_from(kv, tcfg);

    const std::string out_dir = kv.require("output_dir");
    fs::create_directories(out_dir);
    const std::string ck_path = (fs::path(out_dir) / "checkpoint.dxck").string();

    io::Checkpoint resume;
    bool resuming = kv.has("resume");
    if (resuming) resume = io::load_checkpoint(kv.kv.at("resume"));

    train(dataset, mcfg, tcfg, ck_path, &std::cout, resuming ? &resume : nullptr);
    std::cout << "checkpoint=" << ck_path << "\n";
    return 0;
}

int cmd_predict(const std::vector<std::string>& args) {
    auto kv = gather(args, kPredictKeys, "predict");
    kernels::set_num_threads(static_cast<int>(kv.get_int("workers", 1)));
    auto ck = io::load_checkpoint(kv.require("checkpoint"));
    auto mapping = io::read_mapping(kv.require("mapping"));
    if (mapping.size() != ck.cfg.num_classes)
        throw ConfigError("mapping has " + std::to_string(mapping.size()) + " classes, checkpoint expects " +
                          std::to_string(ck.cfg.num_classes));
    auto ids = io::read_split(kv.require("split"));
    const std::string out_dir = kv.require("output_dir");
    fs::create_directories(out_dir);
    for (const auto& id : ids) {
        auto feats = io::read_feature_file((fs::path(kv.require("features_dir")) / (id + ".dxft")).string());
        auto pred = predict_labels(ck, feats);
        io::write_labels((fs::path(out_dir) / (id + ".txt")).string(), pred, mapping);
    }
    std::cout << "predicted=" << ids.size() << " output_dir=" << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
    auto kv = gather(args, kEvalKeys, "eval");
    kernels::set_num_threads(static_cast<int>(kv.get_int("workers", 1)));
    auto ck = io::load_checkpoint(kv.require("checkpoint"));
    auto mapping = io::read_mapping(kv.require("mapping"));
    if (mapping.size() != ck.cfg.num_classes)
        throw ConfigError("mapping has " + std::to_string(mapping.size()) + " classes, checkpoint expects " +
                          std::to_string(ck.cfg.num_classes));
    auto ids = io::read_split(kv.require("split"));
    auto dataset = io::load_dataset(kv.require("features_dir"), kv.require("labels_dir"), mapping, ids);
    auto report = evaluate(dataset, ck);
    std::cout << metrics::format_report(report);
    return 0;
}

int cmd_metrics(const std::vector<std::string>& args) {
    auto kv = gather(args, kMetricsKeys, "metrics");
    auto mapping = io::read_mapping(kv.require("mapping"));
    std::vector<std::string> ids;
    if (kv.has("split")) {
        ids = io::read_split(kv.kv.at("split"));
    } else {
        for (const auto& e : fs::directory_iterator(kv.require("gt_dir")))
            if (e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
        std::sort(ids.begin(), ids.end());
    }
    if (ids.empty()) throw DataError("metrics: no ground-truth label files found");
    std::vector<std::vector<int>> preds, gts;
    for (const auto& id : ids) {
        gts.push_back(io::read_labels((fs::path(kv.require("gt_dir")) / (id + ".txt")).string(), mapping));
        preds.push_back(io::read_labels((fs::path(kv.require("pred_dir")) / (id + ".txt")).string(), mapping));
        if (preds.back().size() != gts.back().size())
            throw DataError("metrics: " + id + " has " + std::to_string(preds.back().size()) +
                            " predicted frames vs " + std::to_string(gts.back().size()) + " ground-truth frames");
    }
    std::cout << metrics::format_report(metrics::compute_report(preds, gts));
    return 0;
}

int cmd_gradcheck(const std::vector<std::string>& args) {
    auto kv = gather(args, kGradcheckKeys, "gradcheck");
    int seeds = static_cast<int>(kv.get_int("seeds", 20));
    bool ok = true;
    for (const auto& e : run_grad_suite(seeds)) {
        bool pass = e.max_rel_err <= e.tolerance;
        ok = ok && pass;
        std::printf("component=%s max_rel_err=%.3e tol=%.0e status=%s\n", e.name.c_str(), e.max_rel_err,
                    e.tolerance, pass ? "ok" : "fail");
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        print_help("");
        return 1;
    }
    std::string cmd = argv[1];
    std::vector<std::string> args;
    for (int i = 2; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--help" || a == "help") {
            print_help(cmd);
            return 0;
        }
        args.push_back(a);
    }
    if (cmd == "--help" || cmd == "help") {
        print_help("");
        return 0;
    }
    try {
        if (cmd == "synth") return cmd_synth(args);
        if (cmd == "train") return cmd_train(args);
        if (cmd == "predict") return cmd_predict(args);
        if (cmd == "eval") return cmd_eval(args);
        if (cmd == "metrics") return cmd_metrics(args);
        if (cmd == "gradcheck") return cmd_gradcheck(args);
        std::cerr << "error: unknown subcommand '" << cmd << "'\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
