// Command-line entry point: dataset preparation, training, evaluation and
// complexity profiling, all driven by one JSON run config.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>

#include "hsacnet/hsacnet.hpp"

using namespace hsacnet;

namespace {

struct TrainOverrides {
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    double labeled_ratio = -1;
    double tau = -1;
    bool sup_only = false;
    int64_t epochs = -1;
};

void require_file(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path)) throw std::invalid_argument(what + " not found: " + path);
}

template <class T>
std::unique_ptr<nn::ChangeNet<T>> build_network(const RunConfig& run, const ChangeNetConfig& netcfg,
                                                uint64_t seed) {
    RandomStream rng = RandomStream(seed).derive("init");
    auto net = std::make_unique<nn::ChangeNet<T>>(netcfg, rng);
    if (netcfg.encoder.init_mode == "pretrained-import" && !run.ablation.pretrained_checkpoint.empty()) {
        require_file(run.ablation.pretrained_checkpoint, "pretrained checkpoint");
        auto* pyramid = dynamic_cast<nn::PyramidEncoder<T>*>(&net->encoder());
        if (!pyramid) throw std::invalid_argument("pretrained import requires the attention encoder variant");
        auto report = import_pretrained(*pyramid, run.ablation.pretrained_checkpoint);
        std::cerr << "imported backbone: " << report.matched.size() << " matched, "
                  << report.shape_mismatched.size() << " shape-mismatched, " << report.missing.size()
                  << " missing\n";
    } else if (netcfg.encoder.init_mode == "pretrained-import") {
        std::cerr << "note: init_mode is pretrained-import but no checkpoint is configured; "
                     "backbone keeps its random initialization\n";
    }
    return net;
}

int cmd_make_synthetic(const std::string& spec_path, const std::string& out, uint64_t seed, bool seed_set) {
    SyntheticSpec spec;
    if (!spec_path.empty()) {
        require_file(spec_path, "synthetic spec");
        spec = load_synthetic_spec(spec_path);
    }
    if (seed_set) spec.seed = seed;
    spec.validate();
    auto splits = generate_synthetic(spec, out);
    int64_t total = 0;
    for (const auto& s : splits) {
        auto violations = validate_manifest(s, out);
        if (!violations.empty()) {
            for (const auto& v : violations) std::cerr << v.str() << "\n";
            throw std::runtime_error("generated dataset failed validation");
        }
        total += s.size();
    }
    std::cout << "wrote " << total << " pairs under " << out << " (train/val/test = " << splits[0].size() << "/"
              << splits[1].size() << "/" << splits[2].size() << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const TrainOverrides& ov) {
    require_file(config_path, "config");
    RunConfig run = load_run_config(config_path);
    if (ov.seed_set) {
        run.train.seed = ov.seed;
        run.data.partition_seed = ov.seed;
    }
    if (!ov.out.empty()) run.out = ov.out;
    if (ov.labeled_ratio > 0) run.data.labeled_ratio = ov.labeled_ratio;
    if (ov.tau > 0) run.train.tau = ov.tau;
    if (ov.sup_only) run.train.sup_only = true;
    if (ov.epochs > 0) run.train.epochs = ov.epochs;
    run.train.validate();
    run.augment.validate();
    if (run.data.root.empty()) throw std::invalid_argument("config: data.root is required for training");

    const auto netcfg = run.resolve_network();
    std::filesystem::create_directories(run.out);
    save_resolved_config((std::filesystem::path(run.out) / "config.resolved.json").string(), run, netcfg);

    const std::string manifest_path = (std::filesystem::path(run.data.root) / run.data.manifest).string();
    require_file(manifest_path, "manifest");
    auto train_split = load_manifest_split(manifest_path, run.data.train_split);
    auto val_split = load_manifest_split(manifest_path, run.data.val_split);
    auto test_split = load_manifest_split(manifest_path, run.data.test_split);
    for (const auto* split : {&train_split, &val_split, &test_split}) {
        auto violations = validate_manifest(*split, run.data.root);
        if (!violations.empty()) {
            for (const auto& v : violations) std::cerr << v.str() << "\n";
            throw std::invalid_argument("manifest validation failed for split " + split->split_name);
        }
    }
    auto [labeled, unlabeled] = partition(train_split, {run.data.labeled_ratio, run.data.partition_seed});
    std::cerr << "train: " << labeled.labeled.size() << " labeled + " << unlabeled.unlabeled.size()
              << " unlabeled pairs, val " << val_split.labeled.size() << ", test " << test_split.labeled.size()
              << "\n";

    auto net = build_network<float>(run, netcfg, run.train.seed);
    auto report = fit(*net, labeled, unlabeled, val_split, run.data.root, run.train, run.augment, run.out);

    // test metrics from the best-validation checkpoint
    load_network_checkpoint(*net, report.best_checkpoint);
    auto test_report = evaluate(*net, test_split, run.data.root);
    {
        std::ifstream is((std::filesystem::path(run.out) / "report.json").string());
        json j;
        is >> j;
        is.close();
        j["test_iou"] = test_report.iou;
        j["test_oa"] = test_report.oa_v;
        std::ofstream os((std::filesystem::path(run.out) / "report.json").string());
        os << j.dump(2) << "\n";
    }
    std::cout << json{{"best_val_iou", report.best_val_iou},
                      {"test_iou", test_report.iou},
                      {"test_oa", test_report.oa_v},
                      {"out", run.out}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& root,
             const std::string& split_name, bool export_maps, const std::string& out) {
    require_file(config_path, "config");
    require_file(ckpt, "checkpoint");
    RunConfig run = load_run_config(config_path);
    if (!root.empty()) run.data.root = root;
    if (run.data.root.empty()) throw std::invalid_argument("a dataset root is required (--data or config)");
    const auto netcfg = run.resolve_network();

    const std::string manifest_path = (std::filesystem::path(run.data.root) / run.data.manifest).string();
    require_file(manifest_path, "manifest");
    auto split = load_manifest_split(manifest_path, split_name);

    RandomStream rng = RandomStream(run.train.seed).derive("init");
    nn::ChangeNet<float> net(netcfg, rng);
    auto report = load_network_checkpoint(net, ckpt);
    if (!report.missing.empty() || !report.shape_mismatched.empty())
        throw std::runtime_error("checkpoint does not match the configured network (" +
                                 std::to_string(report.missing.size()) + " missing, " +
                                 std::to_string(report.shape_mismatched.size()) + " mismatched tensors)");

    const std::string out_dir = out.empty() ? "eval_out" : out;
    std::filesystem::create_directories(out_dir);
    auto ev = evaluate(net, split, run.data.root, export_maps ? (out_dir + "/maps") : "");

    json j{{"split", split_name},
           {"iou_c", ev.iou},
           {"oa", ev.oa_v},
           {"tiles", json::array()},
           {"counts",
            {{"tp", ev.aggregate.tp}, {"tn", ev.aggregate.tn}, {"fp", ev.aggregate.fp}, {"fn", ev.aggregate.fn}}}};
    for (const auto& t : ev.tiles)
        j["tiles"].push_back(json{{"id", t.id}, {"iou_c", t.iou}, {"oa", t.oa_v}});
    std::ofstream os((std::filesystem::path(out_dir) / "metrics.json").string());
    os << j.dump(2) << "\n";
    std::cout << json{{"split", split_name}, {"iou_c", ev.iou}, {"oa", ev.oa_v}}.dump() << "\n";
    return 0;
}

int cmd_profile(const std::string& config_path, int64_t input_size, const std::string& out) {
    require_file(config_path, "config");
    RunConfig run = load_run_config(config_path);
    const auto netcfg = run.resolve_network();
    RandomStream rng = RandomStream(run.train.seed).derive("init");
    nn::ChangeNet<float> net(netcfg, rng);
    auto rep = estimate_flops(net, input_size);

    json j{{"input_size", input_size},
           {"total_params", rep.total_params},
           {"trainable_params", rep.trainable_params},
           {"frozen_params", rep.frozen_params},
           {"params_by_module", rep.params_by_module},
           {"headline_flops", rep.headline_flops()},
           {"headline_gflops", static_cast<double>(rep.headline_flops()) / 1e9},
           {"macs", {{"conv", rep.flops.conv_macs}, {"linear", rep.flops.linear_macs}, {"matmul", rep.flops.matmul_macs}}},
           {"excluded_elems",
            {{"norm", rep.flops.norm_elems}, {"act", rep.flops.act_elems}, {"resample", rep.flops.resample_elems}}},
           {"convention", "FLOPs = 2*MACs over conv/linear/attention matmuls; norms, activations and resampling itemized separately"}};
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        std::ofstream os((std::filesystem::path(out) / "profile.json").string());
        os << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hsacnet: semi-supervised change detection toolkit"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, ckpt, data_root, split_name = "test";
    uint64_t seed = 0;
    bool export_maps = false;
    TrainOverrides ov;
    int64_t input_size = 256;

    auto* synth = app.add_subcommand("make-synthetic", "generate a synthetic bi-temporal dataset");
    synth->add_option("--spec", spec_path, "synthetic spec JSON (defaults apply when omitted)");
    synth->add_option("--out", out_dir, "output dataset root")->required();
    auto* synth_seed = synth->add_option("--seed", seed, "override the generator seed");

    auto* train = app.add_subcommand("train", "train a change detector");
    train->add_option("--config", config_path, "run config JSON")->required();
    auto* train_seed = train->add_option("--seed", ov.seed, "override train and partition seeds");
    train->add_option("--out", ov.out, "override the output directory");
    train->add_option("--labeled-ratio", ov.labeled_ratio, "override the labeled fraction");
    train->add_option("--tau", ov.tau, "override the pseudo-label confidence threshold");
    train->add_flag("--sup-only", ov.sup_only, "train on labeled data only");
    train->add_option("--epochs", ov.epochs, "override the epoch count");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval_cmd->add_option("--config", config_path, "run config JSON (resolved config of the run)")->required();
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
    eval_cmd->add_option("--data", data_root, "dataset root (defaults to config)");
    eval_cmd->add_option("--split", split_name, "manifest split name");
    eval_cmd->add_flag("--export-maps", export_maps, "write color-coded agreement maps");
    eval_cmd->add_option("--out", out_dir, "output directory for metrics/maps");

    auto* profile = app.add_subcommand("profile", "static parameter and flops report");
    profile->add_option("--config", config_path, "run config JSON")->required();
    profile->add_option("--input-size", input_size, "square input edge (multiple of 32)");
    profile->add_option("--out", out_dir, "directory for profile.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            ov.seed_set = !synth_seed->empty();
            return cmd_make_synthetic(spec_path, out_dir, seed, ov.seed_set);
        }
        if (train->parsed()) {
            ov.seed_set = !train_seed->empty();
            return cmd_train(config_path, ov);
        }
        if (eval_cmd->parsed()) return cmd_eval(config_path, ckpt, data_root, split_name, export_maps, out_dir);
        if (profile->parsed()) return cmd_profile(config_path, input_size, out_dir);
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
