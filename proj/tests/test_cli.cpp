// Subcommand integration: exit codes, dataset reproducibility, config
// overrides, train/eval cross-checks, profile consistency.

#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <fstream>

#include "hsacnet/eval.hpp"
#include "testutil.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = 0;
    std::string stdout_text;
};

CmdResult run_cli(const std::string& args, const std::string& workdir) {
    const std::string out_file = workdir + "/.cmd_out";
    const std::string cmd = "cd " + workdir + " && " + HSACNET_CLI_PATH + " " + args + " > " + out_file + " 2>.cmd_err";
    const int rc = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WEXITSTATUS(rc);
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    r.stdout_text = ss.str();
    return r;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

std::string tiny_run_config(const std::string& data_root, const std::string& out, int epochs = 2) {
    json j{{"ablation", {{"encoder_variant", "tiny"}, {"init", "random"}}},
           {"train", {{"epochs", epochs}, {"batch_size", 2}, {"val_interval", 1}, {"seed", 5}}},
           {"data", {{"root", data_root}, {"labeled_ratio", 0.5}}},
           {"out", out}};
    return j.dump(2);
}

// directory fingerprint: file names and bytes, order-independent
uint64_t dir_hash(const std::string& root) {
    std::vector<std::string> files;
    for (auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    uint64_t h = 1469598103934665603ull;
    for (const auto& f : files) {
        std::ifstream is(f, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        for (char c : fs::path(f).filename().string() + ss.str()) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace

TEST_CASE("make-synthetic: valid spec, reproducibility, bad fields") {
    testutil::TempDir tmp("cli_synth");
    write_file(tmp.str("spec.json"), R"({"num_pairs": 10, "patch": 32, "seed": 4})");

    SECTION("default run validates and reports the split") {
        auto r = run_cli("make-synthetic --spec spec.json --out data", tmp.str());
        REQUIRE(r.exit_code == 0);
        CHECK(r.stdout_text.find("10 pairs") != std::string::npos);
        auto split = hsacnet::load_manifest_split(tmp.str("data/manifest.json"), "train");
        CHECK(hsacnet::validate_manifest(split, tmp.str("data")).empty());
    }
    SECTION("same seed gives a byte-identical dataset") {
        REQUIRE(run_cli("make-synthetic --spec spec.json --out d1", tmp.str()).exit_code == 0);
        REQUIRE(run_cli("make-synthetic --spec spec.json --out d2", tmp.str()).exit_code == 0);
        CHECK(dir_hash(tmp.str("d1")) == dir_hash(tmp.str("d2")));
        REQUIRE(run_cli("make-synthetic --spec spec.json --seed 99 --out d3", tmp.str()).exit_code == 0);
        CHECK(dir_hash(tmp.str("d1")) != dir_hash(tmp.str("d3")));
    }
    SECTION("invalid spec field names the problem and exits 1") {
        write_file(tmp.str("bad.json"), R"({"num_pairs": 10, "patch": 33})");
        auto r = run_cli("make-synthetic --spec bad.json --out data", tmp.str());
        CHECK(r.exit_code == 1);
    }
}

TEST_CASE("train/eval/profile workflow") {
    testutil::TempDir tmp("cli_train");
    write_file(tmp.str("spec.json"),
               R"({"num_pairs": 12, "patch": 32, "seed": 6, "train_frac": 0.667, "val_frac": 0.166})");
    REQUIRE(run_cli("make-synthetic --spec spec.json --out data", tmp.str()).exit_code == 0);
    write_file(tmp.str("run.json"), tiny_run_config("data", "runs/a"));

    SECTION("training writes resolved config, reports and checkpoints") {
        auto r = run_cli("train --config run.json", tmp.str());
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(tmp.str("runs/a/config.resolved.json")));
        CHECK(fs::exists(tmp.str("runs/a/report.json")));
        CHECK(fs::exists(tmp.str("runs/a/best.ckpt")));
        CHECK(fs::exists(tmp.str("runs/a/steps.jsonl")));
        json summary = json::parse(r.stdout_text);
        CHECK(summary.contains("test_iou"));

        json report;
        std::ifstream(tmp.str("runs/a/report.json")) >> report;
        REQUIRE(report["epochs"].size() == 2);
        CHECK(report.contains("test_iou"));

        // eval with the frozen config + last checkpoint reproduces the final
        // val metrics exactly
        auto ev = run_cli(
            "eval --config runs/a/config.resolved.json --checkpoint runs/a/last.ckpt --data data --split val "
            "--out ev",
            tmp.str());
        REQUIRE(ev.exit_code == 0);
        json em = json::parse(ev.stdout_text);
        CHECK(em["iou_c"].get<double>() == report["final_val_iou"].get<double>());
    }
    SECTION("sup-only override reports zero unsupervised loss") {
        auto r = run_cli("train --config run.json --sup-only --out runs/sup", tmp.str());
        REQUIRE(r.exit_code == 0);
        json report;
        std::ifstream(tmp.str("runs/sup/report.json")) >> report;
        for (const auto& e : report["epochs"]) CHECK(e["l_u"].get<double>() == 0.0);
    }
    SECTION("tau 1.0 silences pseudo positives") {
        auto r = run_cli("train --config run.json --tau 1.0 --out runs/tau1", tmp.str());
        REQUIRE(r.exit_code == 0);
        json report;
        std::ifstream(tmp.str("runs/tau1/report.json")) >> report;
        for (const auto& e : report["epochs"]) CHECK(e["pseudo_positive_fraction"].get<double>() == 0.0);
    }
    SECTION("tau sweep emits one report per value") {
        for (const char* tau : {"0.75", "0.85", "0.95"}) {
            auto r = run_cli(std::string("train --config run.json --tau ") + tau + " --out runs/t" + tau, tmp.str());
            REQUIRE(r.exit_code == 0);
            CHECK(fs::exists(tmp.str(std::string("runs/t") + tau + "/report.json")));
        }
    }
    SECTION("export-maps writes one color map per tile") {
        REQUIRE(run_cli("train --config run.json --out runs/m", tmp.str()).exit_code == 0);
        auto r = run_cli(
            "eval --config runs/m/config.resolved.json --checkpoint runs/m/best.ckpt --data data --split test "
            "--export-maps --out evm",
            tmp.str());
        REQUIRE(r.exit_code == 0);
        size_t maps = 0;
        for (auto& e : fs::directory_iterator(tmp.str("evm/maps"))) maps += e.is_regular_file() ? 1 : 0;
        CHECK(maps == 2);  // test split of the 12-pair fixture
    }
    SECTION("missing checkpoint exits nonzero") {
        auto r = run_cli("eval --config run.json --checkpoint nope.ckpt --data data --split val", tmp.str());
        CHECK(r.exit_code == 1);
    }
    SECTION("config validation failures exit 1 before compute") {
        write_file(tmp.str("bad.json"), R"({"train": {"tau": 1.5}, "data": {"root": "data"}})");
        auto r = run_cli("train --config bad.json", tmp.str());
        CHECK(r.exit_code == 1);
    }
    SECTION("profile matches the library counters and orders presets") {
        auto r = run_cli("profile --config run.json --input-size 64", tmp.str());
        REQUIRE(r.exit_code == 0);
        json p = json::parse(r.stdout_text);
        hsacnet::RandomStream rng(5);
        hsacnet::nn::ChangeNet<float> net(hsacnet::ChangeNetConfig::tiny(), rng);
        auto rep = hsacnet::estimate_flops(net, 64);
        CHECK(p["total_params"].get<int64_t>() == rep.total_params);
        CHECK(p["headline_flops"].get<int64_t>() == rep.headline_flops());
        CHECK(p["params_by_module"].contains("sadam"));

        write_file(tmp.str("paper.json"), R"({"ablation": {"encoder_variant": "paper", "init": "pretrained"}})");
        auto rp = run_cli("profile --config paper.json", tmp.str());
        REQUIRE(rp.exit_code == 0);
        json pp = json::parse(rp.stdout_text);
        CHECK(pp["total_params"].get<int64_t>() > p["total_params"].get<int64_t>());
        CHECK(pp["frozen_params"].get<int64_t>() > 0);
    }
}

TEST_CASE("train determinism: same seed twice, identical step logs") {
    testutil::TempDir tmp("cli_det");
    write_file(tmp.str("spec.json"),
               R"({"num_pairs": 12, "patch": 32, "seed": 8, "train_frac": 0.667, "val_frac": 0.166})");
    REQUIRE(run_cli("make-synthetic --spec spec.json --out data", tmp.str()).exit_code == 0);
    write_file(tmp.str("run.json"), tiny_run_config("data", "runs/unused"));

    REQUIRE(run_cli("train --config run.json --seed 7 --out runs/r1", tmp.str()).exit_code == 0);
    REQUIRE(run_cli("train --config run.json --seed 7 --out runs/r2", tmp.str()).exit_code == 0);
    std::ifstream a(tmp.str("runs/r1/steps.jsonl")), b(tmp.str("runs/r2/steps.jsonl"));
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    REQUIRE(sa.str() == sb.str());
    CHECK_FALSE(sa.str().empty());
}
