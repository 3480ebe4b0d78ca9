// Metrics against a pixel-loop oracle, parameter ledger, flops formulas,
// color-coded map export.

#include <catch2/catch_amalgamated.hpp>

#include "hsacnet/eval.hpp"
#include "testutil.hpp"

using namespace hsacnet;

namespace {

Tensor<uint8_t> random_mask(int64_t h, int64_t w, uint64_t seed, double p = 0.5) {
    RandomStream rng(seed);
    Tensor<uint8_t> m({h, w});
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = rng.bernoulli(p) ? 1 : 0;
    return m;
}

// Independent loop oracle.
ConfusionCounts loop_confusion(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& truth) {
    ConfusionCounts c;
    for (int64_t y = 0; y < pred.shape[0]; ++y)
        for (int64_t x = 0; x < pred.shape[1]; ++x) {
            const bool p = pred[y * pred.shape[1] + x] != 0;
            const bool t = truth[y * pred.shape[1] + x] != 0;
            if (p && t) ++c.tp;
            if (p && !t) ++c.fp;
            if (!p && t) ++c.fn;
            if (!p && !t) ++c.tn;
        }
    return c;
}

}  // namespace

TEST_CASE("confusion: trivial cases") {
    Tensor<uint8_t> ones({4, 4}, 1), zeros({4, 4}, 0);
    auto c = confusion(ones, ones);
    CHECK(c.tp == 16);
    CHECK(c.tn + c.fp + c.fn == 0);
    auto inv = confusion(ones, zeros);
    CHECK(inv.tp == 0);
    CHECK(inv.tn == 0);
    CHECK(inv.fp == 16);
    CHECK_THROWS_AS(confusion(ones, Tensor<uint8_t>({3, 3})), std::invalid_argument);
    Tensor<uint8_t> bad({4, 4}, 2);
    CHECK_THROWS_AS(confusion(bad, zeros), std::invalid_argument);
}

TEST_CASE("confusion matches the loop oracle on random masks") {
    for (uint64_t s = 0; s < 10; ++s) {
        auto pred = random_mask(16, 16, 100 + s);
        auto truth = random_mask(16, 16, 200 + s, 0.3);
        auto a = confusion(pred, truth);
        auto b = loop_confusion(pred, truth);
        REQUIRE(a.tp == b.tp);
        REQUIRE(a.tn == b.tn);
        REQUIRE(a.fp == b.fp);
        REQUIRE(a.fn == b.fn);
    }
}

TEST_CASE("iou and oa formulas") {
    CHECK(iou_c({3, 0, 1, 0}) == Catch::Approx(0.75));
    ConfusionCounts c{1, 96, 1, 2};
    CHECK(iou_c(c) == Catch::Approx(0.25));
    CHECK(oa(c) == Catch::Approx(0.97));
    // empty prediction against empty truth counts as agreement
    CHECK(iou_c({0, 50, 0, 0}) == 1.0);
    // identical masks are perfect
    auto m = random_mask(8, 8, 5);
    auto cc = confusion(m, m);
    CHECK(iou_c(cc) == 1.0);
    CHECK(oa(cc) == 1.0);
    // all-zero prediction where change exists scores zero IoU
    Tensor<uint8_t> zeros({8, 8}, 0);
    CHECK(iou_c(confusion(zeros, random_mask(8, 8, 6, 0.4))) == 0.0);
}

TEST_CASE("metrics accumulate associatively across tiles") {
    ConfusionCounts agg;
    Tensor<uint8_t> all_pred({10 * 16, 16}), all_truth({10 * 16, 16});
    for (int64_t t = 0; t < 10; ++t) {
        auto pred = random_mask(16, 16, 300 + static_cast<uint64_t>(t));
        auto truth = random_mask(16, 16, 400 + static_cast<uint64_t>(t), 0.35);
        agg += confusion(pred, truth);
        std::copy(pred.data.begin(), pred.data.end(), all_pred.data.begin() + t * 256);
        std::copy(truth.data.begin(), truth.data.end(), all_truth.data.begin() + t * 256);
    }
    auto single = confusion(all_pred, all_truth);
    CHECK(agg.tp == single.tp);
    CHECK(agg.tn == single.tn);
    CHECK(agg.fp == single.fp);
    CHECK(agg.fn == single.fn);
    CHECK(iou_c(agg) == iou_c(single));
}

TEST_CASE("metrics are invariant under identical permutations") {
    auto pred = random_mask(12, 12, 7);
    auto truth = random_mask(12, 12, 8, 0.4);
    Tensor<uint8_t> rp = pred, rt = truth;
    std::reverse(rp.data.begin(), rp.data.end());
    std::reverse(rt.data.begin(), rt.data.end());
    auto a = confusion(pred, truth);
    auto b = confusion(rp, rt);
    CHECK(iou_c(a) == iou_c(b));
    CHECK(oa(a) == oa(b));
}

TEST_CASE("flops formulas") {
    SECTION("single 3x3 conv") {
        FlopsTally t;
        t.conv(3, 16, 16, 1, 8, 8);
        CHECK(t.headline_flops() == 294912);
    }
    SECTION("grouping divides cost exactly") {
        FlopsTally dense, grouped;
        dense.conv(3, 32, 32, 1, 8, 8);
        grouped.conv(3, 32, 32, 4, 8, 8);
        CHECK(dense.conv_macs == 4 * grouped.conv_macs);
    }
    SECTION("conv flops scale by 4 when the input doubles") {
        EncoderConfig cfg = EncoderConfig::tiny();
        RandomStream rng(1);
        nn::ConvEncoder<float> enc(cfg, rng);
        FlopsTally small, large;
        enc.add_flops(64, 64, small);
        enc.add_flops(128, 128, large);
        CHECK(large.conv_macs == 4 * small.conv_macs);
        CHECK(small.linear_macs == 0);
        CHECK(small.matmul_macs == 0);
    }
}

TEST_CASE("parameter count matches a hand-summed ledger for the tiny preset") {
    RandomStream rng(2);
    nn::ChangeNet<float> net(ChangeNetConfig::tiny(), rng);
    auto rep = count_params(net);

    // hand ledger, tiny preset: channels {16,32,64,128}, one block per
    // stage, attn dim = C, mlp = 4C, adapters at reduction 8, neck 32
    auto block = [](int64_t c) {
        return 2 * c + (c * 3 * c + 3 * c) + (c * c + c) + 2 * c + (c * 4 * c + 4 * c) + (4 * c * c + c);
    };
    auto adapter = [](int64_t c) { return 2 * c * (c / 8) + c / 8 + c; };
    int64_t encoder = 7 * 7 * 3 * 16 + 16;  // stem
    encoder += (2 * 2 * 16 * 32 + 32) + (2 * 2 * 32 * 64 + 64) + (2 * 2 * 64 * 128 + 128);  // merges
    encoder += block(16) + block(32) + block(64) + block(128);
    const int64_t adapters = adapter(16) + adapter(32) + adapter(64) + adapter(128);
    auto cbr = [](int64_t cin, int64_t cout, int64_t k) { return k * k * cin * cout + cout + 2 * cout; };
    const int64_t neck = cbr(16, 32, 1) + cbr(32, 32, 1) + cbr(64, 32, 1) + cbr(128, 32, 1);
    auto sadam_params = [&] {
        int64_t s = 0;
        for (int j = 1; j <= 4; ++j) {
            const int64_t g = int64_t(1) << j, k = 2 * j - 1;
            s += k * k * (32 / g) * 32 + 32 + 2 * 32;  // branch conv + bn
            s += cbr(32, 32, 3);                       // diff conv
        }
        s += 2 * cbr(32, 32, 3);                    // residual path
        s += cbr(128, 32, 1) + cbr(32, 32, 1) + 1;  // reduce, out, gamma
        return s;
    };
    const int64_t sadam_total = 4 * sadam_params();
    const int64_t decoder = 3 * (cbr(64, 32, 3) + cbr(32, 32, 3)) + (32 * 2 + 2);

    CHECK(rep.params_by_module.at("encoder") == encoder);
    CHECK(rep.params_by_module.at("adapters") == adapters);
    CHECK(rep.params_by_module.at("neck") == neck);
    CHECK(rep.params_by_module.at("sadam") == sadam_total);
    CHECK(rep.params_by_module.at("decoder") == decoder);
    CHECK(rep.total_params == encoder + adapters + neck + sadam_total + decoder);
    CHECK(rep.total_params == rep.trainable_params + rep.frozen_params);
}

TEST_CASE("default configuration broadly matches the published budget") {
    RandomStream rng(3);
    nn::ChangeNet<float> net(ChangeNetConfig::paper(), rng);
    auto rep = estimate_flops(net, 256);
    const double params_m = static_cast<double>(rep.total_params) / 1e6;
    const double backbone_m =
        static_cast<double>(rep.params_by_module.at("encoder") + rep.params_by_module.at("adapters")) / 1e6;
    const double gflops = static_cast<double>(rep.headline_flops()) / 1e9;
    INFO("params " << params_m << "M, backbone " << backbone_m << "M, " << gflops << " GFLOPs at 256");
    CHECK(params_m > 26.0);
    CHECK(params_m < 32.0);
    CHECK(backbone_m > 25.0);
    CHECK(backbone_m < 31.0);
    CHECK(gflops > 13.2);
    CHECK(gflops < 22.0);
    // smaller preset must cost less
    RandomStream rng2(4);
    nn::ChangeNet<float> tiny(ChangeNetConfig::tiny(), rng2);
    CHECK(count_params(tiny).total_params < rep.total_params);
}

TEST_CASE("color map legend and read-back") {
    testutil::TempDir tmp("maps");
    Tensor<uint8_t> pred({2, 2}), truth({2, 2});
    pred[0] = 1; truth[0] = 1;  // TP
    pred[1] = 0; truth[1] = 0;  // TN
    pred[2] = 1; truth[2] = 0;  // FP
    pred[3] = 0; truth[3] = 1;  // FN
    auto img = confusion_color_map(pred, truth);
    write_png(tmp.str("m.png"), img);
    auto back = read_png(tmp.str("m.png"));
    CHECK(static_cast<int>(back.at(0, 0, 0)) == 255);  // TP white
    CHECK(static_cast<int>(back.at(0, 0, 1)) == 255);
    CHECK(static_cast<int>(back.at(0, 1, 0)) == 0);    // TN black
    CHECK(static_cast<int>(back.at(1, 0, 0)) == 255);  // FP red maxed
    CHECK(static_cast<int>(back.at(1, 0, 1)) == 0);
    CHECK(static_cast<int>(back.at(1, 1, 1)) == 255);  // FN green
    CHECK(static_cast<int>(back.at(1, 1, 0)) == 0);
}

TEST_CASE("evaluate runs a split end to end") {
    testutil::TempDir tmp("evalrun");
    namespace fs = std::filesystem;
    DatasetManifest split;
    split.split_name = "test";
    split.patch_size = 32;
    RandomStream rng(9);
    for (int i = 0; i < 3; ++i) {
        BiTemporalPair<float> p;
        p.id = "e" + std::to_string(i);
        p.image_a = Tensor<float>({3, 32, 32});
        p.image_b = Tensor<float>({3, 32, 32});
        for (int64_t k = 0; k < p.image_a.numel(); ++k) {
            p.image_a[k] = static_cast<float>(rng.uniform());
            p.image_b[k] = static_cast<float>(rng.uniform());
        }
        p.label = Tensor<uint8_t>({32, 32});
        for (int64_t k = 0; k < p.label.numel(); ++k) p.label[k] = rng.bernoulli(0.2) ? 1 : 0;
        save_pair(p, tmp.str());
        split.labeled.push_back({p.id, "A/" + p.id + ".png", "B/" + p.id + ".png", "label/" + p.id + ".png"});
    }
    RandomStream netrng(10);
    nn::ChangeNet<float> net(ChangeNetConfig::tiny(), netrng);
    auto report = evaluate(net, split, tmp.str(), tmp.str("maps"));
    CHECK(report.tiles.size() == 3);
    CHECK(report.aggregate.total() == 3 * 32 * 32);
    CHECK(report.iou >= 0.0);
    CHECK(report.iou <= 1.0);
    for (int i = 0; i < 3; ++i) CHECK(fs::exists(tmp.str("maps/e" + std::to_string(i) + ".png")));

    DatasetManifest empty;
    empty.split_name = "x";
    empty.patch_size = 32;
    CHECK_THROWS_AS(evaluate(net, empty, tmp.str()), std::invalid_argument);
}
