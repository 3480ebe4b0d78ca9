// Encoder: adapter placement, freeze policy, siamese property, shapes,
// checkpoint import/export.

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "gradcheck.hpp"
#include "hsacnet/encoder.hpp"
#include "testutil.hpp"

using namespace hsacnet;
using gradcheck::random_tensor;

namespace {

EncoderConfig small_cfg() {
    EncoderConfig c;
    c.channels = {8, 16, 32, 64};
    c.blocks = {1, 1, 1, 1};
    c.attn_dims = c.channels;
    c.mlp_dims = {16, 32, 64, 128};
    c.head_dim = 8;
    c.freeze_backbone = false;
    c.init_mode = "random";
    return c;
}

template <class T>
int64_t count_adapters(nn::PyramidEncoder<T>& enc) {
    std::set<std::string> adapters;
    for (auto& [name, p] : enc.named_params()) {
        auto pos = name.find(".adapter.");
        if (pos != std::string::npos) adapters.insert(name.substr(0, pos));
    }
    return static_cast<int64_t>(adapters.size());
}

}  // namespace

TEST_CASE("build: adapter count follows block count") {
    RandomStream rng(1);
    SECTION("default config has 12 adapters over 4 stages") {
        nn::PyramidEncoder<float> enc(EncoderConfig::paper(), rng);
        CHECK(count_adapters(enc) == 12);
        CHECK(enc.config().adapter_count() == 12);
    }
    SECTION("small config has 4 adapters") {
        nn::PyramidEncoder<float> enc(small_cfg(), rng);
        CHECK(count_adapters(enc) == 4);
    }
}

TEST_CASE("build: adapter_reduction must divide stage widths") {
    auto c = small_cfg();
    c.adapter_reduction = 3;
    RandomStream rng(2);
    CHECK_THROWS_AS(nn::PyramidEncoder<float>(c, rng), std::invalid_argument);
}

TEST_CASE("freeze: trainable set is exactly the adapter parameters") {
    RandomStream rng(3);
    auto cfg = EncoderConfig::paper();
    cfg.freeze_backbone = true;
    nn::PyramidEncoder<float> enc(cfg, rng);
    std::set<std::string> trainable, adapters;
    for (auto& [name, p] : enc.named_params()) {
        if (p->trainable) trainable.insert(name);
        if (name.find(".adapter.") != std::string::npos) adapters.insert(name);
    }
    CHECK(trainable == adapters);
    CHECK_FALSE(adapters.empty());
}

TEST_CASE("encode: stage shapes follow strides and channels") {
    RandomStream rng(4);
    SECTION("default config at 256x256") {
        nn::PyramidEncoder<float> enc(EncoderConfig::paper(), rng);
        enc.set_training(false);
        NoGrad ng;
        auto img = make_var(Tensor<float>::zeros({1, 3, 256, 256}));
        auto pyr = enc.forward_pyramid(img);
        CHECK(pyr[0]->value.shape == Shape({1, 96, 64, 64}));
        CHECK(pyr[1]->value.shape == Shape({1, 192, 32, 32}));
        CHECK(pyr[2]->value.shape == Shape({1, 384, 16, 16}));
        CHECK(pyr[3]->value.shape == Shape({1, 768, 8, 8}));
    }
    SECTION("small config at 64x64") {
        nn::PyramidEncoder<float> enc(small_cfg(), rng);
        enc.set_training(false);
        NoGrad ng;
        auto img = make_var(Tensor<float>::zeros({1, 3, 64, 64}));
        auto pyr = enc.forward_pyramid(img);
        CHECK(pyr[0]->value.shape == Shape({1, 8, 16, 16}));
        CHECK(pyr[1]->value.shape == Shape({1, 16, 8, 8}));
        CHECK(pyr[2]->value.shape == Shape({1, 32, 4, 4}));
        CHECK(pyr[3]->value.shape == Shape({1, 64, 2, 2}));
    }
    SECTION("indivisible input rejected before compute") {
        nn::PyramidEncoder<float> enc(small_cfg(), rng);
        auto img = make_var(Tensor<float>::zeros({1, 3, 48, 48}));
        CHECK_THROWS_AS(enc.forward_pyramid(img), std::invalid_argument);
    }
}

TEST_CASE("encode: siamese weight sharing is bitwise") {
    RandomStream rng(5);
    nn::PyramidEncoder<float> enc(small_cfg(), rng);
    enc.set_training(false);
    NoGrad ng;
    RandomStream data(6);
    Tensor<float> img({2, 3, 64, 64});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(data.uniform());
    auto [pa, pb] = enc.encode_pair(make_var(img), make_var(img));
    for (int s = 0; s < 4; ++s) {
        REQUIRE(pa[s]->value.shape == pb[s]->value.shape);
        for (int64_t i = 0; i < pa[s]->value.numel(); ++i) REQUIRE(pa[s]->value[i] == pb[s]->value[i]);
    }
}

TEST_CASE("adapter: zero up-projection makes the adapter an exact no-op") {
    RandomStream rng(7);
    nn::Adapter<float> ad(16, 8, rng);
    RandomStream data(8);
    auto x = make_var(random_tensor({1, 16, 4, 4}, data).cast<float>());
    auto y = ad.forward(x);
    REQUIRE(y->value.shape == x->value.shape);
    for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == 0.0f);
}

TEST_CASE("adapter: zero input propagates biases to a constant map") {
    RandomStream rng(9);
    nn::Adapter<double> ad(8, 4, rng);
    // randomize all parameters so the constant is nontrivial
    RandomStream pr(10);
    for (auto* p : ad.params())
        for (int64_t i = 0; i < p->var->value.numel(); ++i) p->var->value[i] = pr.normal() * 0.5;
    auto x = make_var(Tensor<double>::zeros({1, 8, 3, 3}));
    auto y = ad.forward(x);
    // every spatial site must carry the identical channel vector
    for (int64_t c = 0; c < 8; ++c)
        for (int64_t i = 1; i < 9; ++i) CHECK(y->value[c * 9 + i] == Catch::Approx(y->value[c * 9]).margin(1e-15));
}

TEST_CASE("adapter: bottleneck width and parameter count") {
    RandomStream rng(11);
    nn::Adapter<float> ad(96, 8, rng);
    int64_t total = 0;
    bool saw_down = false;
    for (auto& [name, p] : ad.named_params()) {
        total += p->var->value.numel();
        if (name == "down.weight") {
            saw_down = true;
            CHECK(p->var->value.shape == Shape({12, 96}));
        }
    }
    CHECK(saw_down);
    CHECK(total == 96 * 12 + 12 + 12 * 96 + 96);  // 2412
}

TEST_CASE("adapter: analytic gradient matches finite differences") {
    RandomStream rng(13);
    nn::Adapter<double> ad(16, 8, rng);
    RandomStream pr(14);
    for (auto* p : ad.params())
        for (int64_t i = 0; i < p->var->value.numel(); ++i) p->var->value[i] = pr.normal() * 0.4;
    auto x = make_var(random_tensor({1, 16, 4, 4}, pr), true);
    auto w = random_tensor({1, 16, 4, 4}, pr);

    std::vector<Var<double>> leaves{x};
    for (auto* p : ad.params()) leaves.push_back(p->var);
    auto res = gradcheck::check([&] { return ops::weighted_sum(ad.forward(x), w); }, leaves);
    INFO("max rel err " << res.max_rel_err << " over " << res.checked << " elements");
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("frozen backbone still routes gradient to adapters") {
    RandomStream rng(15);
    auto cfg = small_cfg();
    cfg.freeze_backbone = true;
    nn::PyramidEncoder<double> enc(cfg, rng);
    // randomize adapter up-projections so adapter gradients are generic
    RandomStream pr(16);
    for (auto& [name, p] : enc.named_params())
        if (name.find(".adapter.up.") != std::string::npos)
            for (int64_t i = 0; i < p->var->value.numel(); ++i) p->var->value[i] = pr.normal() * 0.1;

    auto img = make_var(random_tensor({1, 3, 64, 64}, pr, 0.5));
    auto pyr = enc.forward_pyramid(img);
    auto loss = ops::mean_all(pyr[3]);
    enc.zero_grads();
    backward(loss);

    bool adapter_grad = false;
    for (auto& [name, p] : enc.named_params()) {
        const bool is_adapter = name.find(".adapter.") != std::string::npos;
        if (!is_adapter) {
            // frozen: no gradient storage at all
            CHECK(p->var->grad.numel() == 0);
        } else if (p->var->grad.numel() > 0) {
            for (int64_t i = 0; i < p->var->grad.numel(); ++i)
                if (p->var->grad[i] != 0.0) adapter_grad = true;
        }
    }
    CHECK(adapter_grad);
}

TEST_CASE("checkpoint export/import round trip") {
    testutil::TempDir tmp("enc_ckpt");
    RandomStream rng(17);
    nn::PyramidEncoder<float> a(small_cfg(), rng);
    RandomStream rng2(99);
    nn::PyramidEncoder<float> b(small_cfg(), rng2);

    auto path = tmp.str("enc.ckpt");
    save_archive<float>(path, a.export_tensors());

    SECTION("full archive matches every backbone tensor") {
        auto report = import_pretrained(b, path);
        CHECK(report.shape_mismatched.empty());
        CHECK(report.missing.empty());
        CHECK_FALSE(report.matched.empty());
        auto pa = a.named_params();
        auto pb = b.named_params();
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i) {
            if (pa[i].first.find(".adapter.") != std::string::npos) continue;
            for (int64_t j = 0; j < pa[i].second->var->value.numel(); ++j)
                REQUIRE(pa[i].second->var->value[j] == pb[i].second->var->value[j]);
        }
    }
    SECTION("empty archive changes nothing") {
        auto empty_path = tmp.str("empty.ckpt");
        save_archive<float>(empty_path, {});
        auto before = b.named_params();
        std::vector<float> snapshot;
        for (auto& [n, p] : before)
            for (int64_t i = 0; i < p->var->value.numel(); ++i) snapshot.push_back(p->var->value[i]);
        auto report = import_pretrained(b, empty_path);
        CHECK(report.matched.empty());
        CHECK_FALSE(report.missing.empty());
        size_t k = 0;
        for (auto& [n, p] : b.named_params())
            for (int64_t i = 0; i < p->var->value.numel(); ++i) REQUIRE(p->var->value[i] == snapshot[k++]);
    }
    SECTION("one reshaped tensor is reported, others match") {
        auto archive = load_archive<float>(path);
        std::string victim = "stem.weight";
        REQUIRE(archive.count(victim) == 1);
        archive[victim] = Tensor<float>::zeros({1, 2, 3});
        std::vector<std::pair<std::string, const Tensor<float>*>> entries;
        for (auto& [n, t] : archive) entries.emplace_back(n, &t);
        auto mod_path = tmp.str("mod.ckpt");
        save_archive<float>(mod_path, entries);
        auto report = import_pretrained(b, mod_path);
        REQUIRE(report.shape_mismatched == std::vector<std::string>{victim});
        CHECK(report.missing.empty());
    }
}

TEST_CASE("unreadable checkpoint raises an import error") {
    RandomStream rng(21);
    nn::PyramidEncoder<float> enc(small_cfg(), rng);
    CHECK_THROWS_AS(import_pretrained(enc, "/nonexistent/path.ckpt"), CheckpointError);
}
