// Gradient and identity checks for every differentiable primitive.

#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "hsacnet/ops_attn.hpp"
#include "hsacnet/ops_basic.hpp"
#include "hsacnet/ops_conv.hpp"
#include "hsacnet/random.hpp"

using namespace hsacnet;
using gradcheck::random_tensor;

namespace {
Tensor<double> rand_weights(const Shape& s, uint64_t seed) {
    RandomStream rng(seed);
    Tensor<double> w(s);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
    return w;
}
}  // namespace

TEST_CASE("elementwise ops gradients") {
    RandomStream rng(11);
    auto a = make_var(random_tensor({2, 3, 4, 4}, rng), true);
    auto b = make_var(random_tensor({2, 3, 4, 4}, rng), true);
    auto gamma = make_var(Tensor<double>::scalar(0.7), true);
    auto w = rand_weights({2, 3, 4, 4}, 99);

    SECTION("add") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::add(a, b), w); }, {a, b});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("linear_combo") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::linear_combo(a, b, 0.3, -1.7), w); }, {a, b});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("abs_diff") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::abs_diff(a, b), w); }, {a, b});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("relu") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::relu(a), w); }, {a});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("gelu") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::gelu(a), w); }, {a});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("scale_by") {
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::scale_by(a, gamma), w); }, {a, gamma});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("mean_all") {
        auto r = gradcheck::check([&] { return ops::mean_all(a); }, {a});
        CHECK(r.max_rel_err < 1e-7);
    }
}

TEST_CASE("concat_channels gradient and layout") {
    RandomStream rng(13);
    auto a = make_var(random_tensor({2, 2, 3, 3}, rng), true);
    auto b = make_var(random_tensor({2, 5, 3, 3}, rng), true);
    auto cat = ops::concat_channels<double>({a, b});
    REQUIRE(cat->value.shape == Shape({2, 7, 3, 3}));
    CHECK(cat->value[0] == a->value[0]);
    CHECK(cat->value[2 * 9] == b->value[0]);  // first b channel of batch 0

    auto w = rand_weights({2, 7, 3, 3}, 7);
    auto r = gradcheck::check([&] { return ops::weighted_sum(ops::concat_channels<double>({a, b}), w); }, {a, b});
    CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("conv2d gradients") {
    RandomStream rng(17);
    SECTION("stride 1, pad 1, groups 1") {
        auto x = make_var(random_tensor({2, 3, 5, 5}, rng), true);
        auto wv = make_var(random_tensor({4, 3, 3, 3}, rng, 0.5), true);
        auto bv = make_var(random_tensor({4}, rng), true);
        auto w = rand_weights({2, 4, 5, 5}, 3);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::conv2d(x, wv, bv, {1, 1, 1}), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("stride 2, pad 3, kernel 7") {
        auto x = make_var(random_tensor({1, 2, 8, 8}, rng), true);
        auto wv = make_var(random_tensor({3, 2, 7, 7}, rng, 0.3), true);
        auto bv = make_var(random_tensor({3}, rng), true);
        auto w = rand_weights({1, 3, 4, 4}, 5);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::conv2d(x, wv, bv, {2, 3, 1}), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("grouped conv") {
        auto x = make_var(random_tensor({2, 8, 4, 4}, rng), true);
        auto wv = make_var(random_tensor({8, 2, 3, 3}, rng, 0.5), true);
        auto bv = make_var(random_tensor({8}, rng), true);
        auto w = rand_weights({2, 8, 4, 4}, 9);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::conv2d(x, wv, bv, {1, 1, 4}), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("1x1 conv") {
        auto x = make_var(random_tensor({2, 6, 3, 3}, rng), true);
        auto wv = make_var(random_tensor({4, 6, 1, 1}, rng, 0.5), true);
        auto bv = make_var(random_tensor({4}, rng), true);
        auto w = rand_weights({2, 4, 3, 3}, 1);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::conv2d(x, wv, bv, {1, 0, 1}), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("stride 4 stem") {
        auto x = make_var(random_tensor({1, 3, 8, 8}, rng), true);
        auto wv = make_var(random_tensor({4, 3, 7, 7}, rng, 0.3), true);
        auto bv = make_var(random_tensor({4}, rng), true);
        auto w = rand_weights({1, 4, 2, 2}, 2);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::conv2d(x, wv, bv, {4, 3, 1}), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-6);
    }
}

TEST_CASE("batchnorm2d") {
    RandomStream rng(23);
    auto x = make_var(random_tensor({3, 4, 3, 3}, rng), true);
    auto gm = make_var(random_tensor({4}, rng), true);
    auto bt = make_var(random_tensor({4}, rng), true);
    auto w = rand_weights({3, 4, 3, 3}, 21);

    SECTION("training mode gradient (stats recomputed per probe)") {
        auto r = gradcheck::check(
            [&] {
                Tensor<double> rm = Tensor<double>::zeros({4});
                Tensor<double> rv = Tensor<double>::full({4}, 1.0);
                return ops::weighted_sum(ops::batchnorm2d(x, gm, bt, &rm, &rv, true), w);
            },
            {x, gm, bt});
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("eval mode gradient") {
        Tensor<double> rm = random_tensor({4}, rng, 0.5);
        Tensor<double> rv = Tensor<double>::full({4}, 1.3);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::batchnorm2d(x, gm, bt, &rm, &rv, false), w); }, {x, gm, bt});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("training normalizes to zero mean unit var") {
        Tensor<double> rm = Tensor<double>::zeros({4});
        Tensor<double> rv = Tensor<double>::full({4}, 1.0);
        auto one = make_var(Tensor<double>::full({4}, 1.0));
        auto zero = make_var(Tensor<double>::zeros({4}));
        auto y = ops::batchnorm2d(x, one, zero, &rm, &rv, true);
        double m = 0;
        for (int64_t n = 0; n < 3; ++n)
            for (int64_t i = 0; i < 9; ++i) m += y->value[(n * 4 + 0) * 9 + i];
        CHECK(std::abs(m / 27.0) < 1e-12);
        // running stats moved toward batch stats
        CHECK(rm[0] != 0.0);
    }
}

TEST_CASE("linear layers") {
    RandomStream rng(31);
    SECTION("tokens") {
        auto x = make_var(random_tensor({2, 5, 3}, rng), true);
        auto wv = make_var(random_tensor({4, 3}, rng, 0.5), true);
        auto bv = make_var(random_tensor({4}, rng), true);
        auto w = rand_weights({2, 5, 4}, 4);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::linear_tokens(x, wv, bv), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("nchw") {
        auto x = make_var(random_tensor({2, 3, 2, 2}, rng), true);
        auto wv = make_var(random_tensor({5, 3}, rng, 0.5), true);
        auto bv = make_var(random_tensor({5}, rng), true);
        auto w = rand_weights({2, 5, 2, 2}, 6);
        auto r = gradcheck::check(
            [&] { return ops::weighted_sum(ops::linear_nchw(x, wv, bv), w); }, {x, wv, bv});
        CHECK(r.max_rel_err < 1e-7);
    }
}

TEST_CASE("layernorm gradient") {
    RandomStream rng(37);
    auto x = make_var(random_tensor({2, 4, 6}, rng), true);
    auto gm = make_var(random_tensor({6}, rng), true);
    auto bt = make_var(random_tensor({6}, rng), true);
    auto w = rand_weights({2, 4, 6}, 8);
    auto r = gradcheck::check(
        [&] { return ops::weighted_sum(ops::layernorm_tokens(x, gm, bt), w); }, {x, gm, bt});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax") {
    RandomStream rng(41);
    auto x = make_var(random_tensor({3, 4, 5}, rng), true);
    SECTION("rows sum to one") {
        auto y = ops::softmax_lastdim(x);
        for (int64_t r = 0; r < 12; ++r) {
            double s = 0;
            for (int64_t i = 0; i < 5; ++i) s += y->value[r * 5 + i];
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
    SECTION("gradient") {
        auto w = rand_weights({3, 4, 5}, 10);
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::softmax_lastdim(x), w); }, {x});
        CHECK(r.max_rel_err < 1e-7);
    }
}

TEST_CASE("bmm all transpose combinations") {
    RandomStream rng(43);
    auto w = rand_weights({2, 3, 4}, 12);
    for (int tA = 0; tA <= 1; ++tA)
        for (int tB = 0; tB <= 1; ++tB) {
            DYNAMIC_SECTION("transA=" << tA << " transB=" << tB) {
                Shape sa = tA ? Shape{2, 5, 3} : Shape{2, 3, 5};
                Shape sb = tB ? Shape{2, 4, 5} : Shape{2, 5, 4};
                auto a = make_var(random_tensor(sa, rng), true);
                auto b = make_var(random_tensor(sb, rng), true);
                auto r = gradcheck::check(
                    [&] { return ops::weighted_sum(ops::bmm(a, b, tA, tB), w); }, {a, b});
                CHECK(r.max_rel_err < 1e-7);
            }
        }
}

TEST_CASE("bmm value against naive loop") {
    RandomStream rng(47);
    auto a = make_var(random_tensor({1, 3, 4}, rng));
    auto b = make_var(random_tensor({1, 4, 2}, rng));
    auto c = ops::bmm(a, b);
    for (int64_t m = 0; m < 3; ++m)
        for (int64_t n = 0; n < 2; ++n) {
            double acc = 0;
            for (int64_t k = 0; k < 4; ++k) acc += a->value[m * 4 + k] * b->value[k * 2 + n];
            CHECK(c->value[m * 2 + n] == Catch::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("head split and merge round trip") {
    RandomStream rng(53);
    auto x = make_var(random_tensor({2, 3, 12}, rng), true);  // B=2 L=3 3d with d=4
    auto q = ops::qkv_slice(x, 0, 2);
    REQUIRE(q->value.shape == Shape({4, 3, 2}));
    auto merged = ops::merge_heads(q, 2);
    REQUIRE(merged->value.shape == Shape({2, 3, 4}));
    for (int64_t bq = 0; bq < 2; ++bq)
        for (int64_t l = 0; l < 3; ++l)
            for (int64_t j = 0; j < 4; ++j)
                CHECK(merged->value[(bq * 3 + l) * 4 + j] == x->value[(bq * 3 + l) * 12 + j]);

    auto w = rand_weights({4, 3, 2}, 14);
    auto r = gradcheck::check([&] { return ops::weighted_sum(ops::qkv_slice(x, 1, 2), w); }, {x});
    CHECK(r.max_rel_err < 1e-7);
    auto w2 = rand_weights({2, 3, 4}, 15);
    auto r2 = gradcheck::check(
        [&] { return ops::weighted_sum(ops::merge_heads(ops::qkv_slice(x, 2, 2), 2), w2); }, {x});
    CHECK(r2.max_rel_err < 1e-7);
}

TEST_CASE("window partition and merge") {
    RandomStream rng(59);
    auto x = make_var(random_tensor({2, 3, 4, 6}, rng), true);
    auto t = ops::window_partition(x, 2);
    REQUIRE(t->value.shape == Shape({2 * 2 * 3, 4, 3}));
    auto back = ops::window_merge(t, 2, 3, 4, 6, 2);
    REQUIRE(back->value.shape == x->value.shape);
    for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(back->value[i] == x->value[i]);

    auto w = rand_weights({2, 3, 4, 6}, 16);
    auto r = gradcheck::check(
        [&] { return ops::weighted_sum(ops::window_merge(ops::window_partition(x, 2), 2, 3, 4, 6, 2), w); }, {x});
    CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("hw slice stack and scatter avg") {
    RandomStream rng(61);
    auto x = make_var(random_tensor({2, 3, 4, 4}, rng), true);
    auto s = ops::hw_slice_stack(x);
    REQUIRE(s->value.shape == Shape({2 * 8, 3, 4}));
    // row slice h=1 of batch 0, channel 2, position 3
    CHECK(s->value[(1 * 3 + 2) * 4 + 3] == x->value[(0 * 3 + 2) * 16 + 1 * 4 + 3]);
    // col slice w=2: element (c=0, s=1) is x[0,0,1,2]
    CHECK(s->value[((4 + 2) * 3 + 0) * 4 + 1] == x->value[0 * 16 + 1 * 4 + 2]);

    auto back = ops::hw_scatter_avg(s, 4);
    REQUIRE(back->value.shape == x->value.shape);
    for (int64_t i = 0; i < x->value.numel(); ++i)
        CHECK(back->value[i] == Catch::Approx(x->value[i]).margin(1e-14));

    auto w = rand_weights({2, 3, 4, 4}, 18);
    auto r = gradcheck::check(
        [&] { return ops::weighted_sum(ops::hw_scatter_avg(ops::hw_slice_stack(x), 4), w); }, {x});
    CHECK(r.max_rel_err < 1e-7);
    CHECK_THROWS(ops::hw_slice_stack(make_var(Tensor<double>::zeros({1, 2, 3, 4}))));
}

TEST_CASE("upsample_bilinear") {
    RandomStream rng(67);
    auto x = make_var(random_tensor({2, 2, 3, 3}, rng), true);
    auto y = ops::upsample_bilinear(x, 2);
    REQUIRE(y->value.shape == Shape({2, 2, 6, 6}));
    SECTION("constant map stays constant") {
        auto c = make_var(Tensor<double>::full({1, 1, 4, 4}, 2.5));
        auto u = ops::upsample_bilinear(c, 4);
        for (int64_t i = 0; i < u->value.numel(); ++i) CHECK(u->value[i] == Catch::Approx(2.5));
    }
    SECTION("gradient") {
        auto w = rand_weights({2, 2, 6, 6}, 20);
        auto r = gradcheck::check([&] { return ops::weighted_sum(ops::upsample_bilinear(x, 2), w); }, {x});
        CHECK(r.max_rel_err < 1e-7);
    }
}

TEST_CASE("cross entropy") {
    RandomStream rng(71);
    SECTION("uniform logits give ln 2") {
        auto z = make_var(Tensor<double>::zeros({1, 2, 4, 4}));
        Tensor<int32_t> t({1, 4, 4});
        for (int64_t i = 0; i < 16; ++i) t[i] = static_cast<int32_t>(i % 2);
        auto l = ops::cross_entropy_mean(z, t, {});
        CHECK(l->value[0] == Catch::Approx(std::log(2.0)).margin(1e-12));
    }
    SECTION("gradient with valid mask") {
        auto z = make_var(random_tensor({2, 2, 3, 3}, rng), true);
        Tensor<int32_t> t({2, 3, 3});
        Tensor<uint8_t> v({2, 3, 3});
        RandomStream r2(5);
        for (int64_t i = 0; i < 18; ++i) {
            t[i] = static_cast<int32_t>(r2.uniform_int(2));
            v[i] = static_cast<uint8_t>(r2.uniform_int(2));
        }
        auto r = gradcheck::check([&] { return ops::cross_entropy_mean(z, t, v); }, {z});
        CHECK(r.max_rel_err < 1e-7);
    }
    SECTION("empty valid mask yields zero loss") {
        auto z = make_var(random_tensor({1, 2, 2, 2}, rng), true);
        Tensor<int32_t> t({1, 2, 2});
        Tensor<uint8_t> v({1, 2, 2});  // all zero
        int64_t count = -1;
        auto l = ops::cross_entropy_mean(z, t, v, &count);
        CHECK(l->value[0] == 0.0);
        CHECK(count == 0);
    }
}

TEST_CASE("no-grad mode builds no graph") {
    RandomStream rng(73);
    auto x = make_var(random_tensor({1, 2, 4, 4}, rng), true);
    NoGrad guard;
    auto y = ops::relu(x);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}
