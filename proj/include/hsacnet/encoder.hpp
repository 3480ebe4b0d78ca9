#pragma once
// Four-stage siamese pyramid encoder: stride-4 conv stem, stride-2 patch
// merges between stages, and pre-norm windowed-attention blocks. Bottleneck
// adapters can be inserted residually before every block; the backbone can
// be frozen while adapters stay trainable.

#include <array>
#include <map>
#include <set>

#include "hsacnet/checkpoint.hpp"
#include "hsacnet/nn.hpp"

namespace hsacnet {

struct EncoderConfig {
    std::array<int64_t, 4> channels{96, 192, 384, 768};
    std::array<int64_t, 4> blocks{1, 2, 7, 2};
    std::array<int64_t, 4> strides{4, 8, 16, 32};
    bool adapter_enabled = true;
    int64_t adapter_reduction = 8;
    bool freeze_backbone = true;
    std::string init_mode = "pretrained-import";  // or "random"

    // Block internals. The attention width and MLP width vary per stage so
    // that the default configuration lands on the published parameter and
    // compute budget; see docs/complexity notes in the README.
    std::array<int64_t, 4> attn_dims{96, 192, 192, 768};
    std::array<int64_t, 4> mlp_dims{384, 768, 768, 4608};
    int64_t head_dim = 96;
    int64_t window = 8;

    static EncoderConfig paper() { return EncoderConfig{}; }

    static EncoderConfig tiny() {
        EncoderConfig c;
        c.channels = {16, 32, 64, 128};
        c.blocks = {1, 1, 1, 1};
        c.attn_dims = c.channels;
        c.mlp_dims = {64, 128, 256, 512};
        c.head_dim = 16;
        c.adapter_reduction = 8;
        c.freeze_backbone = false;
        c.init_mode = "random";
        return c;
    }

    void validate() const {
        check(strides[0] < strides[1] && strides[1] < strides[2] && strides[2] < strides[3],
              "encoder config: strides must be strictly increasing");
        for (int i = 0; i < 4; ++i) {
            check(channels[i] > 0 && blocks[i] > 0, "encoder config: channels and blocks must be positive");
            if (adapter_enabled)
                check(channels[i] % adapter_reduction == 0,
                      "encoder config: adapter_reduction " + std::to_string(adapter_reduction) +
                          " does not divide stage channel count " + std::to_string(channels[i]));
            check(attn_dims[i] % head_dim == 0, "encoder config: head_dim must divide attention dim");
        }
        check(init_mode == "pretrained-import" || init_mode == "random",
              "encoder config: init_mode must be pretrained-import or random");
    }

    int64_t adapter_count() const {
        return adapter_enabled ? blocks[0] + blocks[1] + blocks[2] + blocks[3] : 0;
    }
};

inline int64_t effective_window(int64_t cfg_window, int64_t h, int64_t w) {
    int64_t win = std::min({cfg_window, h, w});
    while (win > 1 && (h % win != 0 || w % win != 0)) --win;
    return win;
}

namespace nn {

// down-linear -> GeLU -> up-linear -> GeLU, channel-preserving. The up
// projection starts at zero so a residually inserted adapter is an identity.
template <class T>
class Adapter : public Module<T> {
public:
    Adapter(int64_t c, int64_t reduction, RandomStream& rng)
        : down_(c, c / reduction, rng), up_(c / reduction, c, rng, -1.0, /*zero_init=*/true) {
        this->add_child("down", &down_);
        this->add_child("up", &up_);
    }

    Var<T> forward(const Var<T>& x) {
        return ops::gelu(up_.forward_nchw(ops::gelu(down_.forward_nchw(x))));
    }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        down_.add_flops(h * w, t);
        up_.add_flops(h * w, t);
        t.act(h * w * (down_.out_features() + up_.out_features()));
    }

private:
    Linear<T> down_;
    Linear<T> up_;
};

// Pre-norm windowed multi-head self-attention + MLP.
template <class T>
class AttentionBlock : public Module<T> {
public:
    AttentionBlock(int64_t c, int64_t attn_dim, int64_t heads, int64_t mlp_dim, int64_t window, RandomStream& rng)
        : heads_(heads),
          window_(window),
          ln1_(c),
          qkv_(c, 3 * attn_dim, rng, 0.02),
          proj_(attn_dim, c, rng, 0.02),
          ln2_(c),
          fc1_(c, mlp_dim, rng, 0.02),
          fc2_(mlp_dim, c, rng, 0.02) {
        this->add_child("ln1", &ln1_);
        this->add_child("qkv", &qkv_);
        this->add_child("proj", &proj_);
        this->add_child("ln2", &ln2_);
        this->add_child("fc1", &fc1_);
        this->add_child("fc2", &fc2_);
    }

    Var<T> forward(const Var<T>& x) {
        const auto& s = x->value.shape;
        const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
        const int64_t win = effective_window(window_, H, W);
        auto t = ops::window_partition(x, win);

        auto a = ln1_.forward(t);
        auto qkv = qkv_.forward_tokens(a);
        auto q = ops::qkv_slice(qkv, 0, heads_);
        auto k = ops::qkv_slice(qkv, 1, heads_);
        auto v = ops::qkv_slice(qkv, 2, heads_);
        const int64_t dh = q->value.dim(2);
        auto logits = ops::mul_scalar(ops::bmm(q, k, false, true), T(1.0 / std::sqrt(double(dh))));
        auto attn = ops::softmax_lastdim(logits);
        auto o = ops::merge_heads(ops::bmm(attn, v), heads_);
        t = ops::add(t, proj_.forward_tokens(o));

        auto m = fc2_.forward_tokens(ops::gelu(fc1_.forward_tokens(ln2_.forward(t))));
        t = ops::add(t, m);
        return ops::window_merge(t, N, C, H, W, win);
    }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        const int64_t tokens = h * w;
        const int64_t c = qkv_.in_features();
        const int64_t d = qkv_.out_features() / 3;
        const int64_t win = effective_window(window_, h, w);
        const int64_t win_tokens = win * win, n_windows = tokens / win_tokens;
        t.norm(tokens * c * 2);
        qkv_.add_flops(tokens, t);
        // q.k^T and attn.v per head over each window
        t.matmul(n_windows * heads_, win_tokens, win_tokens, d / heads_);
        t.matmul(n_windows * heads_, win_tokens, d / heads_, win_tokens);
        proj_.add_flops(tokens, t);
        fc1_.add_flops(tokens, t);
        t.act(tokens * fc1_.out_features());
        fc2_.add_flops(tokens, t);
    }

private:
    int64_t heads_, window_;
    LayerNorm<T> ln1_;
    Linear<T> qkv_;
    Linear<T> proj_;
    LayerNorm<T> ln2_;
    Linear<T> fc1_;
    Linear<T> fc2_;
};

template <class T>
class PyramidEncoder : public EncoderBase<T> {
public:
    PyramidEncoder(const EncoderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
        cfg.validate();
        stem_ = std::make_unique<Conv2d<T>>(3, cfg.channels[0], 7, ops::ConvSpec{4, 3, 1}, rng);
        this->add_child("stem", stem_.get());
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                merges_.push_back(
                    std::make_unique<Conv2d<T>>(cfg.channels[i - 1], cfg.channels[i], 2, ops::ConvSpec{2, 0, 1}, rng));
                this->add_child("merge" + std::to_string(i + 1), merges_.back().get());
            }
            for (int64_t b = 0; b < cfg.blocks[i]; ++b) {
                std::string prefix = "stage" + std::to_string(i + 1) + ".block" + std::to_string(b);
                if (cfg.adapter_enabled) {
                    adapters_[i].push_back(std::make_unique<Adapter<T>>(cfg.channels[i], cfg.adapter_reduction, rng));
                    this->add_child(prefix + ".adapter", adapters_[i].back().get());
                }
                blocks_[i].push_back(std::make_unique<AttentionBlock<T>>(
                    cfg.channels[i], cfg.attn_dims[i], cfg.attn_dims[i] / cfg.head_dim, cfg.mlp_dims[i], cfg.window,
                    rng));
                this->add_child(prefix, blocks_[i].back().get());
            }
        }
        if (cfg.freeze_backbone) set_freeze(true);
    }

    const EncoderConfig& config() const { return cfg_; }

    std::array<int64_t, 4> stage_channels() const override { return cfg_.channels; }
    std::array<int64_t, 4> stage_strides() const override { return cfg_.strides; }

    // Marks every non-adapter parameter (non-)trainable. Adapters always
    // stay trainable.
    void set_freeze(bool freeze) override {
        for (auto& [name, p] : this->named_params()) {
            if (name.find(".adapter.") != std::string::npos) continue;
            p->set_trainable(!freeze);
        }
    }

    FeaturePyramid<T> forward_pyramid(const Var<T>& image) override {
        const auto& s = image->value.shape;
        check(s.size() == 4 && s[1] == 3, "encoder: input must be (N,3,H,W), got " + shape_str(s));
        check(s[2] % 32 == 0 && s[3] % 32 == 0,
              "encoder: spatial dims must be divisible by 32, got " + shape_str(s));
        FeaturePyramid<T> pyramid;
        auto x = stem_->forward(image);
        x = run_stage(0, x);
        pyramid[0] = x;
        for (int i = 1; i < 4; ++i) {
            x = merges_[static_cast<size_t>(i - 1)]->forward(x);
            x = run_stage(i, x);
            pyramid[static_cast<size_t>(i)] = x;
        }
        return pyramid;
    }

    std::vector<std::pair<std::string, const Tensor<T>*>> export_tensors() {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        for (auto& [name, p] : this->named_params()) out.emplace_back(name, &p->var->value);
        for (auto& [name, b] : this->named_buffers()) out.emplace_back(name, b);
        return out;
    }

    // One image through stem, merges, adapters and blocks.
    void add_flops(int64_t h, int64_t w, FlopsTally& t) const override {
        stem_->add_flops(h, w, t);
        int64_t sh = stem_->out_dim(h), sw = stem_->out_dim(w);
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                merges_[static_cast<size_t>(i - 1)]->add_flops(sh, sw, t);
                sh /= 2;
                sw /= 2;
            }
            for (size_t b = 0; b < blocks_[i].size(); ++b) {
                if (cfg_.adapter_enabled) adapters_[i][b]->add_flops(sh, sw, t);
                blocks_[i][b]->add_flops(sh, sw, t);
            }
        }
    }

private:
    Var<T> run_stage(int i, Var<T> x) {
        for (size_t b = 0; b < blocks_[i].size(); ++b) {
            if (cfg_.adapter_enabled) x = ops::add(x, adapters_[i][b]->forward(x));
            x = blocks_[i][b]->forward(x);
        }
        return x;
    }

    EncoderConfig cfg_;
    std::unique_ptr<Conv2d<T>> stem_;
    std::vector<std::unique_ptr<Conv2d<T>>> merges_;
    std::array<std::vector<std::unique_ptr<Adapter<T>>>, 4> adapters_;
    std::array<std::vector<std::unique_ptr<AttentionBlock<T>>>, 4> blocks_;
};

}  // namespace nn

struct ImportReport {
    std::vector<std::string> matched;
    std::vector<std::string> shape_mismatched;
    std::vector<std::string> missing;  // model tensors absent from the archive
};

// Overwrites every backbone tensor whose name and shape match the archive.
// Adapter tensors are never touched. Mismatches are reported, not fatal.
template <class T>
ImportReport import_pretrained(nn::PyramidEncoder<T>& enc, const std::string& path) {
    auto archive = load_archive<T>(path);
    ImportReport report;
    for (auto& [name, p] : enc.named_params()) {
        if (name.find(".adapter.") != std::string::npos) continue;
        auto it = archive.find(name);
        if (it == archive.end()) {
            report.missing.push_back(name);
        } else if (it->second.shape != p->var->value.shape) {
            report.shape_mismatched.push_back(name);
        } else {
            p->var->value = it->second;
            report.matched.push_back(name);
        }
    }
    return report;
}

}  // namespace hsacnet
