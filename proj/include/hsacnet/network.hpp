#pragma once
// Full change-detection network: siamese encoder -> per-stage lateral
// projection -> per-stage change module (SADAM or a plain difference conv for
// the ablation) -> cross-scale decoder -> 2-class logits at input resolution.

#include "hsacnet/encoder.hpp"
#include "hsacnet/sadam.hpp"

namespace hsacnet {

struct DecoderConfig {
    std::array<int64_t, 4> stage_channels{32, 32, 32, 32};
    int64_t num_classes = 2;
    std::string upsample_mode = "bilinear";
    int64_t output_upsample = 4;  // stride of the finest stage

    void validate() const {
        check(num_classes == 2, "decoder config: this toolkit is binary change detection (2 classes)");
        check(upsample_mode == "bilinear", "decoder config: only bilinear upsampling is supported");
        for (auto c : stage_channels) check(c > 0, "decoder config: stage channels must be positive");
    }
};

namespace nn {

// Plain residual conv encoder, the "small conv backbone" ablation variant.
template <class T>
class ResidualBlock : public Module<T> {
public:
    ResidualBlock(int64_t c, RandomStream& rng)
        : conv1_(c, c, 3, ops::ConvSpec{1, 1, 1}, rng), bn1_(c), conv2_(c, c, 3, ops::ConvSpec{1, 1, 1}, rng), bn2_(c) {
        this->add_child("conv1", &conv1_);
        this->add_child("bn1", &bn1_);
        this->add_child("conv2", &conv2_);
        this->add_child("bn2", &bn2_);
    }

    Var<T> forward(const Var<T>& x) {
        auto h = ops::relu(bn1_.forward(conv1_.forward(x)));
        return ops::relu(ops::add(x, bn2_.forward(conv2_.forward(h))));
    }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        conv1_.add_flops(h, w, t);
        bn1_.add_flops(conv1_.out_channels(), h, w, t);
        conv2_.add_flops(h, w, t);
        bn2_.add_flops(conv2_.out_channels(), h, w, t);
        t.act(2 * conv1_.out_channels() * h * w);
    }

private:
    Conv2d<T> conv1_;
    BatchNorm2d<T> bn1_;
    Conv2d<T> conv2_;
    BatchNorm2d<T> bn2_;
};

template <class T>
class ConvEncoder : public EncoderBase<T> {
public:
    ConvEncoder(const EncoderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
        stem_ = std::make_unique<Conv2d<T>>(3, cfg.channels[0], 7, ops::ConvSpec{4, 3, 1}, rng);
        this->add_child("stem", stem_.get());
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                merges_.push_back(
                    std::make_unique<Conv2d<T>>(cfg.channels[i - 1], cfg.channels[i], 2, ops::ConvSpec{2, 0, 1}, rng));
                this->add_child("merge" + std::to_string(i + 1), merges_.back().get());
            }
            for (int64_t b = 0; b < cfg.blocks[i]; ++b) {
                blocks_[i].push_back(std::make_unique<ResidualBlock<T>>(cfg.channels[i], rng));
                this->add_child("stage" + std::to_string(i + 1) + ".block" + std::to_string(b),
                                blocks_[i].back().get());
            }
        }
    }

    std::array<int64_t, 4> stage_channels() const override { return cfg_.channels; }
    std::array<int64_t, 4> stage_strides() const override { return cfg_.strides; }

    void set_freeze(bool freeze) override {
        for (auto& [name, p] : this->named_params()) p->set_trainable(!freeze);
    }

    FeaturePyramid<T> forward_pyramid(const Var<T>& image) override {
        const auto& s = image->value.shape;
        check(s.size() == 4 && s[1] == 3, "encoder: input must be (N,3,H,W)");
        check(s[2] % 32 == 0 && s[3] % 32 == 0, "encoder: spatial dims must be divisible by 32");
        FeaturePyramid<T> pyr;
        auto x = stem_->forward(image);
        for (int i = 0; i < 4; ++i) {
            if (i > 0) x = merges_[static_cast<size_t>(i - 1)]->forward(x);
            for (auto& b : blocks_[i]) x = b->forward(x);
            pyr[static_cast<size_t>(i)] = x;
        }
        return pyr;
    }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const override {
        stem_->add_flops(h, w, t);
        int64_t sh = stem_->out_dim(h), sw = stem_->out_dim(w);
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                merges_[static_cast<size_t>(i - 1)]->add_flops(sh, sw, t);
                sh /= 2;
                sw /= 2;
            }
            for (auto& b : blocks_[i]) b->add_flops(sh, sw, t);
        }
    }

private:
    EncoderConfig cfg_;
    std::unique_ptr<Conv2d<T>> stem_;
    std::vector<std::unique_ptr<Conv2d<T>>> merges_;
    std::array<std::vector<std::unique_ptr<ResidualBlock<T>>>, 4> blocks_;
};

// Cross-scale decoder: F_4 = d_4; F_i = CBR(CBR([d_i, Up(F_{i+1})])).
template <class T>
class Decoder : public Module<T> {
public:
    class Stage : public Module<T> {
    public:
        Stage(int64_t c_in, int64_t c_skip, RandomStream& rng)
            : reduce_(c_in + c_skip, c_in, 3, 1, rng), refine_(c_in, c_in, 3, 1, rng) {
            this->add_child("reduce", &reduce_);
            this->add_child("refine", &refine_);
        }
        Var<T> forward(const Var<T>& d_i, const Var<T>& upsampled) {
            return refine_.forward(reduce_.forward(ops::concat_channels<T>({d_i, upsampled})));
        }
        void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
            reduce_.add_flops(h, w, t);
            refine_.add_flops(h, w, t);
        }

    private:
        Cbr<T> reduce_;
        Cbr<T> refine_;
    };

    Decoder(const DecoderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
        cfg.validate();
        for (int i = 0; i < 3; ++i) {
            stages_.push_back(std::make_unique<Stage>(cfg.stage_channels[i], cfg.stage_channels[i + 1], rng));
            this->add_child("stage" + std::to_string(i + 1), stages_.back().get());
        }
        predict_ = std::make_unique<Conv2d<T>>(cfg.stage_channels[0], cfg.num_classes, 1, ops::ConvSpec{1, 0, 1}, rng);
        this->add_child("predict", predict_.get());
    }

    const DecoderConfig& config() const { return cfg_; }

    // d[i] at stride strides[i]; returns F_1 at the finest stride.
    Var<T> decode(const std::array<Var<T>, 4>& d) {
        for (int i = 0; i < 4; ++i)
            check(d[static_cast<size_t>(i)]->value.dim(1) == cfg_.stage_channels[static_cast<size_t>(i)],
                  "decoder: stage " + std::to_string(i + 1) + " channel mismatch");
        auto f = d[3];
        for (int i = 2; i >= 0; --i) {
            auto up = ops::upsample_bilinear(f, 2);
            check(up->value.dim(2) == d[static_cast<size_t>(i)]->value.dim(2) &&
                      up->value.dim(3) == d[static_cast<size_t>(i)]->value.dim(3),
                  "decoder: pyramid spatial sizes are inconsistent");
            f = stages_[static_cast<size_t>(i)]->forward(d[static_cast<size_t>(i)], up);
        }
        return f;
    }

    // 1x1 conv to class logits, bilinearly upsampled to input resolution.
    Var<T> predict(const Var<T>& f1) {
        return ops::upsample_bilinear(predict_->forward(f1), cfg_.output_upsample);
    }

    void add_flops(int64_t h1, int64_t w1, FlopsTally& t) const {
        // h1,w1: spatial size of the finest stage
        for (int i = 2; i >= 0; --i) {
            const int64_t hs = h1 >> i, ws = w1 >> i;
            t.resample(cfg_.stage_channels[static_cast<size_t>(i + 1)] * hs * ws);
            stages_[static_cast<size_t>(i)]->add_flops(hs, ws, t);
        }
        predict_->add_flops(h1, w1, t);
        t.resample(cfg_.num_classes * h1 * cfg_.output_upsample * w1 * cfg_.output_upsample);
    }

private:
    DecoderConfig cfg_;
    std::vector<std::unique_ptr<Stage>> stages_;
    std::unique_ptr<Conv2d<T>> predict_;
};

}  // namespace nn

struct ChangeNetConfig {
    EncoderConfig encoder;
    std::string encoder_variant = "attention";  // attention | conv
    bool sadam_enabled = true;
    int64_t neck_channels = 32;  // 0 = change modules run at raw stage widths
    double sadam_gamma_init = 0.0;
    std::string sca_softmax_axis = "m";
    int64_t num_classes = 2;

    static ChangeNetConfig paper() { return ChangeNetConfig{}; }

    static ChangeNetConfig tiny() {
        ChangeNetConfig c;
        c.encoder = EncoderConfig::tiny();
        c.neck_channels = 32;
        return c;
    }

    void validate() const {
        encoder.validate();
        check(encoder_variant == "attention" || encoder_variant == "conv",
              "network config: encoder_variant must be attention or conv");
        check(neck_channels >= 0, "network config: neck_channels must be >= 0");
        if (sadam_enabled) {
            if (neck_channels > 0)
                check(neck_channels % 16 == 0, "network config: neck width must be divisible by 16");
            else
                for (auto c : encoder.channels)
                    check(c % 16 == 0, "network config: stage widths must be divisible by 16 without a neck");
        }
    }

    std::array<int64_t, 4> change_widths() const {
        if (neck_channels > 0) return {neck_channels, neck_channels, neck_channels, neck_channels};
        return encoder.channels;
    }
};

namespace nn {

template <class T>
class ChangeNet : public Module<T> {
public:
    ChangeNet(const ChangeNetConfig& cfg, RandomStream& rng) : cfg_(cfg) {
        cfg.validate();
        if (cfg.encoder_variant == "attention")
            encoder_ = std::make_unique<PyramidEncoder<T>>(cfg.encoder, rng);
        else
            encoder_ = std::make_unique<ConvEncoder<T>>(cfg.encoder, rng);
        this->add_child("encoder", encoder_.get());

        const auto widths = cfg.change_widths();
        if (cfg.neck_channels > 0) {
            for (int i = 0; i < 4; ++i) {
                laterals_.push_back(std::make_unique<Cbr<T>>(cfg.encoder.channels[i], cfg.neck_channels, 1, 1, rng));
                this->add_child("lateral" + std::to_string(i + 1), laterals_.back().get());
            }
        }
        for (int i = 0; i < 4; ++i) {
            if (cfg.sadam_enabled) {
                SadamConfig sc;
                sc.channels = widths[i];
                sc.gamma_init = cfg.sadam_gamma_init;
                sc.softmax_axis = cfg.sca_softmax_axis;
                sadams_.push_back(std::make_unique<Sadam<T>>(sc, rng));
                this->add_child("sadam.stage" + std::to_string(i + 1), sadams_.back().get());
            } else {
                diff_convs_.push_back(std::make_unique<Cbr<T>>(widths[i], widths[i], 3, 1, rng));
                this->add_child("diffconv.stage" + std::to_string(i + 1), diff_convs_.back().get());
            }
        }
        DecoderConfig dc;
        dc.stage_channels = widths;
        dc.num_classes = cfg.num_classes;
        dc.output_upsample = cfg.encoder.strides[0];
        decoder_ = std::make_unique<Decoder<T>>(dc, rng);
        this->add_child("decoder", decoder_.get());

        if (cfg.encoder.freeze_backbone) encoder_->set_freeze(true);
    }

    const ChangeNetConfig& config() const { return cfg_; }
    EncoderBase<T>& encoder() { return *encoder_; }
    Decoder<T>& decoder() { return *decoder_; }
    Sadam<T>& sadam(int stage) { return *sadams_.at(static_cast<size_t>(stage)); }

    // Logits (N,2,H,W) for a batched co-registered pair.
    Var<T> forward(const Var<T>& image_a, const Var<T>& image_b) {
        const auto& s = image_a->value.shape;
        if (cfg_.sadam_enabled)
            check(s[2] == s[3], "network: square inputs required by the attention module, got " + shape_str(s));
        auto [pa, pb] = encoder_->encode_pair(image_a, image_b);
        std::array<Var<T>, 4> d;
        for (int i = 0; i < 4; ++i) {
            Var<T> fa = pa[static_cast<size_t>(i)], fb = pb[static_cast<size_t>(i)];
            if (!laterals_.empty()) {
                fa = laterals_[static_cast<size_t>(i)]->forward(fa);
                fb = laterals_[static_cast<size_t>(i)]->forward(fb);
            }
            if (cfg_.sadam_enabled)
                d[static_cast<size_t>(i)] = sadams_[static_cast<size_t>(i)]->forward(fa, fb);
            else
                d[static_cast<size_t>(i)] = diff_convs_[static_cast<size_t>(i)]->forward(ops::abs_diff(fa, fb));
        }
        return decoder_->predict(decoder_->decode(d));
    }

    void set_freeze(bool freeze) { encoder_->set_freeze(freeze); }

    std::vector<std::pair<std::string, const Tensor<T>*>> export_tensors() {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        for (auto& [name, p] : this->named_params()) out.emplace_back(name, &p->var->value);
        for (auto& [name, b] : this->named_buffers()) out.emplace_back(name, b);
        return out;
    }

    // One pair forward at (h, w) input resolution.
    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        encoder_->add_flops(h, w, t);
        encoder_->add_flops(h, w, t);
        const auto strides = cfg_.encoder.strides;
        for (int i = 0; i < 4; ++i) {
            const int64_t hs = h / strides[static_cast<size_t>(i)], ws = w / strides[static_cast<size_t>(i)];
            if (!laterals_.empty()) {
                laterals_[static_cast<size_t>(i)]->add_flops(hs, ws, t);
                laterals_[static_cast<size_t>(i)]->add_flops(hs, ws, t);
            }
            if (cfg_.sadam_enabled)
                sadams_[static_cast<size_t>(i)]->add_flops(hs, ws, t);
            else
                diff_convs_[static_cast<size_t>(i)]->add_flops(hs, ws, t);
        }
        decoder_->add_flops(h / strides[0], w / strides[0], t);
    }

private:
    ChangeNetConfig cfg_;
    std::unique_ptr<EncoderBase<T>> encoder_;
    std::vector<std::unique_ptr<Cbr<T>>> laterals_;
    std::vector<std::unique_ptr<Sadam<T>>> sadams_;
    std::vector<std::unique_ptr<Cbr<T>>> diff_convs_;
    std::unique_ptr<Decoder<T>> decoder_;
};

}  // namespace nn

// Change probability per pixel: softmax over the two logit channels, change
// class taken from channel 1. Channels sum to one by construction.
template <class T>
Tensor<T> prob_change_map(const Tensor<T>& logits) {
    check(logits.shape.size() == 4 && logits.shape[1] == 2, "prob_change_map: expects (N,2,H,W)");
    const int64_t N = logits.shape[0], HW = logits.shape[2] * logits.shape[3];
    Tensor<T> p({N, logits.shape[2], logits.shape[3]});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < HW; ++i) {
            const T z0 = logits[(n * 2 + 0) * HW + i], z1 = logits[(n * 2 + 1) * HW + i];
            p[n * HW + i] = T(1) / (T(1) + std::exp(z0 - z1));
        }
    return p;
}

template <class T>
Tensor<uint8_t> threshold_mask(const Tensor<T>& prob, T threshold = T(0.5)) {
    Tensor<uint8_t> m(prob.shape);
    for (int64_t i = 0; i < prob.numel(); ++i) m[i] = prob[i] > threshold ? 1 : 0;
    return m;
}

// Restores a network's tensors from a flat archive; names must match.
template <class T>
ImportReport load_network_checkpoint(nn::ChangeNet<T>& net, const std::string& path) {
    auto archive = load_archive<T>(path);
    ImportReport report;
    auto apply = [&](const std::string& name, Tensor<T>& dst) {
        auto it = archive.find(name);
        if (it == archive.end())
            report.missing.push_back(name);
        else if (it->second.shape != dst.shape)
            report.shape_mismatched.push_back(name);
        else {
            dst = it->second;
            report.matched.push_back(name);
        }
    };
    for (auto& [name, p] : net.named_params()) apply(name, p->var->value);
    for (auto& [name, b] : net.named_buffers()) apply(name, *b);
    return report;
}

}  // namespace hsacnet
