#pragma once
// Scale-aware differential attention: four group-convolution branches with
// growing receptive fields, absolute differencing, spatial-channel attention
// per branch, and residual fusion back to the stage width.

#include "hsacnet/nn.hpp"

namespace hsacnet {

struct SadamConfig {
    int64_t channels = 32;
    double gamma_init = 0.0;
    std::string softmax_axis = "m";  // normalization axis of the attention matrix

    void validate() const {
        check(channels % 16 == 0,
              "sadam config: channels must be divisible by 16, got " + std::to_string(channels));
        check(softmax_axis == "m" || softmax_axis == "n", "sadam config: softmax_axis must be 'm' or 'n'");
    }
};

namespace nn {

// Attention over channel pairs within the row/column slices of a square map,
// added back with a learnable gain: d + gamma * F.
//
// Slices are stacked to (N*(H+W), C, S); per slice the logits L[m,n] = Q_m.K_n
// and the weights normalize over m (axis "m", as written) or n. Because
// Q = K the logit matrix is symmetric and the m-normalized matrix is exactly
// the transpose of a row softmax, so output channel n aggregates
// sum_m A[m,n] * V_m either way.
template <class T>
Var<T> sca_attention(const Var<T>& d, const Var<T>& gamma, const std::string& axis = "m") {
    const auto& s = d->value.shape;
    check(s.size() == 4, "sca_attention: expects NCHW");
    check(s[2] == s[3], "sca_attention: requires a square map, got " + shape_str(s));
    const int64_t S = s[2];
    auto slices = ops::hw_slice_stack(d);                 // (N*2S, C, S), Q = K = V
    auto logits = ops::bmm(slices, slices, false, true);  // (N*2S, C, C)
    auto attn = ops::softmax_lastdim(logits);             // row-normalized
    // axis "m": O = softmax_rows(L) . V ; axis "n": O = softmax_rows(L)^T . V
    auto mixed = axis == "m" ? ops::bmm(attn, slices) : ops::bmm(attn, slices, true, false);
    auto f = ops::hw_scatter_avg(mixed, S);
    return ops::add(d, ops::scale_by(f, gamma));
}

// Row-softmax attention matrix for one map; entry [slice][n][m] equals the
// A_{m,n} weight applied to channel m when producing output channel n.
template <class T>
Tensor<T> sca_attention_rows(const Tensor<T>& d) {
    NoGrad ng;
    auto dv = make_var(d);
    auto slices = ops::hw_slice_stack(dv);
    auto attn = ops::softmax_lastdim(ops::bmm(slices, slices, false, true));
    return attn->value;
}

template <class T>
struct ChangeFeatureSet {
    std::array<std::pair<Var<T>, Var<T>>, 4> branch_pairs;  // (C^A_j, C^B_j)
    std::array<Var<T>, 4> diffs;                            // D_j
    std::array<Var<T>, 4> attended;                         // D^SCA_j
    Var<T> concat;                                          // D^cat, 4C channels
    Var<T> residual;                                        // D^res
    Var<T> output;                                          // refined change feature
};

template <class T>
class Sadam : public Module<T> {
public:
    Sadam(const SadamConfig& cfg, RandomStream& rng) : cfg_(cfg) {
        cfg.validate();
        const int64_t c = cfg.channels;
        for (int j = 1; j <= 4; ++j) {
            const int64_t k = 2 * j - 1;
            const int64_t g = int64_t(1) << j;
            branches_.push_back(std::make_unique<Cbr<T>>(c, c, k, g, rng));
            this->add_child("branch" + std::to_string(j), branches_.back().get());
            diffs_.push_back(std::make_unique<Cbr<T>>(c, c, 3, 1, rng));
            this->add_child("diff" + std::to_string(j), diffs_.back().get());
        }
        res1_ = std::make_unique<Cbr<T>>(c, c, 3, 1, rng);
        res2_ = std::make_unique<Cbr<T>>(c, c, 3, 1, rng);
        reduce_ = std::make_unique<Cbr<T>>(4 * c, c, 1, 1, rng);
        out_ = std::make_unique<Cbr<T>>(c, c, 1, 1, rng);
        this->add_child("res1", res1_.get());
        this->add_child("res2", res2_.get());
        this->add_child("reduce", reduce_.get());
        this->add_child("out", out_.get());
        gamma_ = &this->add_param("gamma", Tensor<T>::scalar(static_cast<T>(cfg.gamma_init)));
    }

    const SadamConfig& config() const { return cfg_; }
    Var<T> gamma() { return gamma_->var; }

    // CBR_{k,g} with k = 2j-1, g = 2^j applied with shared weights to both
    // stage features; j in 1..4.
    std::pair<Var<T>, Var<T>> branch_features(const Var<T>& c_a, const Var<T>& c_b, int j) {
        check(j >= 1 && j <= 4, "branch_features: branch index out of range");
        check(c_a->value.shape == c_b->value.shape, "branch_features: shape mismatch");
        auto& cbr = *branches_[static_cast<size_t>(j - 1)];
        return {cbr.forward(c_a), cbr.forward(c_b)};
    }

    // D_j = CBR_3(|ca_j - cb_j|)
    Var<T> branch_difference(const Var<T>& ca_j, const Var<T>& cb_j, int j) {
        check(ca_j->value.shape == cb_j->value.shape, "branch_difference: shape mismatch");
        return diffs_[static_cast<size_t>(j - 1)]->forward(ops::abs_diff(ca_j, cb_j));
    }

    Var<T> sca(const Var<T>& d_j) { return sca_attention(d_j, gamma_->var, cfg_.softmax_axis); }

    // D^cat = [attended...]; D^res = CBR_3(CBR_3(|c_a - c_b|));
    // output = CBR_1(D^res + CBR_1(D^cat)).
    Var<T> fuse(const std::array<Var<T>, 4>& attended, const Var<T>& c_a, const Var<T>& c_b, Var<T>* concat_out = nullptr,
                Var<T>* residual_out = nullptr) {
        auto cat = ops::concat_channels<T>({attended[0], attended[1], attended[2], attended[3]});
        auto res = res2_->forward(res1_->forward(ops::abs_diff(c_a, c_b)));
        if (concat_out) *concat_out = cat;
        if (residual_out) *residual_out = res;
        return out_->forward(ops::add(res, reduce_->forward(cat)));
    }

    ChangeFeatureSet<T> forward_detailed(const Var<T>& c_a, const Var<T>& c_b) {
        const auto& s = c_a->value.shape;
        check(s.size() == 4 && s[1] == cfg_.channels,
              "sadam: input channels must equal configured width, got " + shape_str(s));
        check(s[2] == s[3], "sadam: requires square feature maps, got " + shape_str(s));
        ChangeFeatureSet<T> out;
        for (int j = 1; j <= 4; ++j) {
            auto pair = branch_features(c_a, c_b, j);
            auto d = branch_difference(pair.first, pair.second, j);
            out.attended[static_cast<size_t>(j - 1)] = sca(d);
            out.branch_pairs[static_cast<size_t>(j - 1)] = pair;
            out.diffs[static_cast<size_t>(j - 1)] = d;
        }
        out.output = fuse(out.attended, c_a, c_b, &out.concat, &out.residual);
        return out;
    }

    Var<T> forward(const Var<T>& c_a, const Var<T>& c_b) { return forward_detailed(c_a, c_b).output; }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        const int64_t c = cfg_.channels;
        for (int j = 0; j < 4; ++j) {
            branches_[static_cast<size_t>(j)]->add_flops(h, w, t);
            branches_[static_cast<size_t>(j)]->add_flops(h, w, t);  // both temporal features
            diffs_[static_cast<size_t>(j)]->add_flops(h, w, t);
            // attention per branch: logits and channel mix over h+w slices
            t.matmul(h + w, c, c, h);
            t.matmul(h + w, c, h, c);
            t.act((h + w) * c * c);  // softmax, excluded from headline
        }
        res1_->add_flops(h, w, t);
        res2_->add_flops(h, w, t);
        reduce_->add_flops(h, w, t);
        out_->add_flops(h, w, t);
    }

private:
    SadamConfig cfg_;
    std::vector<std::unique_ptr<Cbr<T>>> branches_;
    std::vector<std::unique_ptr<Cbr<T>>> diffs_;
    std::unique_ptr<Cbr<T>> res1_, res2_, reduce_, out_;
    Param<T>* gamma_ = nullptr;
};

}  // namespace nn
}  // namespace hsacnet
