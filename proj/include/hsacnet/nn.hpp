#pragma once
// Module base with a named parameter/buffer registry, plus the shared layer
// building blocks (conv, batch norm, linear, layer norm, CBR).

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hsacnet/complexity.hpp"
#include "hsacnet/ops_attn.hpp"
#include "hsacnet/ops_basic.hpp"
#include "hsacnet/ops_conv.hpp"
#include "hsacnet/random.hpp"

namespace hsacnet {
namespace nn {

template <class T>
struct Param {
    std::string name;  // leaf name within the owning module
    Var<T> var;
    bool trainable = true;

    void set_trainable(bool t) {
        trainable = t;
        var->requires_grad = t;
    }
};

template <class T>
class Module {
public:
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    virtual ~Module() = default;

    // Named views over the whole subtree.
    void named_params(const std::string& prefix, std::vector<std::pair<std::string, Param<T>*>>& out) {
        for (auto& p : params_) out.emplace_back(join(prefix, p->name), p.get());
        for (auto& [n, m] : children_) m->named_params(join(prefix, n), out);
    }
    void named_buffers(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        for (auto& [n, t] : buffers_) out.emplace_back(join(prefix, n), t);
        for (auto& [n, m] : children_) m->named_buffers(join(prefix, n), out);
    }
    std::vector<std::pair<std::string, Param<T>*>> named_params(const std::string& prefix = "") {
        std::vector<std::pair<std::string, Param<T>*>> out;
        named_params(prefix, out);
        return out;
    }
    std::vector<std::pair<std::string, Tensor<T>*>> named_buffers(const std::string& prefix = "") {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        named_buffers(prefix, out);
        return out;
    }
    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& [n, p] : named_params()) out.push_back(p);
        return out;
    }

    void set_training(bool training) {
        training_ = training;
        for (auto& [n, m] : children_) m->set_training(training);
    }
    bool training() const { return training_; }

    void zero_grads() {
        for (auto* p : params()) p->var->zero_grad();
    }

    int64_t param_count(bool trainable_only = false) {
        int64_t n = 0;
        for (auto* p : params())
            if (!trainable_only || p->trainable) n += p->var->value.numel();
        return n;
    }

protected:
    static std::string join(const std::string& a, const std::string& b) {
        return a.empty() ? b : (b.empty() ? a : a + "." + b);
    }

    Param<T>& add_param(const std::string& name, Tensor<T> init, bool trainable = true) {
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->var = std::make_shared<Node<T>>(std::move(init));
        p->var->requires_grad = trainable;
        p->trainable = trainable;
        params_.push_back(std::move(p));
        return *params_.back();
    }
    void add_buffer(const std::string& name, Tensor<T>* t) { buffers_.emplace_back(name, t); }
    void add_child(const std::string& name, Module<T>* m) { children_.emplace_back(name, m); }

    bool training_ = true;

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
    std::vector<std::pair<std::string, Module<T>*>> children_;
};

template <class T>
using FeaturePyramid = std::array<Var<T>, 4>;

// Interface shared by the attention encoder and the conv-baseline variant so
// the network, trainer and profiler treat them interchangeably.
template <class T>
class EncoderBase : public Module<T> {
public:
    virtual FeaturePyramid<T> forward_pyramid(const Var<T>& image) = 0;
    virtual void set_freeze(bool freeze) = 0;
    virtual std::array<int64_t, 4> stage_channels() const = 0;
    virtual std::array<int64_t, 4> stage_strides() const = 0;
    virtual void add_flops(int64_t h, int64_t w, FlopsTally& t) const = 0;

    std::pair<FeaturePyramid<T>, FeaturePyramid<T>> encode_pair(const Var<T>& image_a, const Var<T>& image_b) {
        check(image_a->value.shape == image_b->value.shape, "encoder: image pair must share a shape");
        auto pa = forward_pyramid(image_a);
        auto pb = forward_pyramid(image_b);
        return {pa, pb};
    }
};

template <class T>
Tensor<T> he_normal(Shape shape, int64_t fan_in, RandomStream& rng) {
    Tensor<T> t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
    return t;
}

template <class T>
Tensor<T> normal_init(Shape shape, double std, RandomStream& rng) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
    return t;
}

template <class T>
class Conv2d : public Module<T> {
public:
    Conv2d(int64_t ci, int64_t co, int64_t k, ops::ConvSpec spec, RandomStream& rng)
        : spec_(spec),
          w_(this->add_param("weight", he_normal<T>({co, ci / spec.groups, k, k}, (ci / spec.groups) * k * k, rng))),
          b_(this->add_param("bias", Tensor<T>::zeros({co}))) {}

    Var<T> forward(const Var<T>& x) { return ops::conv2d(x, w_.var, b_.var, spec_); }

    const ops::ConvSpec& spec() const { return spec_; }
    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

    int64_t out_channels() const { return w_.var->value.dim(0); }
    int64_t in_channels() const { return w_.var->value.dim(1) * spec_.groups; }
    int64_t kernel() const { return w_.var->value.dim(2); }
    int64_t out_dim(int64_t d) const { return (d + 2 * spec_.pad - kernel()) / spec_.stride + 1; }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        t.conv(kernel(), in_channels(), out_channels(), spec_.groups, out_dim(h), out_dim(w));
    }

private:
    ops::ConvSpec spec_;
    Param<T>& w_;
    Param<T>& b_;
};

template <class T>
class BatchNorm2d : public Module<T> {
public:
    explicit BatchNorm2d(int64_t c)
        : gamma_(this->add_param("weight", Tensor<T>::full({c}, T(1)))),
          beta_(this->add_param("bias", Tensor<T>::zeros({c}))),
          running_mean_(Tensor<T>::zeros({c})),
          running_var_(Tensor<T>::full({c}, T(1))) {
        this->add_buffer("running_mean", &running_mean_);
        this->add_buffer("running_var", &running_var_);
    }

    Var<T> forward(const Var<T>& x) {
        return ops::batchnorm2d(x, gamma_.var, beta_.var, &running_mean_, &running_var_, this->training());
    }

    void add_flops(int64_t c, int64_t h, int64_t w, FlopsTally& t) const { t.norm(c * h * w); }

private:
    Param<T>& gamma_;
    Param<T>& beta_;
    Tensor<T> running_mean_, running_var_;
};

// Conv + BatchNorm + ReLU, the CBR_{k,g} unit.
template <class T>
class Cbr : public Module<T> {
public:
    Cbr(int64_t ci, int64_t co, int64_t k, int64_t groups, RandomStream& rng)
        : conv_(ci, co, k, ops::ConvSpec{1, (k - 1) / 2, groups}, rng), bn_(co) {
        this->add_child("conv", &conv_);
        this->add_child("bn", &bn_);
    }

    Var<T> forward(const Var<T>& x) { return ops::relu(bn_.forward(conv_.forward(x))); }

    void add_flops(int64_t h, int64_t w, FlopsTally& t) const {
        conv_.add_flops(h, w, t);
        const int64_t ho = conv_.out_dim(h), wo = conv_.out_dim(w);
        bn_.add_flops(conv_.out_channels(), ho, wo, t);
        t.act(conv_.out_channels() * ho * wo);
    }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
};

// Linear layer; `tokens` selects (B,L,C) vs per-pixel NCHW application.
template <class T>
class Linear : public Module<T> {
public:
    Linear(int64_t ci, int64_t co, RandomStream& rng, double init_std = -1.0, bool zero_init = false)
        : w_(this->add_param("weight", zero_init ? Tensor<T>::zeros({co, ci})
                                                 : (init_std > 0 ? normal_init<T>({co, ci}, init_std, rng)
                                                                 : he_normal<T>({co, ci}, ci, rng)))),
          b_(this->add_param("bias", Tensor<T>::zeros({co}))) {}

    Var<T> forward_tokens(const Var<T>& x) { return ops::linear_tokens(x, w_.var, b_.var); }
    Var<T> forward_nchw(const Var<T>& x) { return ops::linear_nchw(x, w_.var, b_.var); }

    int64_t in_features() const { return w_.var->value.dim(1); }
    int64_t out_features() const { return w_.var->value.dim(0); }
    void add_flops(int64_t positions, FlopsTally& t) const { t.linear(in_features(), out_features(), positions); }

private:
    Param<T>& w_;
    Param<T>& b_;
};

template <class T>
class LayerNorm : public Module<T> {
public:
    explicit LayerNorm(int64_t c)
        : gamma_(this->add_param("weight", Tensor<T>::full({c}, T(1)))),
          beta_(this->add_param("bias", Tensor<T>::zeros({c}))) {}

    Var<T> forward(const Var<T>& x) { return ops::layernorm_tokens(x, gamma_.var, beta_.var); }

private:
    Param<T>& gamma_;
    Param<T>& beta_;
};

}  // namespace nn
}  // namespace hsacnet
