#pragma once
// Central finite-difference gradient checker. The objective is rebuilt from
// scratch for every probe so stateful ops (batch norm in training mode) see
// exactly the perturbed inputs.

#include <cmath>
#include <functional>
#include <vector>

#include "hsacnet/autograd.hpp"
#include "hsacnet/random.hpp"

namespace gradcheck {

using hsacnet::Tensor;
using hsacnet::Var;

struct Result {
    double max_rel_err = 0.0;
    int64_t checked = 0;
};

// leaves: nodes whose gradients are verified (inputs and/or parameters).
// fn: rebuilds the scalar objective from current leaf values.
inline Result check(const std::function<Var<double>()>& fn, const std::vector<Var<double>>& leaves,
                    double eps = 1e-5) {
    for (auto& l : leaves) l->requires_grad = true;

    auto loss = fn();
    for (auto& l : leaves) l->zero_grad();
    hsacnet::backward(loss);

    std::vector<Tensor<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l->grad.numel() ? l->grad : Tensor<double>::zeros(l->value.shape));

    Result res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            const double orig = leaf->value[i];
            leaf->value[i] = orig + eps;
            const double fp = fn()->value[0];
            leaf->value[i] = orig - eps;
            const double fm = fn()->value[0];
            leaf->value[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double ga = analytic[li][i];
            const double rel = std::abs(ga - fd) / std::max({1.0, std::abs(ga), std::abs(fd)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

inline Tensor<double> random_tensor(hsacnet::Shape shape, hsacnet::RandomStream& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
    return t;
}

}  // namespace gradcheck
