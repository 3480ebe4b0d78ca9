#pragma once
// Elementwise and reduction ops with hand-written backward passes.

#include <cmath>

#include "hsacnet/autograd.hpp"

namespace hsacnet {
namespace ops {

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<T> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return attach<T>(std::move(out), {a, b}, [ap = a.get(), bp = b.get()](Node<T>& self) {
        const int64_t n = self.value.numel();
        if (ap->requires_grad) {
            auto& g = ap->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            auto& g = bp->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
    });
}

// c1*a + c2*b with constant coefficients; also used to average tensors.
template <class T>
Var<T> linear_combo(const Var<T>& a, const Var<T>& b, T c1, T c2) {
    check(a->value.same_shape(b->value), "linear_combo: shape mismatch");
    Tensor<T> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = c1 * a->value[i] + c2 * b->value[i];
    return attach<T>(std::move(out), {a, b}, [ap = a.get(), bp = b.get(), c1, c2](Node<T>& self) {
        const int64_t n = self.value.numel();
        if (ap->requires_grad) {
            auto& g = ap->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += c1 * self.grad[i];
        }
        if (bp->requires_grad) {
            auto& g = bp->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += c2 * self.grad[i];
        }
    });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = c * a->value[i];
    return attach<T>(std::move(out), {a}, [ap = a.get(), c](Node<T>& self) {
        if (!ap->requires_grad) return;
        auto& g = ap->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) g[i] += c * self.grad[i];
    });
}

// x * gamma where gamma is a learnable one-element tensor.
template <class T>
Var<T> scale_by(const Var<T>& x, const Var<T>& gamma) {
    check(gamma->value.numel() == 1, "scale_by: gamma must be scalar");
    const T c = gamma->value[0];
    Tensor<T> out(x->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = c * x->value[i];
    return attach<T>(std::move(out), {x, gamma}, [xp = x.get(), gp = gamma.get(), c](Node<T>& self) {
        const int64_t n = self.value.numel();
        if (xp->requires_grad) {
            auto& g = xp->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += c * self.grad[i];
        }
        if (gp->requires_grad) {
            auto& g = gp->ensure_grad();
            T acc = 0;
            for (int64_t i = 0; i < n; ++i) acc += self.grad[i] * xp->value[i];
            g[0] += acc;
        }
    });
}

template <class T>
Var<T> abs_diff(const Var<T>& a, const Var<T>& b) {
    check(a->value.same_shape(b->value), "abs_diff: shape mismatch");
    Tensor<T> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::abs(a->value[i] - b->value[i]);
    return attach<T>(std::move(out), {a, b}, [ap = a.get(), bp = b.get()](Node<T>& self) {
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) {
            T d = ap->value[i] - bp->value[i];
            T s = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
            if (ap->requires_grad) ap->ensure_grad()[i] += s * self.grad[i];
            if (bp->requires_grad) bp->ensure_grad()[i] -= s * self.grad[i];
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] > 0 ? x->value[i] : T(0);
    return attach<T>(std::move(out), {x}, [xp = x.get()](Node<T>& self) {
        if (!xp->requires_grad) return;
        auto& g = xp->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i)
            if (xp->value[i] > 0) g[i] += self.grad[i];
    });
}

// Exact GeLU, x * Phi(x).
template <class T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    const int64_t n = out.numel();
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (int64_t i = 0; i < n; ++i) {
        T v = x->value[i];
        out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    return attach<T>(std::move(out), {x}, [xp = x.get()](Node<T>& self) {
        if (!xp->requires_grad) return;
        auto& g = xp->ensure_grad();
        const int64_t n = self.value.numel();
        const T inv_sqrt2 = T(0.7071067811865475244);
        const T inv_sqrt2pi = T(0.3989422804014326779);
        for (int64_t i = 0; i < n; ++i) {
            T v = xp->value[i];
            T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            g[i] += (cdf + v * pdf) * self.grad[i];
        }
    });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    check(!parts.empty(), "concat_channels: empty input");
    const auto& s0 = parts[0]->value.shape;
    check(s0.size() == 4, "concat_channels: expects NCHW");
    int64_t ctotal = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape;
        check(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
              "concat_channels: incompatible shapes");
        ctotal += s[1];
    }
    const int64_t n = s0[0], hw = s0[2] * s0[3];
    Tensor<T> out({n, ctotal, s0[2], s0[3]});
    int64_t coff = 0;
    for (const auto& p : parts) {
        const int64_t c = p->value.dim(1);
        for (int64_t b = 0; b < n; ++b)
            std::copy(p->value.ptr() + b * c * hw, p->value.ptr() + (b + 1) * c * hw,
                      out.ptr() + (b * ctotal + coff) * hw);
        coff += c;
    }
    std::vector<Var<T>> parents(parts.begin(), parts.end());
    std::vector<Node<T>*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return attach<T>(std::move(out), std::move(parents), [raw, n, ctotal, hw](Node<T>& self) {
        int64_t coff = 0;
        for (Node<T>* p : raw) {
            const int64_t c = p->value.dim(1);
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (int64_t b = 0; b < n; ++b) {
                    const T* src = self.grad.ptr() + (b * ctotal + coff) * hw;
                    T* dst = g.ptr() + b * c * hw;
                    for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                }
            }
            coff += c;
        }
    });
}

// Scalar objective sum(w .* x); the independent-weight trick used by the
// finite-difference harness and loss reductions.
template <class T>
Var<T> weighted_sum(const Var<T>& x, Tensor<T> w) {
    check(x->value.same_shape(w), "weighted_sum: shape mismatch");
    T acc = 0;
    const int64_t n = x->value.numel();
    for (int64_t i = 0; i < n; ++i) acc += x->value[i] * w[i];
    return attach<T>(Tensor<T>::scalar(acc), {x}, [xp = x.get(), w = std::move(w)](Node<T>& self) {
        if (!xp->requires_grad) return;
        auto& g = xp->ensure_grad();
        const T go = self.grad[0];
        for (int64_t i = 0; i < w.numel(); ++i) g[i] += go * w[i];
    });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
    const int64_t n = x->value.numel();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x->value[i];
    acc /= T(n);
    return attach<T>(Tensor<T>::scalar(acc), {x}, [xp = x.get(), n](Node<T>& self) {
        if (!xp->requires_grad) return;
        auto& g = xp->ensure_grad();
        const T go = self.grad[0] / T(n);
        for (int64_t i = 0; i < n; ++i) g[i] += go;
    });
}

}  // namespace ops
}  // namespace hsacnet
