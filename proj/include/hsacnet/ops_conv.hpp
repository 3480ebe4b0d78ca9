#pragma once
// Convolution, batch norm, bilinear resize and the pixelwise CE loss.
// Parallel loops only ever write disjoint elements, so results are identical
// for any thread count.

#include <cmath>
#include <cstdint>

#include "hsacnet/autograd.hpp"

namespace hsacnet {
namespace ops {

struct ConvSpec {
    int64_t stride = 1;
    int64_t pad = 0;
    int64_t groups = 1;
};

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvSpec spec) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    check(xs.size() == 4, "conv2d: input must be NCHW, got " + shape_str(xs));
    check(ws.size() == 4, "conv2d: weight must be (Co,Ci/g,kh,kw)");
    const int64_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    const int64_t Co = ws[0], Cig = ws[1], kh = ws[2], kw = ws[3];
    const int64_t g = spec.groups, s = spec.stride, p = spec.pad;
    check(g >= 1 && Ci % g == 0 && Co % g == 0, "conv2d: channels not divisible by groups");
    check(Cig == Ci / g, "conv2d: weight in-channels mismatch");
    check(b->value.numel() == Co, "conv2d: bias size mismatch");
    const int64_t Ho = (H + 2 * p - kh) / s + 1;
    const int64_t Wo = (W + 2 * p - kw) / s + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: empty output");

    Tensor<T> out({N, Co, Ho, Wo});
    const int64_t Cog = Co / g;
    {
        const T* xd = x->value.ptr();
        const T* wd = w->value.ptr();
        const T* bd = b->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * Co > 4)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
                T* oplane = od + (n * Co + co) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) oplane[i] = bd[co];
                const int64_t ci0 = (co / Cog) * Cig;
                for (int64_t c = 0; c < Cig; ++c) {
                    const T* xplane = xd + (n * Ci + ci0 + c) * H * W;
                    for (int64_t u = 0; u < kh; ++u)
                        for (int64_t v = 0; v < kw; ++v) {
                            const T wv = wd[((co * Cig + c) * kh + u) * kw + v];
                            if (wv == T(0)) continue;
                            for (int64_t ho = 0; ho < Ho; ++ho) {
                                const int64_t hi = ho * s - p + u;
                                if (hi < 0 || hi >= H) continue;
                                const T* xrow = xplane + hi * W;
                                T* orow = oplane + ho * Wo;
                                if (s == 1) {
                                    const int64_t lo = std::max<int64_t>(0, p - v);
                                    const int64_t hiw = std::min<int64_t>(Wo, W + p - v);
                                    const T* xr = xrow - p + v;
                                    for (int64_t wo = lo; wo < hiw; ++wo) orow[wo] += wv * xr[wo];
                                } else {
                                    for (int64_t wo = 0; wo < Wo; ++wo) {
                                        const int64_t wi = wo * s - p + v;
                                        if (wi < 0 || wi >= W) continue;
                                        orow[wo] += wv * xrow[wi];
                                    }
                                }
                            }
                        }
                }
            }
    }

    return attach<T>(std::move(out), {x, w, b},
                     [xp = x.get(), wp = w.get(), bp = b.get(), N, Ci, H, W, Co, Cig, kh, kw, g, s, p, Ho,
                      Wo](Node<T>& self) {
        const int64_t Cog = Co / g;
        const T* dy = self.grad.ptr();
        if (xp->requires_grad) {
            T* dx = xp->ensure_grad().ptr();
            const T* wd = wp->value.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * Ci > 4)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    T* dxplane = dx + (n * Ci + ci) * H * W;
                    const int64_t gi = ci / Cig, c = ci % Cig;
                    for (int64_t co = gi * Cog; co < (gi + 1) * Cog; ++co) {
                        const T* dyplane = dy + (n * Co + co) * Ho * Wo;
                        for (int64_t u = 0; u < kh; ++u)
                            for (int64_t v = 0; v < kw; ++v) {
                                const T wv = wd[((co * Cig + c) * kh + u) * kw + v];
                                if (wv == T(0)) continue;
                                for (int64_t hi = 0; hi < H; ++hi) {
                                    const int64_t th = hi + p - u;
                                    if (th < 0 || th % s != 0) continue;
                                    const int64_t ho = th / s;
                                    if (ho >= Ho) continue;
                                    T* dxrow = dxplane + hi * W;
                                    const T* dyrow = dyplane + ho * Wo;
                                    if (s == 1) {
                                        const int64_t lo = std::max<int64_t>(0, v - p);
                                        const int64_t hiw = std::min<int64_t>(W, Wo + v - p);
                                        const T* dyr = dyrow + p - v;
                                        for (int64_t wi = lo; wi < hiw; ++wi) dxrow[wi] += wv * dyr[wi];
                                    } else {
                                        for (int64_t wi = 0; wi < W; ++wi) {
                                            const int64_t tw = wi + p - v;
                                            if (tw < 0 || tw % s != 0) continue;
                                            const int64_t wo = tw / s;
                                            if (wo >= Wo) continue;
                                            dxrow[wi] += wv * dyrow[wo];
                                        }
                                    }
                                }
                            }
                    }
                }
        }
        if (wp->requires_grad) {
            T* dw = wp->ensure_grad().ptr();
            const T* xd = xp->value.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (Co * Cig > 4)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t c = 0; c < Cig; ++c) {
                    const int64_t ci = (co / Cog) * Cig + c;
                    for (int64_t u = 0; u < kh; ++u)
                        for (int64_t v = 0; v < kw; ++v) {
                            T acc = 0;
                            for (int64_t n = 0; n < N; ++n) {
                                const T* xplane = xd + (n * Ci + ci) * H * W;
                                const T* dyplane = dy + (n * Co + co) * Ho * Wo;
                                for (int64_t ho = 0; ho < Ho; ++ho) {
                                    const int64_t hi = ho * s - p + u;
                                    if (hi < 0 || hi >= H) continue;
                                    const T* xrow = xplane + hi * W;
                                    const T* dyrow = dyplane + ho * Wo;
                                    if (s == 1) {
                                        const int64_t lo = std::max<int64_t>(0, p - v);
                                        const int64_t hiw = std::min<int64_t>(Wo, W + p - v);
                                        const T* xr = xrow - p + v;
                                        for (int64_t wo = lo; wo < hiw; ++wo) acc += xr[wo] * dyrow[wo];
                                    } else {
                                        for (int64_t wo = 0; wo < Wo; ++wo) {
                                            const int64_t wi = wo * s - p + v;
                                            if (wi < 0 || wi >= W) continue;
                                            acc += xrow[wi] * dyrow[wo];
                                        }
                                    }
                                }
                            }
                            dw[((co * Cig + c) * kh + u) * kw + v] += acc;
                        }
                }
        }
        if (bp->requires_grad) {
            T* db = bp->ensure_grad().ptr();
            for (int64_t co = 0; co < Co; ++co) {
                T acc = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* dyplane = dy + (n * Co + co) * Ho * Wo;
                    for (int64_t i = 0; i < Ho * Wo; ++i) acc += dyplane[i];
                }
                db[co] += acc;
            }
        }
    });
}

// Channel-wise linear map applied at every spatial site of an NCHW map.
template <class T>
Var<T> linear_nchw(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    check(xs.size() == 4 && ws.size() == 2, "linear_nchw: bad ranks");
    const int64_t N = xs[0], Ci = xs[1], HW = xs[2] * xs[3];
    const int64_t Co = ws[0];
    check(ws[1] == Ci, "linear_nchw: in-features mismatch, input has " + std::to_string(Ci));
    check(b->value.numel() == Co, "linear_nchw: bias size mismatch");

    Tensor<T> out({N, Co, xs[2], xs[3]});
    {
        const T* xd = x->value.ptr();
        const T* wd = w->value.ptr();
        const T* bd = b->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * Co > 4)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
                T* orow = od + (n * Co + co) * HW;
                for (int64_t i = 0; i < HW; ++i) orow[i] = bd[co];
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const T wv = wd[co * Ci + ci];
                    const T* xrow = xd + (n * Ci + ci) * HW;
                    for (int64_t i = 0; i < HW; ++i) orow[i] += wv * xrow[i];
                }
            }
    }
    return attach<T>(std::move(out), {x, w, b},
                     [xp = x.get(), wp = w.get(), bp = b.get(), N, Ci, Co, HW](Node<T>& self) {
        const T* dy = self.grad.ptr();
        if (xp->requires_grad) {
            T* dx = xp->ensure_grad().ptr();
            const T* wd = wp->value.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * Ci > 4)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    T* dxrow = dx + (n * Ci + ci) * HW;
                    for (int64_t co = 0; co < Co; ++co) {
                        const T wv = wd[co * Ci + ci];
                        const T* dyrow = dy + (n * Co + co) * HW;
                        for (int64_t i = 0; i < HW; ++i) dxrow[i] += wv * dyrow[i];
                    }
                }
        }
        if (wp->requires_grad) {
            T* dw = wp->ensure_grad().ptr();
            const T* xd = xp->value.ptr();
#pragma omp parallel for schedule(static) if (Co > 2)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    T acc = 0;
                    for (int64_t n = 0; n < N; ++n) {
                        const T* xrow = xd + (n * Ci + ci) * HW;
                        const T* dyrow = dy + (n * Co + co) * HW;
                        for (int64_t i = 0; i < HW; ++i) acc += xrow[i] * dyrow[i];
                    }
                    dw[co * Ci + ci] += acc;
                }
        }
        if (bp->requires_grad) {
            T* db = bp->ensure_grad().ptr();
            for (int64_t co = 0; co < Co; ++co) {
                T acc = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* dyrow = dy + (n * Co + co) * HW;
                    for (int64_t i = 0; i < HW; ++i) acc += dyrow[i];
                }
                db[co] += acc;
            }
        }
    });
}

// 2D batch norm. In training mode normalizes with current batch statistics
// and updates the running buffers in place; in eval mode applies the frozen
// affine transform. Gradient checks run in eval mode (deterministic,
// batch-independent), but the training-mode backward is exact as well.
template <class T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                   Tensor<T>* running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const auto& xs = x->value.shape;
    check(xs.size() == 4, "batchnorm2d: input must be NCHW");
    const int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    check(gamma->value.numel() == C && beta->value.numel() == C, "batchnorm2d: affine size mismatch");
    check(running_mean->numel() == C && running_var->numel() == C, "batchnorm2d: running stats size mismatch");
    const int64_t M = N * HW;

    Tensor<T> out(xs);
    std::vector<T> mean(C), invstd(C);
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T m = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* row = x->value.ptr() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) m += row[i];
            }
            m /= T(M);
            T v = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* row = x->value.ptr() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    T d = row[i] - m;
                    v += d * d;
                }
            }
            v /= T(M);
            mean[c] = m;
            invstd[c] = T(1) / std::sqrt(v + eps);
            T unbiased = M > 1 ? v * T(M) / T(M - 1) : v;
            (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * m;
            (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[c] = (*running_mean)[c];
            invstd[c] = T(1) / std::sqrt((*running_var)[c] + eps);
        }
    }
#pragma omp parallel for collapse(2) schedule(static) if (N * C > 4)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* xrow = x->value.ptr() + (n * C + c) * HW;
            T* orow = out.ptr() + (n * C + c) * HW;
            const T sc = gamma->value[c] * invstd[c];
            const T sh = beta->value[c] - mean[c] * sc;
            for (int64_t i = 0; i < HW; ++i) orow[i] = xrow[i] * sc + sh;
        }

    return attach<T>(std::move(out), {x, gamma, beta},
                     [xp = x.get(), gp = gamma.get(), bp = beta.get(), mean = std::move(mean),
                      invstd = std::move(invstd), N, C, HW, M, training](Node<T>& self) {
        const T* dy = self.grad.ptr();
        // per-channel reductions
        std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
#pragma omp parallel for schedule(static) if (C > 2)
        for (int64_t c = 0; c < C; ++c) {
            T s1 = 0, s2 = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* dyrow = dy + (n * C + c) * HW;
                const T* xrow = xp->value.ptr() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    s1 += dyrow[i];
                    s2 += dyrow[i] * (xrow[i] - mean[c]) * invstd[c];
                }
            }
            sum_dy[c] = s1;
            sum_dy_xhat[c] = s2;
        }
        if (xp->requires_grad) {
            T* dx = xp->ensure_grad().ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * C > 4)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const T* dyrow = dy + (n * C + c) * HW;
                    const T* xrow = xp->value.ptr() + (n * C + c) * HW;
                    T* dxrow = dx + (n * C + c) * HW;
                    const T gsc = gp->value[c] * invstd[c];
                    if (training) {
                        const T k1 = sum_dy[c] / T(M);
                        const T k2 = sum_dy_xhat[c] / T(M);
                        for (int64_t i = 0; i < HW; ++i) {
                            const T xhat = (xrow[i] - mean[c]) * invstd[c];
                            dxrow[i] += gsc * (dyrow[i] - k1 - xhat * k2);
                        }
                    } else {
                        for (int64_t i = 0; i < HW; ++i) dxrow[i] += gsc * dyrow[i];
                    }
                }
        }
        if (gp->requires_grad) {
            auto& gg = gp->ensure_grad();
            for (int64_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (bp->requires_grad) {
            auto& gb = bp->ensure_grad();
            for (int64_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
        }
    });
}

// Bilinear upsampling by an integer factor (half-pixel centers).
template <class T>
Var<T> upsample_bilinear(const Var<T>& x, int64_t factor) {
    const auto& xs = x->value.shape;
    check(xs.size() == 4, "upsample_bilinear: input must be NCHW");
    check(factor >= 1, "upsample_bilinear: factor must be >= 1");
    const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int64_t Ho = H * factor, Wo = W * factor;

    std::vector<int64_t> y0(Ho), x0(Wo);
    std::vector<T> wy(Ho), wx(Wo);
    auto fill_axis = [factor](int64_t out_len, int64_t in_len, std::vector<int64_t>& i0, std::vector<T>& frac) {
        for (int64_t o = 0; o < out_len; ++o) {
            double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
            if (src < 0) src = 0;
            if (src > static_cast<double>(in_len - 1)) src = static_cast<double>(in_len - 1);
            int64_t lo = static_cast<int64_t>(std::floor(src));
            if (lo > in_len - 2) lo = std::max<int64_t>(0, in_len - 2);
            i0[o] = lo;
            frac[o] = in_len == 1 ? T(0) : static_cast<T>(src - static_cast<double>(lo));
        }
    };
    fill_axis(Ho, H, y0, wy);
    fill_axis(Wo, W, x0, wx);

    Tensor<T> out({N, C, Ho, Wo});
    {
        const T* xd = x->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * C > 4)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const T* xplane = xd + (n * C + c) * H * W;
                T* oplane = od + (n * C + c) * Ho * Wo;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    const int64_t yy = y0[ho], y1 = std::min(yy + 1, H - 1);
                    const T fy = wy[ho];
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        const int64_t xx = x0[wo], x1i = std::min(xx + 1, W - 1);
                        const T fx = wx[wo];
                        const T a = xplane[yy * W + xx], bb = xplane[yy * W + x1i];
                        const T cc = xplane[y1 * W + xx], d = xplane[y1 * W + x1i];
                        oplane[ho * Wo + wo] = (T(1) - fy) * ((T(1) - fx) * a + fx * bb) + fy * ((T(1) - fx) * cc + fx * d);
                    }
                }
            }
    }
    return attach<T>(std::move(out), {x},
                     [xp = x.get(), N, C, H, W, Ho, Wo, y0 = std::move(y0), x0 = std::move(x0), wy = std::move(wy),
                      wx = std::move(wx)](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * C > 4)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                T* dxplane = dx + (n * C + c) * H * W;
                const T* dyplane = dy + (n * C + c) * Ho * Wo;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    const int64_t yy = y0[ho], y1 = std::min(yy + 1, H - 1);
                    const T fy = wy[ho];
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        const int64_t xx = x0[wo], x1i = std::min(xx + 1, W - 1);
                        const T fx = wx[wo];
                        const T g = dyplane[ho * Wo + wo];
                        dxplane[yy * W + xx] += (T(1) - fy) * (T(1) - fx) * g;
                        dxplane[yy * W + x1i] += (T(1) - fy) * fx * g;
                        dxplane[y1 * W + xx] += fy * (T(1) - fx) * g;
                        dxplane[y1 * W + x1i] += fy * fx * g;
                    }
                }
            }
    });
}

// Mean pixelwise cross entropy over K classes. `valid` may be empty (all
// pixels count). Pixels outside the valid mask contribute nothing. Returns
// the scalar loss; *valid_count_out (optional) receives the pixel count.
template <class T>
Var<T> cross_entropy_mean(const Var<T>& logits, const Tensor<int32_t>& target, const Tensor<uint8_t>& valid,
                          int64_t* valid_count_out = nullptr) {
    const auto& ls = logits->value.shape;
    check(ls.size() == 4, "cross_entropy: logits must be NKHW");
    const int64_t N = ls[0], K = ls[1], H = ls[2], W = ls[3];
    check(target.shape == Shape({N, H, W}), "cross_entropy: target shape mismatch");
    const bool masked = valid.numel() > 0;
    if (masked) check(valid.shape == Shape({N, H, W}), "cross_entropy: valid mask shape mismatch");

    int64_t count = 0;
    double acc = 0;
    const T* zd = logits->value.ptr();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < H * W; ++i) {
            if (masked && !valid[n * H * W + i]) continue;
            const int32_t t = target[n * H * W + i];
            check(t >= 0 && t < K, "cross_entropy: target class out of range");
            T zmax = zd[(n * K) * H * W + i];
            for (int64_t k = 1; k < K; ++k) zmax = std::max(zmax, zd[(n * K + k) * H * W + i]);
            T se = 0;
            for (int64_t k = 0; k < K; ++k) se += std::exp(zd[(n * K + k) * H * W + i] - zmax);
            acc += static_cast<double>(std::log(se) + zmax - zd[(n * K + t) * H * W + i]);
            ++count;
        }
    if (valid_count_out) *valid_count_out = count;
    const T loss = count > 0 ? static_cast<T>(acc / static_cast<double>(count)) : T(0);

    Tensor<uint8_t> vcopy = valid;
    Tensor<int32_t> tcopy = target;
    return attach<T>(Tensor<T>::scalar(loss), {logits},
                     [lp = logits.get(), tcopy = std::move(tcopy), vcopy = std::move(vcopy), N, K, H, W, count,
                      masked](Node<T>& self) {
        if (!lp->requires_grad || count == 0) return;
        T* dz = lp->ensure_grad().ptr();
        const T* zd = lp->value.ptr();
        const T go = self.grad[0] / T(count);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < H * W; ++i) {
                if (masked && !vcopy[n * H * W + i]) continue;
                const int32_t t = tcopy[n * H * W + i];
                T zmax = zd[(n * K) * H * W + i];
                for (int64_t k = 1; k < K; ++k) zmax = std::max(zmax, zd[(n * K + k) * H * W + i]);
                T se = 0;
                for (int64_t k = 0; k < K; ++k) se += std::exp(zd[(n * K + k) * H * W + i] - zmax);
                for (int64_t k = 0; k < K; ++k) {
                    const T pk = std::exp(zd[(n * K + k) * H * W + i] - zmax) / se;
                    dz[(n * K + k) * H * W + i] += go * (pk - (k == t ? T(1) : T(0)));
                }
            }
    });
}

}  // namespace ops
}  // namespace hsacnet
