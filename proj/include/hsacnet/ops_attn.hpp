#pragma once
// Token-space ops: linear layers, layer norm, batched matmul, softmax, head
// splitting, window partitioning, and the slice/stack ops used by the
// spatial-channel attention.

#include <cmath>

#include "hsacnet/autograd.hpp"

namespace hsacnet {
namespace ops {

// c (M,N) += op(a) * op(b); op is optional transpose. All matrices row-major.
template <class T>
void matmul_acc(const T* a, const T* b, T* c, int64_t M, int64_t N, int64_t K, bool transA, bool transB) {
    if (!transA && !transB) {  // a (M,K) b (K,N)
        for (int64_t m = 0; m < M; ++m) {
            T* crow = c + m * N;
            for (int64_t k = 0; k < K; ++k) {
                const T av = a[m * K + k];
                if (av == T(0)) continue;
                const T* brow = b + k * N;
                for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
            }
        }
    } else if (!transA && transB) {  // a (M,K) b (N,K)
        for (int64_t m = 0; m < M; ++m) {
            const T* arow = a + m * K;
            T* crow = c + m * N;
            for (int64_t n = 0; n < N; ++n) {
                const T* brow = b + n * K;
                T acc = 0;
                for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
                crow[n] += acc;
            }
        }
    } else if (transA && !transB) {  // a (K,M) b (K,N)
        for (int64_t k = 0; k < K; ++k) {
            const T* arow = a + k * M;
            const T* brow = b + k * N;
            for (int64_t m = 0; m < M; ++m) {
                const T av = arow[m];
                if (av == T(0)) continue;
                T* crow = c + m * N;
                for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
            }
        }
    } else {  // a (K,M) b (N,K)
        for (int64_t m = 0; m < M; ++m) {
            T* crow = c + m * N;
            for (int64_t n = 0; n < N; ++n) {
                const T* brow = b + n * K;
                T acc = 0;
                for (int64_t k = 0; k < K; ++k) acc += a[k * M + m] * brow[k];
                crow[n] += acc;
            }
        }
    }
}

// Batched matmul: out[i] = op(a[i]) * op(b[i]) over the leading dim.
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transA = false, bool transB = false) {
    const auto& as = a->value.shape;
    const auto& bs = b->value.shape;
    check(as.size() == 3 && bs.size() == 3 && as[0] == bs[0], "bmm: expects matching (B,·,·) tensors");
    const int64_t B = as[0];
    const int64_t M = transA ? as[2] : as[1];
    const int64_t Ka = transA ? as[1] : as[2];
    const int64_t Kb = transB ? bs[2] : bs[1];
    const int64_t N = transB ? bs[1] : bs[2];
    check(Ka == Kb, "bmm: inner dimension mismatch");
    const int64_t K = Ka;

    Tensor<T> out({B, M, N});
    {
        const T* ad = a->value.ptr();
        const T* bd = b->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for schedule(static) if (B > 2)
        for (int64_t i = 0; i < B; ++i)
            matmul_acc(ad + i * as[1] * as[2], bd + i * bs[1] * bs[2], od + i * M * N, M, N, K, transA, transB);
    }
    return attach<T>(std::move(out), {a, b},
                     [ap = a.get(), bp = b.get(), B, M, N, K, transA, transB, as, bs](Node<T>& self) {
        const T* dy = self.grad.ptr();
        if (ap->requires_grad) {
            T* da = ap->ensure_grad().ptr();
            const T* bd = bp->value.ptr();
#pragma omp parallel for schedule(static) if (B > 2)
            for (int64_t i = 0; i < B; ++i) {
                const T* dyi = dy + i * M * N;
                const T* bi = bd + i * bs[1] * bs[2];
                T* dai = da + i * as[1] * as[2];
                if (!transA) {
                    // dA = dY * op(B)^T
                    matmul_acc(dyi, bi, dai, M, K, N, false, !transB);
                } else {
                    // dA = op(B) * dY^T, stored (K,M)
                    matmul_acc(bi, dyi, dai, K, M, N, transB, true);
                }
            }
        }
        if (bp->requires_grad) {
            T* db = bp->ensure_grad().ptr();
            const T* ad = ap->value.ptr();
#pragma omp parallel for schedule(static) if (B > 2)
            for (int64_t i = 0; i < B; ++i) {
                const T* dyi = dy + i * M * N;
                const T* ai = ad + i * as[1] * as[2];
                T* dbi = db + i * bs[1] * bs[2];
                if (!transB) {
                    // dB = op(A)^T * dY
                    matmul_acc(ai, dyi, dbi, K, N, M, !transA, false);
                } else {
                    // dB = dY^T * op(A), stored (N,K)
                    matmul_acc(dyi, ai, dbi, N, K, M, true, transA);
                }
            }
        }
    });
}

template <class T>
Var<T> softmax_lastdim(const Var<T>& x) {
    const auto& xs = x->value.shape;
    check(!xs.empty(), "softmax: empty shape");
    const int64_t L = xs.back();
    const int64_t R = x->value.numel() / L;
    Tensor<T> out(xs);
    {
        const T* xd = x->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for schedule(static) if (R > 16)
        for (int64_t r = 0; r < R; ++r) {
            const T* row = xd + r * L;
            T* orow = od + r * L;
            T mx = row[0];
            for (int64_t i = 1; i < L; ++i) mx = std::max(mx, row[i]);
            T se = 0;
            for (int64_t i = 0; i < L; ++i) {
                orow[i] = std::exp(row[i] - mx);
                se += orow[i];
            }
            const T inv = T(1) / se;
            for (int64_t i = 0; i < L; ++i) orow[i] *= inv;
        }
    }
    return attach<T>(std::move(out), {x}, [xp = x.get(), R, L](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* y = self.value.ptr();
        const T* dy = self.grad.ptr();
#pragma omp parallel for schedule(static) if (R > 16)
        for (int64_t r = 0; r < R; ++r) {
            const T* yr = y + r * L;
            const T* gr = dy + r * L;
            T* dxr = dx + r * L;
            T dot = 0;
            for (int64_t i = 0; i < L; ++i) dot += gr[i] * yr[i];
            for (int64_t i = 0; i < L; ++i) dxr[i] += yr[i] * (gr[i] - dot);
        }
    });
}

// Linear layer on token tensors (B,L,Ci) -> (B,L,Co); weight stored (Co,Ci).
template <class T>
Var<T> linear_tokens(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    check(xs.size() == 3 && ws.size() == 2, "linear_tokens: bad ranks");
    const int64_t R = xs[0] * xs[1], Ci = xs[2], Co = ws[0];
    check(ws[1] == Ci, "linear_tokens: in-features mismatch");
    check(b->value.numel() == Co, "linear_tokens: bias size mismatch");

    Tensor<T> out({xs[0], xs[1], Co});
    {
        const T* xd = x->value.ptr();
        const T* wd = w->value.ptr();
        const T* bd = b->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for schedule(static) if (R > 16)
        for (int64_t r = 0; r < R; ++r) {
            const T* xrow = xd + r * Ci;
            T* orow = od + r * Co;
            for (int64_t co = 0; co < Co; ++co) {
                const T* wrow = wd + co * Ci;
                T acc = bd[co];
                for (int64_t ci = 0; ci < Ci; ++ci) acc += xrow[ci] * wrow[ci];
                orow[co] = acc;
            }
        }
    }
    return attach<T>(std::move(out), {x, w, b}, [xp = x.get(), wp = w.get(), bp = b.get(), R, Ci, Co](Node<T>& self) {
        const T* dy = self.grad.ptr();
        if (xp->requires_grad) {
            T* dx = xp->ensure_grad().ptr();
            const T* wd = wp->value.ptr();
#pragma omp parallel for schedule(static) if (R > 16)
            for (int64_t r = 0; r < R; ++r) {
                const T* dyrow = dy + r * Co;
                T* dxrow = dx + r * Ci;
                for (int64_t co = 0; co < Co; ++co) {
                    const T g = dyrow[co];
                    if (g == T(0)) continue;
                    const T* wrow = wd + co * Ci;
                    for (int64_t ci = 0; ci < Ci; ++ci) dxrow[ci] += g * wrow[ci];
                }
            }
        }
        if (wp->requires_grad) {
            T* dw = wp->ensure_grad().ptr();
            const T* xd = xp->value.ptr();
#pragma omp parallel for schedule(static) if (Co > 2)
            for (int64_t co = 0; co < Co; ++co) {
                T* dwrow = dw + co * Ci;
                for (int64_t r = 0; r < R; ++r) {
                    const T g = dy[r * Co + co];
                    if (g == T(0)) continue;
                    const T* xrow = xd + r * Ci;
                    for (int64_t ci = 0; ci < Ci; ++ci) dwrow[ci] += g * xrow[ci];
                }
            }
        }
        if (bp->requires_grad) {
            T* db = bp->ensure_grad().ptr();
            for (int64_t co = 0; co < Co; ++co) {
                T acc = 0;
                for (int64_t r = 0; r < R; ++r) acc += dy[r * Co + co];
                db[co] += acc;
            }
        }
    });
}

// Layer norm over the channel (last) dim of token tensors.
template <class T>
Var<T> layernorm_tokens(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6)) {
    const auto& xs = x->value.shape;
    check(xs.size() == 3, "layernorm: expects (B,L,C)");
    const int64_t R = xs[0] * xs[1], C = xs[2];
    check(gamma->value.numel() == C && beta->value.numel() == C, "layernorm: affine size mismatch");

    Tensor<T> out(xs);
    std::vector<T> mean(R), invstd(R);
    {
        const T* xd = x->value.ptr();
        T* od = out.ptr();
#pragma omp parallel for schedule(static) if (R > 16)
        for (int64_t r = 0; r < R; ++r) {
            const T* row = xd + r * C;
            T m = 0;
            for (int64_t i = 0; i < C; ++i) m += row[i];
            m /= T(C);
            T v = 0;
            for (int64_t i = 0; i < C; ++i) {
                T d = row[i] - m;
                v += d * d;
            }
            v /= T(C);
            const T is = T(1) / std::sqrt(v + eps);
            mean[r] = m;
            invstd[r] = is;
            T* orow = od + r * C;
            for (int64_t i = 0; i < C; ++i) orow[i] = (row[i] - m) * is * gamma->value[i] + beta->value[i];
        }
    }
    return attach<T>(std::move(out), {x, gamma, beta},
                     [xp = x.get(), gp = gamma.get(), bp = beta.get(), R, C, mean = std::move(mean),
                      invstd = std::move(invstd)](Node<T>& self) {
        const T* dy = self.grad.ptr();
        const T* xd = xp->value.ptr();
        if (xp->requires_grad) {
            T* dx = xp->ensure_grad().ptr();
#pragma omp parallel for schedule(static) if (R > 16)
            for (int64_t r = 0; r < R; ++r) {
                const T* xrow = xd + r * C;
                const T* gr = dy + r * C;
                T* dxr = dx + r * C;
                const T m = mean[r], is = invstd[r];
                T s1 = 0, s2 = 0;
                for (int64_t i = 0; i < C; ++i) {
                    const T xhat = (xrow[i] - m) * is;
                    const T dxhat = gr[i] * gp->value[i];
                    s1 += dxhat;
                    s2 += dxhat * xhat;
                }
                s1 /= T(C);
                s2 /= T(C);
                for (int64_t i = 0; i < C; ++i) {
                    const T xhat = (xrow[i] - m) * is;
                    const T dxhat = gr[i] * gp->value[i];
                    dxr[i] += is * (dxhat - s1 - xhat * s2);
                }
            }
        }
        if (gp->requires_grad || bp->requires_grad) {
            T* dg = gp->requires_grad ? gp->ensure_grad().ptr() : nullptr;
            T* db = bp->requires_grad ? bp->ensure_grad().ptr() : nullptr;
            for (int64_t r = 0; r < R; ++r) {
                const T* xrow = xd + r * C;
                const T* gr = dy + r * C;
                for (int64_t i = 0; i < C; ++i) {
                    if (dg) dg[i] += gr[i] * (xrow[i] - mean[r]) * invstd[r];
                    if (db) db[i] += gr[i];
                }
            }
        }
    });
}

// One of q/k/v from a fused (B,L,3*d) projection, reshaped to (B*heads, L, dh).
template <class T>
Var<T> qkv_slice(const Var<T>& x, int which, int64_t heads) {
    const auto& xs = x->value.shape;
    check(xs.size() == 3 && xs[2] % 3 == 0, "qkv_slice: expects (B,L,3d)");
    const int64_t B = xs[0], L = xs[1], d = xs[2] / 3;
    check(d % heads == 0, "qkv_slice: heads must divide attention dim");
    const int64_t dh = d / heads;
    Tensor<T> out({B * heads, L, dh});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
    for (int64_t bq = 0; bq < B; ++bq)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t l = 0; l < L; ++l) {
                const T* src = xd + (bq * L + l) * 3 * d + which * d + h * dh;
                T* dst = od + ((bq * heads + h) * L + l) * dh;
                for (int64_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
    return attach<T>(std::move(out), {x}, [xp = x.get(), which, heads, B, L, d, dh](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t bq = 0; bq < B; ++bq)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t l = 0; l < L; ++l) {
                    T* dst = dx + (bq * L + l) * 3 * d + which * d + h * dh;
                    const T* src = dy + ((bq * heads + h) * L + l) * dh;
                    for (int64_t j = 0; j < dh; ++j) dst[j] += src[j];
                }
    });
}

// (B*heads, L, dh) -> (B, L, heads*dh)
template <class T>
Var<T> merge_heads(const Var<T>& x, int64_t heads) {
    const auto& xs = x->value.shape;
    check(xs.size() == 3 && xs[0] % heads == 0, "merge_heads: bad shape");
    const int64_t B = xs[0] / heads, L = xs[1], dh = xs[2];
    Tensor<T> out({B, L, heads * dh});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
    for (int64_t bq = 0; bq < B; ++bq)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t l = 0; l < L; ++l) {
                const T* src = xd + ((bq * heads + h) * L + l) * dh;
                T* dst = od + (bq * L + l) * heads * dh + h * dh;
                for (int64_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
    return attach<T>(std::move(out), {x}, [xp = x.get(), B, L, dh, heads](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t bq = 0; bq < B; ++bq)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t l = 0; l < L; ++l) {
                    T* dst = dx + ((bq * heads + h) * L + l) * dh;
                    const T* src = dy + (bq * L + l) * heads * dh + h * dh;
                    for (int64_t j = 0; j < dh; ++j) dst[j] += src[j];
                }
    });
}

// (N,C,H,W) -> (N*nh*nw, win*win, C) non-overlapping windows of tokens.
template <class T>
Var<T> window_partition(const Var<T>& x, int64_t win) {
    const auto& xs = x->value.shape;
    check(xs.size() == 4, "window_partition: expects NCHW");
    const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    check(H % win == 0 && W % win == 0, "window_partition: window must divide spatial dims");
    const int64_t nh = H / win, nw = W / win;
    Tensor<T> out({N * nh * nw, win * win, C});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * nh * nw > 4)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t wb = 0; wb < nh * nw; ++wb) {
            const int64_t wh = wb / nw, ww = wb % nw;
            T* block = od + ((n * nh * nw) + wb) * win * win * C;
            for (int64_t p = 0; p < win; ++p)
                for (int64_t q = 0; q < win; ++q) {
                    const int64_t hh = wh * win + p, wwp = ww * win + q;
                    T* tok = block + (p * win + q) * C;
                    for (int64_t c = 0; c < C; ++c) tok[c] = xd[((n * C + c) * H + hh) * W + wwp];
                }
        }
    return attach<T>(std::move(out), {x}, [xp = x.get(), N, C, H, W, win, nh, nw](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t wb = 0; wb < nh * nw; ++wb) {
                const int64_t wh = wb / nw, ww = wb % nw;
                const T* block = dy + ((n * nh * nw) + wb) * win * win * C;
                for (int64_t p = 0; p < win; ++p)
                    for (int64_t q = 0; q < win; ++q) {
                        const int64_t hh = wh * win + p, wwp = ww * win + q;
                        const T* tok = block + (p * win + q) * C;
                        for (int64_t c = 0; c < C; ++c) dx[((n * C + c) * H + hh) * W + wwp] += tok[c];
                    }
            }
    });
}

// Inverse of window_partition.
template <class T>
Var<T> window_merge(const Var<T>& x, int64_t N, int64_t C, int64_t H, int64_t W, int64_t win) {
    const auto& xs = x->value.shape;
    const int64_t nh = H / win, nw = W / win;
    check(xs.size() == 3 && xs[0] == N * nh * nw && xs[1] == win * win && xs[2] == C, "window_merge: bad shape");
    Tensor<T> out({N, C, H, W});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (N * nh * nw > 4)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t wb = 0; wb < nh * nw; ++wb) {
            const int64_t wh = wb / nw, ww = wb % nw;
            const T* block = xd + ((n * nh * nw) + wb) * win * win * C;
            for (int64_t p = 0; p < win; ++p)
                for (int64_t q = 0; q < win; ++q) {
                    const int64_t hh = wh * win + p, wwp = ww * win + q;
                    const T* tok = block + (p * win + q) * C;
                    for (int64_t c = 0; c < C; ++c) od[((n * C + c) * H + hh) * W + wwp] = tok[c];
                }
        }
    return attach<T>(std::move(out), {x}, [xp = x.get(), N, C, H, W, win, nh, nw](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t wb = 0; wb < nh * nw; ++wb) {
                const int64_t wh = wb / nw, ww = wb % nw;
                T* block = dx + ((n * nh * nw) + wb) * win * win * C;
                for (int64_t p = 0; p < win; ++p)
                    for (int64_t q = 0; q < win; ++q) {
                        const int64_t hh = wh * win + p, wwp = ww * win + q;
                        T* tok = block + (p * win + q) * C;
                        for (int64_t c = 0; c < C; ++c) tok[c] += dy[((n * C + c) * H + hh) * W + wwp];
                    }
            }
    });
}

// Stack the H row-slices (C x W) and W column-slices (C x H) of a square map
// into (N*(H+W), C, S) with S = H = W. Each input element lands in exactly
// two slices.
template <class T>
Var<T> hw_slice_stack(const Var<T>& x) {
    const auto& xs = x->value.shape;
    check(xs.size() == 4, "hw_slice_stack: expects NCHW");
    const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    check(H == W, "hw_slice_stack: requires a square map, got " + shape_str(xs));
    const int64_t S = H;
    Tensor<T> out({N * 2 * S, C, S});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t k = 0; k < S; ++k) {
            T* row_slice = od + ((n * 2 * S) + k) * C * S;
            T* col_slice = od + ((n * 2 * S) + S + k) * C * S;
            for (int64_t c = 0; c < C; ++c) {
                const T* plane = xd + (n * C + c) * H * W;
                for (int64_t s = 0; s < S; ++s) {
                    row_slice[c * S + s] = plane[k * W + s];   // slice across height axis
                    col_slice[c * S + s] = plane[s * W + k];   // slice across width axis
                }
            }
        }
    }
    return attach<T>(std::move(out), {x}, [xp = x.get(), N, C, S](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < S; ++k) {
                const T* row_slice = dy + ((n * 2 * S) + k) * C * S;
                const T* col_slice = dy + ((n * 2 * S) + S + k) * C * S;
                for (int64_t c = 0; c < C; ++c) {
                    T* plane = dx + (n * C + c) * S * S;
                    for (int64_t s = 0; s < S; ++s) {
                        plane[k * S + s] += row_slice[c * S + s];
                        plane[s * S + k] += col_slice[c * S + s];
                    }
                }
            }
    });
}

// Inverse of hw_slice_stack that averages the two slice groups back into one
// (N,C,S,S) map: out[c,h,w] = (rows[h][c,w] + cols[w][c,h]) / 2.
template <class T>
Var<T> hw_scatter_avg(const Var<T>& x, int64_t S) {
    const auto& xs = x->value.shape;
    check(xs.size() == 3 && xs[0] % (2 * S) == 0 && xs[2] == S, "hw_scatter_avg: bad shape");
    const int64_t N = xs[0] / (2 * S), C = xs[1];
    Tensor<T> out({N, C, S, S});
    const T* xd = x->value.ptr();
    T* od = out.ptr();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T* plane = od + (n * C + c) * S * S;
            for (int64_t h = 0; h < S; ++h) {
                const T* row_slice = xd + ((n * 2 * S) + h) * C * S + c * S;
                for (int64_t w = 0; w < S; ++w) {
                    const T col_v = xd[((n * 2 * S) + S + w) * C * S + c * S + h];
                    plane[h * S + w] = (row_slice[w] + col_v) * T(0.5);
                }
            }
        }
    return attach<T>(std::move(out), {x}, [xp = x.get(), N, C, S](Node<T>& self) {
        if (!xp->requires_grad) return;
        T* dx = xp->ensure_grad().ptr();
        const T* dy = self.grad.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const T* plane = dy + (n * C + c) * S * S;
                for (int64_t h = 0; h < S; ++h)
                    for (int64_t w = 0; w < S; ++w) {
                        const T g = plane[h * S + w] * T(0.5);
                        dx[((n * 2 * S) + h) * C * S + c * S + w] += g;
                        dx[((n * 2 * S) + S + w) * C * S + c * S + h] += g;
                    }
            }
    });
}

}  // namespace ops
}  // namespace hsacnet
