#pragma once
// Analytic operation counting. Multiply-accumulates are tallied per layer
// kind; the headline figure is 2*MACs over convolutions, linear layers and
// attention matmuls. Normalizations, activations and resampling are itemized
// separately and excluded from the headline.

#include <cstdint>
#include <map>
#include <string>

namespace hsacnet {

struct FlopsTally {
    int64_t conv_macs = 0;
    int64_t linear_macs = 0;
    int64_t matmul_macs = 0;
    // excluded from the headline, itemized for reconstruction
    int64_t norm_elems = 0;
    int64_t act_elems = 0;
    int64_t resample_elems = 0;

    void conv(int64_t k, int64_t cin, int64_t cout, int64_t groups, int64_t hout, int64_t wout) {
        conv_macs += k * k * (cin / groups) * cout * hout * wout;
    }
    void linear(int64_t in, int64_t out, int64_t positions) { linear_macs += in * out * positions; }
    void matmul(int64_t batch, int64_t m, int64_t n, int64_t k) { matmul_macs += batch * m * n * k; }
    void norm(int64_t elems) { norm_elems += elems; }
    void act(int64_t elems) { act_elems += elems; }
    void resample(int64_t elems) { resample_elems += elems; }

    int64_t total_macs() const { return conv_macs + linear_macs + matmul_macs; }
    // FLOPs = 2 * MACs
    int64_t headline_flops() const { return 2 * total_macs(); }
};

}  // namespace hsacnet
