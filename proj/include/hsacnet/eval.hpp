#pragma once
// Confusion-matrix metrics (change-class IoU and overall accuracy),
// prediction/legend export, and static complexity profiling.

#include "hsacnet/data.hpp"
#include "hsacnet/network.hpp"

namespace hsacnet {

struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;

    int64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

inline ConfusionCounts confusion(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& truth) {
    check(pred.shape == truth.shape, "confusion: shape mismatch");
    ConfusionCounts c;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        check(pred[i] <= 1 && truth[i] <= 1, "confusion: masks must be binary");
        if (truth[i]) {
            if (pred[i])
                ++c.tp;
            else
                ++c.fn;
        } else {
            if (pred[i])
                ++c.fp;
            else
                ++c.tn;
        }
    }
    return c;
}

// Change-class IoU; an empty prediction against empty truth counts as
// perfect agreement (1.0).
inline double iou_c(const ConfusionCounts& c) {
    const int64_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double oa(const ConfusionCounts& c) {
    const int64_t den = c.total();
    return den == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(den);
}

struct ComplexityReport {
    int64_t total_params = 0;
    int64_t trainable_params = 0;
    int64_t frozen_params = 0;
    std::map<std::string, int64_t> params_by_module;  // encoder/adapters/neck/sadam/decoder
    FlopsTally flops;
    int64_t flops_input = 0;  // square input edge used for the tally

    int64_t headline_flops() const { return flops.headline_flops(); }
};

inline std::string param_bucket(const std::string& name) {
    if (name.find(".adapter.") != std::string::npos) return "adapters";
    if (name.rfind("encoder.", 0) == 0) return "encoder";
    if (name.rfind("lateral", 0) == 0) return "neck";
    if (name.rfind("sadam.", 0) == 0) return "sadam";
    if (name.rfind("diffconv.", 0) == 0) return "diffconv";
    if (name.rfind("decoder.", 0) == 0) return "decoder";
    return "other";
}

template <class T>
ComplexityReport count_params(nn::ChangeNet<T>& net) {
    ComplexityReport r;
    for (auto& [name, p] : net.named_params()) {
        const int64_t n = p->var->value.numel();
        r.total_params += n;
        (p->trainable ? r.trainable_params : r.frozen_params) += n;
        r.params_by_module[param_bucket(name)] += n;
    }
    return r;
}

// Analytic per-layer counting for one pair forward at a square input size.
template <class T>
ComplexityReport estimate_flops(nn::ChangeNet<T>& net, int64_t input_size) {
    check(input_size % 32 == 0 && input_size > 0, "estimate_flops: input must be a positive multiple of 32");
    ComplexityReport r = count_params(net);
    net.add_flops(input_size, input_size, r.flops);
    r.flops_input = input_size;
    return r;
}

struct TileMetrics {
    std::string id;
    ConfusionCounts counts;
    double iou = 0, oa_v = 0;
};

struct EvalReport {
    std::vector<TileMetrics> tiles;
    ConfusionCounts aggregate;
    double iou = 0, oa_v = 0;
};

// TP white, TN black, FP red, FN green.
inline ImageU8 confusion_color_map(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& truth) {
    check(pred.shape == truth.shape, "color map: shape mismatch");
    ImageU8 img(pred.shape[0], pred.shape[1], 3);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const uint8_t p = pred[y * img.w + x], t = truth[y * img.w + x];
            uint8_t r = 0, g = 0, b = 0;
            if (p && t) r = g = b = 255;        // TP
            else if (p && !t) r = 255;          // FP
            else if (!p && t) g = 255;          // FN
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

// Batched eval-mode inference over a labeled split; optionally writes one
// color-coded agreement map per tile under <maps_dir>/<id>.png.
template <class T>
EvalReport evaluate(nn::ChangeNet<T>& net, const DatasetManifest& split, const std::string& root,
                    const std::string& maps_dir = "", int64_t batch = 8) {
    check(!split.labeled.empty(),
          "evaluate: split '" + split.split_name + "' has no labeled pairs");
    check(split.unlabeled.empty(), "evaluate: split has unlabeled pairs; labels are required");
    const bool was_training = net.training();
    net.set_training(false);
    if (!maps_dir.empty()) std::filesystem::create_directories(maps_dir);

    EvalReport report;
    NoGrad ng;
    for (size_t start = 0; start < split.labeled.size(); start += static_cast<size_t>(batch)) {
        const size_t end = std::min(split.labeled.size(), start + static_cast<size_t>(batch));
        std::vector<BiTemporalPair<T>> pairs;
        for (size_t i = start; i < end; ++i) pairs.push_back(load_pair<T>(split.labeled[i], root));
        const int64_t N = static_cast<int64_t>(pairs.size());
        const int64_t H = pairs[0].height(), W = pairs[0].width();
        Tensor<T> a({N, 3, H, W}), b({N, 3, H, W});
        for (int64_t n = 0; n < N; ++n) {
            check(pairs[static_cast<size_t>(n)].height() == H && pairs[static_cast<size_t>(n)].width() == W,
                  "evaluate: tiles in one batch must share a size");
            std::copy(pairs[static_cast<size_t>(n)].image_a.data.begin(),
                      pairs[static_cast<size_t>(n)].image_a.data.end(), a.data.begin() + n * 3 * H * W);
            std::copy(pairs[static_cast<size_t>(n)].image_b.data.begin(),
                      pairs[static_cast<size_t>(n)].image_b.data.end(), b.data.begin() + n * 3 * H * W);
        }
        auto logits = net.forward(make_var(a), make_var(b));
        auto prob = prob_change_map(logits->value);
        for (int64_t n = 0; n < N; ++n) {
            Tensor<T> p({H, W});
            std::copy(prob.data.begin() + n * H * W, prob.data.begin() + (n + 1) * H * W, p.data.begin());
            auto mask = threshold_mask(p);
            TileMetrics tm;
            tm.id = pairs[static_cast<size_t>(n)].id;
            tm.counts = confusion(mask, pairs[static_cast<size_t>(n)].label);
            tm.iou = iou_c(tm.counts);
            tm.oa_v = oa(tm.counts);
            report.aggregate += tm.counts;
            if (!maps_dir.empty())
                write_png((std::filesystem::path(maps_dir) / (tm.id + ".png")).string(),
                          confusion_color_map(mask, pairs[static_cast<size_t>(n)].label));
            report.tiles.push_back(std::move(tm));
        }
    }
    report.iou = iou_c(report.aggregate);
    report.oa_v = oa(report.aggregate);
    net.set_training(was_training);
    return report;
}

}  // namespace hsacnet
