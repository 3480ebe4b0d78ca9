#pragma once
// Weak (geometric) and strong (photometric + CutMix) augmentation for
// bi-temporal pairs. Weak transforms apply one geometry to A, B and the
// label; strong transforms never move pixels, so weak-view pseudo labels
// stay aligned with strong views. CutMix boxes are shared between both
// strong views and the pseudo-label map.

#include "hsacnet/data.hpp"
#include "hsacnet/random.hpp"

namespace hsacnet {

struct AugmentSpec {
    // weak
    double resize_min = 0.5, resize_max = 2.0;
    double hflip_prob = 0.5;
    // strong
    double jitter_prob = 0.8;
    double brightness = 0.5, contrast = 0.5, saturation = 0.5, hue = 0.25;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
    double cutmix_prob = 0.5;
    double cutmix_area_min = 0.1, cutmix_area_max = 0.4;
    bool identical_photometric = false;  // same draws for image A and B

    void validate() const {
        check(resize_min > 0 && resize_max >= resize_min, "augment: bad resize range");
        for (double p : {hflip_prob, jitter_prob, blur_prob, cutmix_prob})
            check(p >= 0.0 && p <= 1.0, "augment: probabilities must lie in [0,1]");
        check(cutmix_area_min >= 0.0 && cutmix_area_max <= 1.0 && cutmix_area_max >= cutmix_area_min,
              "augment: bad cutmix area range");
        check(hue <= 0.5, "augment: hue shift must be <= 0.5");
    }
};

// Enough to replay the weak geometry on any same-sized map.
struct GeometryRecord {
    int64_t src_h = 0, src_w = 0;
    int64_t resized_h = 0, resized_w = 0;
    bool flipped = false;
    int64_t off_y = 0, off_x = 0;  // crop offsets into the resized image (>= 0)
    int64_t out = 0;               // output patch size
};

namespace aug {

template <class T>
Tensor<T> resize_bilinear_chw(const Tensor<T>& img, int64_t oh, int64_t ow) {
    const int64_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    Tensor<T> out({C, oh, ow});
    const double sy = static_cast<double>(H) / static_cast<double>(oh);
    const double sx = static_cast<double>(W) / static_cast<double>(ow);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < oh; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
            const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), H - 1);
            const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
            const double wy = fy - static_cast<double>(y0);
            for (int64_t x = 0; x < ow; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
                const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), W - 1);
                const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
                const double wx = fx - static_cast<double>(x0);
                const double a = img[(c * H + y0) * W + x0], b = img[(c * H + y0) * W + x1];
                const double d = img[(c * H + y1) * W + x0], e = img[(c * H + y1) * W + x1];
                out[(c * oh + y) * ow + x] =
                    static_cast<T>((1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e));
            }
        }
    return out;
}

// Nearest-neighbor resize keeps masks binary.
inline Tensor<uint8_t> resize_nearest_mask(const Tensor<uint8_t>& m, int64_t oh, int64_t ow) {
    const int64_t H = m.shape[0], W = m.shape[1];
    Tensor<uint8_t> out({oh, ow});
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            int64_t sy = std::min<int64_t>(static_cast<int64_t>((static_cast<double>(y) + 0.5) *
                                                                static_cast<double>(H) / static_cast<double>(oh)),
                                           H - 1);
            int64_t sx = std::min<int64_t>(static_cast<int64_t>((static_cast<double>(x) + 0.5) *
                                                                static_cast<double>(W) / static_cast<double>(ow)),
                                           W - 1);
            out[y * ow + x] = m[sy * W + sx];
        }
    return out;
}

template <class T>
Tensor<T> crop_pad_chw(const Tensor<T>& img, int64_t off_y, int64_t off_x, int64_t out_size) {
    const int64_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    Tensor<T> out({C, out_size, out_size});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < out_size; ++y)
            for (int64_t x = 0; x < out_size; ++x) {
                const int64_t sy = y + off_y, sx = x + off_x;
                out[(c * out_size + y) * out_size + x] =
                    (sy >= 0 && sy < H && sx >= 0 && sx < W) ? img[(c * H + sy) * W + sx] : T(0);
            }
    return out;
}

inline Tensor<uint8_t> crop_pad_mask(const Tensor<uint8_t>& m, int64_t off_y, int64_t off_x, int64_t out_size) {
    const int64_t H = m.shape[0], W = m.shape[1];
    Tensor<uint8_t> out({out_size, out_size});
    for (int64_t y = 0; y < out_size; ++y)
        for (int64_t x = 0; x < out_size; ++x) {
            const int64_t sy = y + off_y, sx = x + off_x;
            out[y * out_size + x] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? m[sy * W + sx] : 0;
        }
    return out;
}

template <class T>
void hflip_chw(Tensor<T>& img) {
    const int64_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W / 2; ++x)
                std::swap(img[(c * H + y) * W + x], img[(c * H + y) * W + (W - 1 - x)]);
}

inline void hflip_mask(Tensor<uint8_t>& m) {
    const int64_t H = m.shape[0], W = m.shape[1];
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W / 2; ++x) std::swap(m[y * W + x], m[y * W + (W - 1 - x)]);
}

template <class T>
void clamp01(Tensor<T>& img) {
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::min(T(1), std::max(T(0), img[i]));
}

// torchvision-style photometric jitter, fixed op order.
template <class T>
void color_jitter(Tensor<T>& img, const AugmentSpec& spec, RandomStream& rng) {
    const int64_t HW = img.shape[1] * img.shape[2];
    const double fb = rng.uniform(std::max(0.0, 1.0 - spec.brightness), 1.0 + spec.brightness);
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<T>(img[i] * fb);
    clamp01(img);

    const double fc = rng.uniform(std::max(0.0, 1.0 - spec.contrast), 1.0 + spec.contrast);
    double mean = 0;
    for (int64_t i = 0; i < img.numel(); ++i) mean += img[i];
    mean /= static_cast<double>(img.numel());
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<T>(mean + (static_cast<double>(img[i]) - mean) * fc);
    clamp01(img);

    const double fs = rng.uniform(std::max(0.0, 1.0 - spec.saturation), 1.0 + spec.saturation);
    for (int64_t i = 0; i < HW; ++i) {
        const double r = img[i], g = img[HW + i], b = img[2 * HW + i];
        const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
        img[i] = static_cast<T>(gray + (r - gray) * fs);
        img[HW + i] = static_cast<T>(gray + (g - gray) * fs);
        img[2 * HW + i] = static_cast<T>(gray + (b - gray) * fs);
    }
    clamp01(img);

    const double fh = rng.uniform(-spec.hue, spec.hue);
    if (fh != 0.0) {
        for (int64_t i = 0; i < HW; ++i) {
            double r = img[i], g = img[HW + i], b = img[2 * HW + i];
            const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
            const double v = mx, d = mx - mn;
            double h = 0;
            if (d > 1e-12) {
                if (mx == r)
                    h = std::fmod((g - b) / d, 6.0);
                else if (mx == g)
                    h = (b - r) / d + 2.0;
                else
                    h = (r - g) / d + 4.0;
                h /= 6.0;
                if (h < 0) h += 1.0;
            }
            const double s = mx > 1e-12 ? d / mx : 0.0;
            h = std::fmod(h + fh + 1.0, 1.0);
            const double hh = h * 6.0;
            const int64_t sector = static_cast<int64_t>(hh) % 6;
            const double f = hh - std::floor(hh);
            const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
            switch (sector) {
                case 0: r = v; g = t; b = p; break;
                case 1: r = q; g = v; b = p; break;
                case 2: r = p; g = v; b = t; break;
                case 3: r = p; g = q; b = v; break;
                case 4: r = t; g = p; b = v; break;
                default: r = v; g = p; b = q; break;
            }
            img[i] = static_cast<T>(r);
            img[HW + i] = static_cast<T>(g);
            img[2 * HW + i] = static_cast<T>(b);
        }
        clamp01(img);
    }
}

template <class T>
void gaussian_blur(Tensor<T>& img, double sigma) {
    const int64_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int64_t i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    Tensor<T> tmp(img.shape);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double acc = 0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    int64_t sx = std::clamp<int64_t>(x + i, 0, W - 1);
                    acc += k[static_cast<size_t>(i + radius)] * img[(c * H + y) * W + sx];
                }
                tmp[(c * H + y) * W + x] = static_cast<T>(acc);
            }
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double acc = 0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    int64_t sy = std::clamp<int64_t>(y + i, 0, H - 1);
                    acc += k[static_cast<size_t>(i + radius)] * tmp[(c * H + sy) * W + x];
                }
                img[(c * H + y) * W + x] = static_cast<T>(acc);
            }
}

}  // namespace aug

// Applies the recorded weak geometry to a mask (used for labels and for
// verifying that images and masks never desynchronize).
inline Tensor<uint8_t> replay_geometry(const GeometryRecord& g, const Tensor<uint8_t>& mask) {
    check(mask.shape == Shape({g.src_h, g.src_w}), "replay_geometry: mask size differs from the recorded source");
    auto m = aug::resize_nearest_mask(mask, g.resized_h, g.resized_w);
    if (g.flipped) aug::hflip_mask(m);
    return aug::crop_pad_mask(m, g.off_y, g.off_x, g.out);
}

// Random resize + horizontal flip + crop/pad back to the patch size; the
// same geometry hits image A, image B and the label.
template <class T>
std::pair<BiTemporalPair<T>, GeometryRecord> weak_augment(const BiTemporalPair<T>& pair, const AugmentSpec& spec,
                                                          RandomStream& rng) {
    spec.validate();
    const int64_t H = pair.height(), W = pair.width();
    GeometryRecord g;
    g.src_h = H;
    g.src_w = W;
    g.out = H;
    const double scale = rng.uniform(spec.resize_min, spec.resize_max);
    g.resized_h = std::max<int64_t>(1, static_cast<int64_t>(std::lround(static_cast<double>(H) * scale)));
    g.resized_w = std::max<int64_t>(1, static_cast<int64_t>(std::lround(static_cast<double>(W) * scale)));
    g.flipped = rng.bernoulli(spec.hflip_prob);
    // random crop when larger, centered pad when smaller
    g.off_y = g.resized_h > g.out ? rng.uniform_int(g.resized_h - g.out + 1) : -((g.out - g.resized_h) / 2);
    g.off_x = g.resized_w > g.out ? rng.uniform_int(g.resized_w - g.out + 1) : -((g.out - g.resized_w) / 2);

    BiTemporalPair<T> out;
    out.id = pair.id;
    auto apply_img = [&](const Tensor<T>& img) {
        auto r = aug::resize_bilinear_chw(img, g.resized_h, g.resized_w);
        if (g.flipped) aug::hflip_chw(r);
        return aug::crop_pad_chw(r, g.off_y, g.off_x, g.out);
    };
    out.image_a = apply_img(pair.image_a);
    out.image_b = apply_img(pair.image_b);
    if (pair.has_label()) out.label = replay_geometry(g, pair.label);
    return {out, g};
}

// Photometric-only strong view: color jitter and blur with independent draws
// per temporal image (configurable), spatial content untouched.
template <class T>
BiTemporalPair<T> strong_augment(const BiTemporalPair<T>& weak, const AugmentSpec& spec, RandomStream& rng) {
    spec.validate();
    BiTemporalPair<T> out = weak;
    auto photometric = [&](Tensor<T>& img, RandomStream& r) {
        if (r.bernoulli(spec.jitter_prob)) aug::color_jitter(img, spec, r);
        if (r.bernoulli(spec.blur_prob)) aug::gaussian_blur(img, r.uniform(spec.blur_sigma_min, spec.blur_sigma_max));
        aug::clamp01(img);
    };
    if (spec.identical_photometric) {
        RandomStream ra = rng.derive("photo" + std::to_string(rng.raw()));
        RandomStream rb = ra;
        photometric(out.image_a, ra);
        photometric(out.image_b, rb);
    } else {
        photometric(out.image_a, rng);
        photometric(out.image_b, rng);
    }
    return out;
}

struct CutmixBox {
    int64_t y0 = 0, x0 = 0, h = 0, w = 0;
    int64_t partner = 0;  // sample index the box content comes from

    bool contains(int64_t y, int64_t x) const { return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w; }
};

// One box per sample, pasted from the cyclically next sample. An empty
// result means the batch was too small to mix (a warning case, not an error).
inline std::vector<CutmixBox> make_cutmix_boxes(int64_t batch, int64_t hw, const AugmentSpec& spec,
                                                RandomStream& rng) {
    std::vector<CutmixBox> boxes;
    if (batch < 2) return boxes;
    for (int64_t i = 0; i < batch; ++i) {
        CutmixBox b;
        b.partner = (i + 1) % batch;
        if (rng.bernoulli(spec.cutmix_prob)) {
            const double area = rng.uniform(spec.cutmix_area_min, spec.cutmix_area_max);
            const double aspect = rng.uniform(0.5, 2.0);
            const double target = area * static_cast<double>(hw * hw);
            int64_t bh = static_cast<int64_t>(std::lround(std::sqrt(target * aspect)));
            bh = std::min(bh, hw);
            // keep the drawn area honest under clamping: derive the other
            // side from the target area, then re-derive the first
            int64_t bw = bh >= 1 ? std::min(hw, static_cast<int64_t>(std::lround(target / static_cast<double>(bh))))
                                 : 0;
            if (bw >= 1) bh = std::min(hw, static_cast<int64_t>(std::lround(target / static_cast<double>(bw))));
            if (bh >= 1 && bw >= 1) {
                b.h = bh;
                b.w = bw;
                b.y0 = rng.uniform_int(hw - bh + 1);
                b.x0 = rng.uniform_int(hw - bw + 1);
            }
        }
        boxes.push_back(b);
    }
    return boxes;
}

template <class T>
void apply_cutmix_images(std::vector<Tensor<T>>& images, const std::vector<CutmixBox>& boxes) {
    if (boxes.empty()) return;
    const auto originals = images;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& b = boxes[i];
        if (b.h == 0 || b.w == 0) continue;
        const auto& src = originals[static_cast<size_t>(b.partner)];
        const int64_t C = src.shape[0], H = src.shape[1], W = src.shape[2];
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = b.y0; y < b.y0 + b.h; ++y)
                for (int64_t x = b.x0; x < b.x0 + b.w; ++x)
                    images[i][(c * H + y) * W + x] = src[(c * H + y) * W + x];
    }
}

template <class U>
void apply_cutmix_maps(std::vector<Tensor<U>>& maps, const std::vector<CutmixBox>& boxes) {
    if (boxes.empty()) return;
    const auto originals = maps;
    for (size_t i = 0; i < maps.size(); ++i) {
        const auto& b = boxes[i];
        if (b.h == 0 || b.w == 0) continue;
        const auto& src = originals[static_cast<size_t>(b.partner)];
        const int64_t H = src.shape[0], W = src.shape[1];
        for (int64_t y = b.y0; y < b.y0 + b.h; ++y)
            for (int64_t x = b.x0; x < b.x0 + b.w; ++x) maps[i][y * W + x] = src[y * W + x];
    }
}

struct CutmixResult {
    bool mixed = false;
    std::string warning;
};

// Spec-level operation: mixes a batch of strong view pairs together with
// their pseudo-label maps using one shared box per sample.
template <class T>
CutmixResult cutmix_batch(std::vector<BiTemporalPair<T>>& views, std::vector<Tensor<uint8_t>>& pseudo_labels,
                          const AugmentSpec& spec, RandomStream& rng) {
    check(views.size() == pseudo_labels.size(), "cutmix_batch: views and labels differ in count");
    CutmixResult res;
    if (views.size() < 2) {
        res.warning = "cutmix: batch of " + std::to_string(views.size()) + " cannot mix; skipped";
        return res;
    }
    const int64_t hw = views[0].height();
    auto boxes = make_cutmix_boxes(static_cast<int64_t>(views.size()), hw, spec, rng);
    std::vector<Tensor<T>> as, bs;
    for (auto& v : views) {
        as.push_back(v.image_a);
        bs.push_back(v.image_b);
    }
    apply_cutmix_images(as, boxes);
    apply_cutmix_images(bs, boxes);
    apply_cutmix_maps(pseudo_labels, boxes);
    for (size_t i = 0; i < views.size(); ++i) {
        views[i].image_a = std::move(as[i]);
        views[i].image_b = std::move(bs[i]);
    }
    res.mixed = true;
    return res;
}

}  // namespace hsacnet
