#pragma once
// Dataset preparation: tiling large scenes into non-overlapping patches,
// deterministic labeled/unlabeled partitioning, and a synthetic bi-temporal
// scene generator for desk-scale experiments.

#include <cmath>

#include "hsacnet/data.hpp"
#include "hsacnet/random.hpp"

namespace hsacnet {

struct TilingSpec {
    int64_t patch = 256;  // non-overlapping grid, partial edge tiles dropped

    void validate() const { check(patch > 0 && patch % 32 == 0, "tiling: patch must be a positive multiple of 32"); }
};

struct TilingResult {
    std::vector<BiTemporalPair<float>> patches;
    std::vector<PairRecord> records;  // paths follow the standard layout
    std::string warning;              // set when the scene is smaller than one patch
};

// floor(H/patch) x floor(W/patch) aligned patches; A, B and mask are cropped
// with identical windows. Record ids encode the source scene and grid cell.
inline TilingResult tile_scene(const BiTemporalPair<float>& scene, const TilingSpec& spec) {
    spec.validate();
    TilingResult out;
    const int64_t H = scene.height(), W = scene.width(), P = spec.patch;
    const int64_t rows = H / P, cols = W / P;
    if (rows == 0 || cols == 0) {
        out.warning = "scene " + scene.id + " (" + std::to_string(H) + "x" + std::to_string(W) +
                      ") is smaller than one " + std::to_string(P) + "px patch; skipped";
        return out;
    }
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            BiTemporalPair<float> p;
            p.id = scene.id + "_r" + std::to_string(r) + "c" + std::to_string(c);
            p.image_a = Tensor<float>({3, P, P});
            p.image_b = Tensor<float>({3, P, P});
            for (int64_t ch = 0; ch < 3; ++ch)
                for (int64_t y = 0; y < P; ++y)
                    for (int64_t x = 0; x < P; ++x) {
                        const int64_t sy = r * P + y, sx = c * P + x;
                        p.image_a[(ch * P + y) * P + x] = scene.image_a[(ch * H + sy) * W + sx];
                        p.image_b[(ch * P + y) * P + x] = scene.image_b[(ch * H + sy) * W + sx];
                    }
            if (scene.has_label()) {
                p.label = Tensor<uint8_t>({P, P});
                for (int64_t y = 0; y < P; ++y)
                    for (int64_t x = 0; x < P; ++x) p.label[y * P + x] = scene.label[(r * P + y) * W + c * P + x];
            }
            PairRecord rec;
            rec.id = p.id;
            rec.a = "A/" + p.id + ".png";
            rec.b = "B/" + p.id + ".png";
            if (p.has_label()) rec.label = "label/" + p.id + ".png";
            out.records.push_back(rec);
            out.patches.push_back(std::move(p));
        }
    return out;
}

struct PartitionSpec {
    double labeled_ratio = 0.05;
    uint64_t seed = 0;

    void validate() const {
        check(labeled_ratio > 0.0 && labeled_ratio <= 1.0, "partition: labeled_ratio must lie in (0,1]");
    }
};

// Deterministic seeded shuffle; the first ceil(ratio*M) pairs keep their
// labels, the rest move to the unlabeled set with label paths stripped.
// The two outputs are disjoint and their union is the input.
inline std::pair<DatasetManifest, DatasetManifest> partition(const DatasetManifest& m, const PartitionSpec& spec) {
    spec.validate();
    check(m.unlabeled.empty(), "partition: input manifest must be fully labeled");
    const int64_t total = static_cast<int64_t>(m.labeled.size());
    const int64_t n_labeled = static_cast<int64_t>(std::ceil(spec.labeled_ratio * static_cast<double>(total)));
    check(n_labeled >= 1, "partition: ratio yields zero labeled pairs");

    std::vector<size_t> idx(m.labeled.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    RandomStream rng = RandomStream(spec.seed).derive("partition");
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(i))]);

    DatasetManifest labeled, unlabeled;
    labeled.split_name = m.split_name + "-labeled";
    unlabeled.split_name = m.split_name + "-unlabeled";
    labeled.patch_size = unlabeled.patch_size = m.patch_size;
    for (int64_t i = 0; i < total; ++i) {
        const auto& r = m.labeled[idx[static_cast<size_t>(i)]];
        if (i < n_labeled) {
            labeled.labeled.push_back(r);
        } else {
            PairRecord stripped = r;
            stripped.label.clear();
            unlabeled.unlabeled.push_back(stripped);
        }
    }
    return {labeled, unlabeled};
}

struct SyntheticSpec {
    int64_t num_pairs = 500;
    int64_t patch = 64;
    int64_t shapes_min = 3;
    int64_t shapes_max = 6;
    double change_prob = 0.5;      // per shape: appears in only one epoch
    double illum_drift = 0.22;     // global gain/bias/ramp strength per image
    double noise_sigma = 0.04;     // per-pixel gaussian noise
    double train_frac = 0.7;
    double val_frac = 0.1;
    uint64_t seed = 0;

    void validate() const {
        check(num_pairs >= 1, "synthetic: num_pairs must be >= 1");
        check(patch >= 32 && patch % 32 == 0, "synthetic: patch must be a positive multiple of 32");
        check(shapes_min >= 1 && shapes_max >= shapes_min, "synthetic: bad shape count range");
        check(change_prob >= 0.0 && change_prob <= 1.0, "synthetic: change_prob must lie in [0,1]");
        check(noise_sigma >= 0.0 && illum_drift >= 0.0, "synthetic: noise and drift must be >= 0");
        check(train_frac > 0 && val_frac >= 0 && train_frac + val_frac < 1.0 + 1e-12,
              "synthetic: split fractions must leave room for a test set");
    }
};

namespace synth {

struct ShapeDesc {
    bool ellipse = false;
    bool in_a = true;
    bool in_b = true;
    double cy = 0, cx = 0, ry = 0, rx = 0;
    std::array<double, 3> color{};
};

struct SceneDesc {
    std::array<double, 3> base{};
    std::array<double, 6> wave{};  // frequency/phase pairs for the texture
    std::vector<ShapeDesc> shapes;
};

inline SceneDesc build_scene(const SyntheticSpec& spec, int64_t index) {
    RandomStream rng = RandomStream(spec.seed).derive("scene" + std::to_string(index));
    SceneDesc d;
    for (auto& b : d.base) b = rng.uniform(0.25, 0.65);
    for (auto& w : d.wave) w = rng.uniform(0.0, 1.0);
    const int64_t count = spec.shapes_min + rng.uniform_int(spec.shapes_max - spec.shapes_min + 1);
    for (int64_t s = 0; s < count; ++s) {
        ShapeDesc sh;
        sh.ellipse = rng.bernoulli(0.5);
        sh.cy = rng.uniform(0.15, 0.85) * static_cast<double>(spec.patch);
        sh.cx = rng.uniform(0.15, 0.85) * static_cast<double>(spec.patch);
        sh.ry = rng.uniform(0.06, 0.22) * static_cast<double>(spec.patch);
        sh.rx = rng.uniform(0.06, 0.22) * static_cast<double>(spec.patch);
        for (int c = 0; c < 3; ++c) {
            // keep shapes clearly separated from the background color
            const double lo = d.base[static_cast<size_t>(c)];
            sh.color[static_cast<size_t>(c)] = lo > 0.5 ? rng.uniform(0.02, lo - 0.3) : rng.uniform(lo + 0.3, 0.98);
        }
        if (rng.bernoulli(spec.change_prob)) {
            const bool removed = rng.bernoulli(0.5);
            sh.in_a = removed;
            sh.in_b = !removed;
        }
        d.shapes.push_back(sh);
    }
    return d;
}

inline bool shape_covers(const ShapeDesc& s, int64_t y, int64_t x) {
    const double dy = (static_cast<double>(y) + 0.5 - s.cy), dx = (static_cast<double>(x) + 0.5 - s.cx);
    if (s.ellipse) return (dy * dy) / (s.ry * s.ry) + (dx * dx) / (s.rx * s.rx) <= 1.0;
    return std::abs(dy) <= s.ry && std::abs(dx) <= s.rx;
}

// Noise-free render of one epoch ('a' or 'b'); shapes paint in order.
inline Tensor<float> render_clean(const SceneDesc& d, const SyntheticSpec& spec, char which) {
    const int64_t P = spec.patch;
    Tensor<float> img({3, P, P});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < P; ++y)
            for (int64_t x = 0; x < P; ++x) {
                const double fy = static_cast<double>(y) / static_cast<double>(P);
                const double fx = static_cast<double>(x) / static_cast<double>(P);
                double v = d.base[static_cast<size_t>(c)] +
                           0.08 * std::sin(2.0 * M_PI * (d.wave[0] * 3.0 * fx + d.wave[1] * 3.0 * fy + d.wave[2])) +
                           0.05 * std::sin(2.0 * M_PI * (d.wave[3] * 7.0 * fx + d.wave[4] * 7.0 * fy + d.wave[5]));
                img[(c * P + y) * P + x] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
    for (const auto& s : d.shapes) {
        if ((which == 'a' && !s.in_a) || (which == 'b' && !s.in_b)) continue;
        for (int64_t y = 0; y < P; ++y)
            for (int64_t x = 0; x < P; ++x)
                if (shape_covers(s, y, x))
                    for (int64_t c = 0; c < 3; ++c)
                        img[(c * P + y) * P + x] = static_cast<float>(s.color[static_cast<size_t>(c)]);
    }
    return img;
}

// Ground truth: pixels whose clean renders differ in any channel.
inline Tensor<uint8_t> change_mask(const Tensor<float>& clean_a, const Tensor<float>& clean_b) {
    const int64_t P = clean_a.shape[1];
    Tensor<uint8_t> mask({P, P});
    for (int64_t y = 0; y < P; ++y)
        for (int64_t x = 0; x < P; ++x) {
            bool diff = false;
            for (int64_t c = 0; c < 3 && !diff; ++c)
                diff = clean_a[(c * P + y) * P + x] != clean_b[(c * P + y) * P + x];
            mask[y * P + x] = diff ? 1 : 0;
        }
    return mask;
}

// Independent illumination drift (gain, bias, linear ramp) plus pixel noise.
inline Tensor<float> degrade(const Tensor<float>& clean, const SyntheticSpec& spec, RandomStream& rng) {
    const int64_t P = clean.shape[1];
    const double gain = rng.uniform(1.0 - spec.illum_drift, 1.0 + spec.illum_drift);
    const double bias = rng.uniform(-spec.illum_drift / 2.0, spec.illum_drift / 2.0);
    const double ramp = rng.uniform(0.0, spec.illum_drift / 2.0);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    Tensor<float> out(clean.shape);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < P; ++y)
            for (int64_t x = 0; x < P; ++x) {
                const double fy = static_cast<double>(y) / static_cast<double>(P) - 0.5;
                const double fx = static_cast<double>(x) / static_cast<double>(P) - 0.5;
                double v = clean[(c * P + y) * P + x] * gain + bias +
                           ramp * (fy * std::sin(theta) + fx * std::cos(theta)) + rng.normal() * spec.noise_sigma;
                out[(c * P + y) * P + x] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
    return out;
}

inline BiTemporalPair<float> make_pair(const SyntheticSpec& spec, int64_t index) {
    const SceneDesc d = build_scene(spec, index);
    auto clean_a = render_clean(d, spec, 'a');
    auto clean_b = render_clean(d, spec, 'b');
    BiTemporalPair<float> pair;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "pair_%05d", static_cast<int>(index));
    pair.id = buf;
    pair.label = change_mask(clean_a, clean_b);
    RandomStream rng = RandomStream(spec.seed).derive("degrade" + std::to_string(index));
    pair.image_a = degrade(clean_a, spec, rng);
    pair.image_b = degrade(clean_b, spec, rng);
    return pair;
}

}  // namespace synth

// Generates the dataset on disk and returns the manifests (train/val/test).
inline std::vector<DatasetManifest> generate_synthetic(const SyntheticSpec& spec, const std::string& root) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(root);

    const int64_t n_train = static_cast<int64_t>(std::round(spec.train_frac * static_cast<double>(spec.num_pairs)));
    const int64_t n_val = static_cast<int64_t>(std::round(spec.val_frac * static_cast<double>(spec.num_pairs)));
    std::vector<DatasetManifest> splits(3);
    splits[0].split_name = "train";
    splits[1].split_name = "val";
    splits[2].split_name = "test";
    for (auto& s : splits) s.patch_size = spec.patch;

    for (int64_t i = 0; i < spec.num_pairs; ++i) {
        auto pair = synth::make_pair(spec, i);
        save_pair(pair, root);
        PairRecord rec;
        rec.id = pair.id;
        rec.a = "A/" + pair.id + ".png";
        rec.b = "B/" + pair.id + ".png";
        rec.label = "label/" + pair.id + ".png";
        auto& split = splits[i < n_train ? 0 : (i < n_train + n_val ? 1 : 2)];
        split.labeled.push_back(rec);
    }
    save_manifest((fs::path(root) / "manifest.json").string(), splits);

    // provenance: the generating spec rides along with the dataset
    json j{{"num_pairs", spec.num_pairs}, {"patch", spec.patch},         {"shapes_min", spec.shapes_min},
           {"shapes_max", spec.shapes_max}, {"change_prob", spec.change_prob}, {"illum_drift", spec.illum_drift},
           {"noise_sigma", spec.noise_sigma}, {"train_frac", spec.train_frac}, {"val_frac", spec.val_frac},
           {"seed", spec.seed}};
    std::ofstream os((fs::path(root) / "synthetic.spec.json").string());
    os << j.dump(2) << "\n";
    return splits;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open synthetic spec: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DataError("synthetic spec parse error in " + path + ": " + e.what());
    }
    SyntheticSpec s;
    try {
        s.num_pairs = j.value("num_pairs", s.num_pairs);
        s.patch = j.value("patch", s.patch);
        s.shapes_min = j.value("shapes_min", s.shapes_min);
        s.shapes_max = j.value("shapes_max", s.shapes_max);
        s.change_prob = j.value("change_prob", s.change_prob);
        s.illum_drift = j.value("illum_drift", s.illum_drift);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.train_frac = j.value("train_frac", s.train_frac);
        s.val_frac = j.value("val_frac", s.val_frac);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw DataError("synthetic spec field error in " + path + ": " + e.what());
    }
    s.validate();
    return s;
}

}  // namespace hsacnet
