#pragma once
// Core data model: bi-temporal pairs, dataset manifests, validation,
// loading. The manifest is one JSON file at the dataset root describing the
// train/val/test splits; labeled records carry a mask path, unlabeled ones
// do not.
//
// Directory layout: <root>/A/<id>.png, <root>/B/<id>.png,
// <root>/label/<id>.png, <root>/manifest.json.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include "hsacnet/image.hpp"

namespace hsacnet {

using json = nlohmann::json;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class T = float>
struct BiTemporalPair {
    Tensor<T> image_a;            // (3,H,W) in [0,1]
    Tensor<T> image_b;            // (3,H,W) in [0,1]
    Tensor<uint8_t> label;        // (H,W) in {0,1}; empty when unlabeled
    std::string id;

    bool has_label() const { return label.numel() > 0; }
    int64_t height() const { return image_a.shape[1]; }
    int64_t width() const { return image_a.shape[2]; }
};

struct PairRecord {
    std::string id;
    std::string a;      // path relative to the dataset root
    std::string b;
    std::string label;  // empty for unlabeled records

    bool labeled() const { return !label.empty(); }
};

struct DatasetManifest {
    std::string split_name;
    int64_t patch_size = 0;
    std::vector<PairRecord> labeled;
    std::vector<PairRecord> unlabeled;

    int64_t size() const { return static_cast<int64_t>(labeled.size() + unlabeled.size()); }
};

inline void to_json(json& j, const PairRecord& r) {
    j = json{{"id", r.id}, {"a", r.a}, {"b", r.b}};
    if (!r.label.empty()) j["label"] = r.label;
}

inline void from_json(const json& j, PairRecord& r) {
    j.at("id").get_to(r.id);
    j.at("a").get_to(r.a);
    j.at("b").get_to(r.b);
    r.label = j.value("label", "");
}

// All splits stored in one manifest file.
inline void save_manifest(const std::string& path, const std::vector<DatasetManifest>& splits) {
    json j;
    for (const auto& m : splits) {
        check(m.patch_size > 0, "manifest: patch_size must be positive");
        j["patch_size"] = m.patch_size;
        json s;
        s["labeled"] = m.labeled;
        s["unlabeled"] = m.unlabeled;
        j["splits"][m.split_name] = std::move(s);
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

inline std::vector<DatasetManifest> load_manifests(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    std::vector<DatasetManifest> out;
    try {
        const int64_t patch = j.at("patch_size").get<int64_t>();
        for (auto& [name, s] : j.at("splits").items()) {
            DatasetManifest m;
            m.split_name = name;
            m.patch_size = patch;
            m.labeled = s.value("labeled", std::vector<PairRecord>{});
            m.unlabeled = s.value("unlabeled", std::vector<PairRecord>{});
            out.push_back(std::move(m));
        }
    } catch (const json::exception& e) {
        throw DataError("manifest field error in " + path + ": " + e.what());
    }
    return out;
}

inline DatasetManifest load_manifest_split(const std::string& path, const std::string& split) {
    for (auto& m : load_manifests(path))
        if (m.split_name == split) return m;
    throw DataError("manifest " + path + " has no split named '" + split + "'");
}

struct Violation {
    std::string pair_id;
    std::string kind;  // missing-file | size-mismatch | duplicate-id | missing-label | bad-channels
    std::string detail;

    std::string str() const { return "[" + kind + "] " + pair_id + ": " + detail; }
};

// Empty result iff every referenced file exists, every labeled pair has a
// mask of matching size, and ids are unique. Pure: touches only file
// metadata and PNG headers.
inline std::vector<Violation> validate_manifest(const DatasetManifest& m, const std::string& root) {
    namespace fs = std::filesystem;
    std::vector<Violation> out;
    std::set<std::string> seen;
    auto probe = [&](const PairRecord& r, const std::string& rel,
                     const char* role) -> std::optional<std::array<int64_t, 3>> {
        const auto path = fs::path(root) / rel;
        if (!fs::exists(path)) {
            out.push_back({r.id, "missing-file", std::string(role) + " " + path.string()});
            return std::nullopt;
        }
        try {
            return read_png_size(path.string());
        } catch (const ImageError& e) {
            out.push_back({r.id, "bad-image", e.what()});
            return std::nullopt;
        }
    };
    auto visit = [&](const PairRecord& r, bool labeled) {
        if (!seen.insert(r.id).second) out.push_back({r.id, "duplicate-id", "id appears more than once"});
        if (labeled && r.label.empty()) {
            out.push_back({r.id, "missing-label", "labeled record lacks a mask path"});
            return;
        }
        auto sa = probe(r, r.a, "image A");
        auto sb = probe(r, r.b, "image B");
        if (sa && sb && ((*sa)[0] != (*sb)[0] || (*sa)[1] != (*sb)[1]))
            out.push_back({r.id, "size-mismatch", "A and B differ: " + std::to_string((*sa)[0]) + "x" +
                                                      std::to_string((*sa)[1]) + " vs " + std::to_string((*sb)[0]) +
                                                      "x" + std::to_string((*sb)[1])});
        if (labeled) {
            auto sl = probe(r, r.label, "label");
            if (sa && sl && ((*sa)[0] != (*sl)[0] || (*sa)[1] != (*sl)[1]))
                out.push_back({r.id, "size-mismatch",
                               "label is " + std::to_string((*sl)[0]) + "x" + std::to_string((*sl)[1]) +
                                   ", images are " + std::to_string((*sa)[0]) + "x" + std::to_string((*sa)[1])});
        }
    };
    for (const auto& r : m.labeled) visit(r, true);
    for (const auto& r : m.unlabeled) visit(r, false);
    return out;
}

// Loads and normalizes one pair; throws DataError on undecodable files,
// channel mismatches or size mismatches (no partial object).
template <class T = float>
BiTemporalPair<T> load_pair(const PairRecord& rec, const std::string& root) {
    namespace fs = std::filesystem;
    auto read3 = [&](const std::string& rel, const char* role) {
        ImageU8 img;
        try {
            img = read_png((fs::path(root) / rel).string());
        } catch (const ImageError& e) {
            throw DataError("pair " + rec.id + ": " + e.what());
        }
        if (img.channels != 3)
            throw DataError("pair " + rec.id + ": " + role + " has " + std::to_string(img.channels) +
                            " channels, expected 3");
        return img;
    };
    auto a = read3(rec.a, "image A");
    auto b = read3(rec.b, "image B");
    if (a.h != b.h || a.w != b.w)
        throw DataError("pair " + rec.id + ": image sizes differ (" + std::to_string(a.h) + "x" +
                        std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
    BiTemporalPair<T> out;
    out.id = rec.id;
    out.image_a = image_to_chw<T>(a);
    out.image_b = image_to_chw<T>(b);
    if (rec.labeled()) {
        ImageU8 l;
        try {
            l = read_png((fs::path(root) / rec.label).string());
        } catch (const ImageError& e) {
            throw DataError("pair " + rec.id + ": " + e.what());
        }
        if (l.channels != 1)
            throw DataError("pair " + rec.id + ": label has " + std::to_string(l.channels) +
                            " channels, expected 1");
        if (l.h != a.h || l.w != a.w)
            throw DataError("pair " + rec.id + ": label size differs from images");
        out.label = image_to_mask(l);
    }
    return out;
}

// Writes A/B (and label when present) under the standard layout.
template <class T>
void save_pair(const BiTemporalPair<T>& pair, const std::string& root) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "A");
    fs::create_directories(fs::path(root) / "B");
    write_png((fs::path(root) / "A" / (pair.id + ".png")).string(), chw_to_image(pair.image_a));
    write_png((fs::path(root) / "B" / (pair.id + ".png")).string(), chw_to_image(pair.image_b));
    if (pair.has_label()) {
        fs::create_directories(fs::path(root) / "label");
        write_png((fs::path(root) / "label" / (pair.id + ".png")).string(), mask_to_image(pair.label));
    }
}

}  // namespace hsacnet
