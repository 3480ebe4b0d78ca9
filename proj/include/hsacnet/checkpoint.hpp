#pragma once
// Flat name -> tensor archive used for every checkpoint. Binary layout:
//   magic "HSCKPT01", u32 entry count, then per entry:
//   u16 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//   u8 ndim, u32 dims..., raw little-endian payload.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsacnet/tensor.hpp"

namespace hsacnet {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail_ckpt {
inline constexpr char kMagic[9] = "HSCKPT01";

template <class T>
uint8_t dtype_code();
template <>
inline uint8_t dtype_code<float>() {
    return 0;
}
template <>
inline uint8_t dtype_code<double>() {
    return 1;
}

template <class U>
void write_pod(std::ostream& os, const U& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
template <class U>
U read_pod(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    return v;
}
}  // namespace detail_ckpt

template <class T>
void save_archive(const std::string& path, const std::vector<std::pair<std::string, const Tensor<T>*>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write(detail_ckpt::kMagic, 8);
    detail_ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        detail_ckpt::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail_ckpt::write_pod<uint8_t>(os, detail_ckpt::dtype_code<T>());
        detail_ckpt::write_pod<uint8_t>(os, static_cast<uint8_t>(t->shape.size()));
        for (int64_t d : t->shape) detail_ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->numel() * sizeof(T)));
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

// Loads every entry, converting the stored scalar type to T.
template <class T>
std::map<std::string, Tensor<T>> load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail_ckpt::kMagic, 8) != 0)
        throw CheckpointError("not a checkpoint archive: " + path);
    const uint32_t count = detail_ckpt::read_pod<uint32_t>(is);
    std::map<std::string, Tensor<T>> out;
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t nlen = detail_ckpt::read_pod<uint16_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const uint8_t dtype = detail_ckpt::read_pod<uint8_t>(is);
        const uint8_t ndim = detail_ckpt::read_pod<uint8_t>(is);
        Shape shape(ndim);
        for (uint8_t i = 0; i < ndim; ++i) shape[i] = detail_ckpt::read_pod<uint32_t>(is);
        Tensor<T> t(shape);
        if (dtype == detail_ckpt::dtype_code<T>()) {
            is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
        } else if (dtype == 0) {
            std::vector<float> buf(static_cast<size_t>(t.numel()));
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
        } else if (dtype == 1) {
            std::vector<double> buf(static_cast<size_t>(t.numel()));
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
        } else {
            throw CheckpointError("unknown dtype in checkpoint: " + path);
        }
        if (!is) throw CheckpointError("truncated checkpoint: " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace hsacnet
