#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedleak/gradients.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak {

/// Flat binary container for named tensors, little-endian:
///   magic "FLTB" | u32 version (=1) | u32 tensor count |
///   per tensor: u32 name length | name bytes | u32 rank | u64 dims… |
///               f64 data, row-major.
/// Carries model parameters (server → user distribution) and saved
/// gradient bundles for offline attack replay.
namespace container {

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}
inline void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("tensor container: truncated");
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}
inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw std::runtime_error("tensor container: truncated");
    std::uint64_t v;
    std::memcpy(&v, in.data() + pos, 8);
    pos += 8;
    return v;
}

}  // namespace container

inline std::string save_tensors(std::span<const std::pair<std::string, Tensor>> tensors) {
    std::string out = "FLTB";
    container::put_u32(out, 1u);
    container::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        container::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        container::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) container::put_u64(out, d);
        const std::size_t bytes = t.size() * sizeof(double);
        const std::size_t at = out.size();
        out.resize(at + bytes);
        std::memcpy(out.data() + at, t.data.data(), bytes);
    }
    return out;
}

inline std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "FLTB") != 0)
        throw std::runtime_error("tensor container: bad magic");
    std::size_t pos = 4;
    const std::uint32_t version = container::get_u32(bytes, pos);
    if (version != 1) throw std::runtime_error("tensor container: unsupported version");
    const std::uint32_t count = container::get_u32(bytes, pos);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = container::get_u32(bytes, pos);
        if (pos + name_len > bytes.size()) throw std::runtime_error("tensor container: truncated");
        std::string name = bytes.substr(pos, name_len);
        pos += name_len;
        const std::uint32_t rank = container::get_u32(bytes, pos);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(container::get_u64(bytes, pos));
        Tensor t(shape);
        const std::size_t nbytes = t.size() * sizeof(double);
        if (pos + nbytes > bytes.size()) throw std::runtime_error("tensor container: truncated");
        std::memcpy(t.data.data(), bytes.data() + pos, nbytes);
        pos += nbytes;
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

/// Materialize a gradient bundle as value tensors for persistence; a
/// bundle rebuilt from them replays the attack offline.
inline std::vector<std::pair<std::string, Tensor>> bundle_value_tensors(const GradientBundle& g) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : g.layers()) {
        Tensor values = t;
        for (double& v : values.data) v *= g.scale();
        out.emplace_back(name, std::move(values));
    }
    return out;
}

inline GradientBundle bundle_from_tensors(std::vector<std::pair<std::string, Tensor>> tensors) {
    GradientBundle g;
    for (auto& [name, t] : tensors) g.add(name, t.shape) = std::move(t);
    return g;
}

inline void save_tensors_file(const std::string& path,
                              std::span<const std::pair<std::string, Tensor>> tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_tensors_file: cannot open " + path);
    const std::string bytes = save_tensors(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::pair<std::string, Tensor>> load_tensors_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_tensors_file: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return load_tensors(bytes);
}

}  // namespace fedleak
