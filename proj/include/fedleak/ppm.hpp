#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "fedleak/tensor.hpp"

namespace fedleak {

struct PpmParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Serialize a C×H×W image with pixels in [0,1] as binary PPM (P6, C=3) or
/// PGM (P5, C=1), maxval 255, rounding half-up.
inline std::string write_ppm(const Tensor& image) {
    if (image.shape.size() != 3) throw std::invalid_argument("write_ppm: C×H×W tensor expected");
    const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
    if (C != 1 && C != 3) throw std::invalid_argument("write_ppm: 1 or 3 channels expected");
    for (double v : image.data)
        if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("write_ppm: pixel outside [0,1]");

    std::string out = (C == 3 ? "P6\n" : "P5\n");
    out += std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + C * H * W);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c) {
                const auto q = static_cast<unsigned char>(std::floor(image.at3(c, h, w) * 255.0 + 0.5));
                out.push_back(static_cast<char>(q));
            }
    return out;
}

namespace detail {

inline int ppm_read_token(const std::string& bytes, std::size_t& pos) {
    // Skip whitespace and '#' comments, then read a decimal integer.
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
        throw PpmParseError("ppm: malformed header");
    int value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        value = value * 10 + (bytes[pos] - '0');
        ++pos;
    }
    return value;
}

}  // namespace detail

/// Parse binary P5/P6 with maxval 255. Truncated payloads and malformed
/// headers raise PpmParseError.
inline Tensor read_ppm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw PpmParseError("ppm: not a binary P5/P6 file");
    const std::size_t C = bytes[1] == '6' ? 3 : 1;
    std::size_t pos = 2;
    const int W = detail::ppm_read_token(bytes, pos);
    const int H = detail::ppm_read_token(bytes, pos);
    const int maxval = detail::ppm_read_token(bytes, pos);
    if (W <= 0 || H <= 0) throw PpmParseError("ppm: bad dimensions");
    if (maxval != 255) throw PpmParseError("ppm: maxval 255 expected");
    if (pos >= bytes.size()) throw PpmParseError("ppm: truncated header");
    ++pos;  // single whitespace byte before the payload

    const std::size_t need = static_cast<std::size_t>(W) * static_cast<std::size_t>(H) * C;
    if (bytes.size() - pos < need) throw PpmParseError("ppm: truncated payload");

    Tensor image({C, static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    for (std::size_t h = 0; h < static_cast<std::size_t>(H); ++h)
        for (std::size_t w = 0; w < static_cast<std::size_t>(W); ++w)
            for (std::size_t c = 0; c < C; ++c) {
                const auto q = static_cast<unsigned char>(bytes[pos++]);
                image.at3(c, h, w) = static_cast<double>(q) / 255.0;
            }
    return image;
}

inline void write_ppm_file(const std::string& path, const Tensor& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm_file: cannot open " + path);
    const std::string bytes = write_ppm(image);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Tensor read_ppm_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm_file: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return read_ppm(bytes);
}

/// Binary masks travel as P5 files with values {0, 255}.
inline std::string write_mask_pgm(const Tensor& mask_1hw) {
    if (mask_1hw.shape.size() != 3 || mask_1hw.shape[0] != 1)
        throw std::invalid_argument("write_mask_pgm: 1×H×W tensor expected");
    return write_ppm(mask_1hw);  // {0,1} quantizes to bytes 0/255
}

inline Tensor read_mask_pgm(const std::string& bytes) {
    Tensor img = read_ppm(bytes);
    if (img.shape[0] != 1) throw PpmParseError("mask pgm: single channel expected");
    for (double& v : img.data) v = v >= 0.5 ? 1.0 : 0.0;
    return img;
}

}  // namespace fedleak
