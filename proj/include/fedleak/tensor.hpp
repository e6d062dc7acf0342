#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedleak {

/// Dense row-major array of 64-bit floats. The only tensor type in the
/// library; every layer parameter, gradient and image batch lives in one.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
        : shape(std::move(dims)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw std::out_of_range("Tensor::dim: axis " + std::to_string(i));
        return shape[i];
    }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // Row-major offset helpers for the ranks actually used in the project.
    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at3(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * shape[1] + h) * shape[2] + w];
    }
    double at3(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * shape[1] + h) * shape[2] + w];
    }
    double& at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool operator==(const Tensor& other) const {
        return shape == other.shape && data == other.data;
    }

    /// Throws if any entry is NaN or infinite. Public operations call this
    /// on their results so corrupt values cannot propagate silently.
    void ensure_finite(const std::string& what) const {
        for (double v : data) {
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite value in " + what);
        }
    }
};

/// Extract sample b of a B×C×H×W tensor as a C×H×W tensor.
inline Tensor slice_sample(const Tensor& batch, std::size_t b) {
    if (batch.shape.size() != 4) throw std::invalid_argument("slice_sample: rank-4 tensor expected");
    const std::size_t per = batch.size() / batch.shape[0];
    Tensor out({batch.shape[1], batch.shape[2], batch.shape[3]});
    std::copy(batch.data.begin() + b * per, batch.data.begin() + (b + 1) * per, out.data.begin());
    return out;
}

}  // namespace fedleak
