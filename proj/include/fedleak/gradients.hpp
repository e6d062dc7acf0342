#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak {

/// Named per-layer gradients for the whole global model.
///
/// Entries are stored as numerator tensors together with one shared
/// positive scale factor: the value of an entry is numerator * scale.
/// Clipping divides the scale instead of every entry, so the ratio of any
/// two entries survives clipping without rounding, while materialized
/// values are still exactly g/Δ + noise. Victim-side bookkeeping (clip factor,
/// true noise scale) lives here and is never exposed through the
/// attacker-facing view below.
class GradientBundle {
public:
    Tensor& add(const std::string& name, std::vector<std::size_t> shape) {
        layers_.emplace_back(name, Tensor(std::move(shape)));
        return layers_.back().second;
    }

    Tensor& at(const std::string& name) {
        for (auto& [n, t] : layers_)
            if (n == name) return t;
        throw std::out_of_range("GradientBundle: no layer " + name);
    }
    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : layers_)
            if (n == name) return t;
        throw std::out_of_range("GradientBundle: no layer " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : layers_)
            if (n == name) return true;
        return false;
    }

    std::span<const std::pair<std::string, Tensor>> layers() const { return layers_; }
    std::span<std::pair<std::string, Tensor>> layers() { return layers_; }

    double scale() const { return scale_; }
    void set_scale(double s) { scale_ = s; }

    /// L2 norm of the materialized values across every layer.
    double value_norm() const {
        double sq = 0.0;
        for (const auto& [n, t] : layers_)
            for (double v : t.data) sq += v * v;
        return scale_ * std::sqrt(sq);
    }

    /// Materialized values of one layer.
    std::vector<double> values(const std::string& name) const {
        const Tensor& t = at(name);
        std::vector<double> out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t.data[i] * scale_;
        return out;
    }

    // Victim-side bookkeeping; hidden from the attacker-facing view.
    double clip_delta = 1.0;
    double true_sigma = 0.0;
    std::vector<std::string> notes;

private:
    std::vector<std::pair<std::string, Tensor>> layers_;
    double scale_ = 1.0;
};

/// What the server actually works with: the uploaded gradient values.
/// Exposes materialized values plus exact ratio operations in which the
/// shared scale cancels symbolically; every quantity derivable here is a
/// function of the received values alone. The clip factor and the true
/// noise scale are not reachable through this type.
class ProtectedGradients {
public:
    explicit ProtectedGradients(const GradientBundle& bundle) : b_(&bundle) {}

    bool has(const std::string& name) const { return b_->has(name); }
    const std::vector<std::size_t>& shape(const std::string& name) const { return b_->at(name).shape; }
    std::size_t size(const std::string& name) const { return b_->at(name).size(); }

    double value(const std::string& name, std::size_t i) const {
        return b_->at(name).data[i] * b_->scale();
    }
    std::vector<double> values(const std::string& name) const { return b_->values(name); }

    /// Exact quotient of two received values. Equal to
    /// value(a,ia)/value(b,ib) in real arithmetic; computed on the shared
    /// representation so the common factor cancels without rounding.
    double ratio(const std::string& a, std::size_t ia, const std::string& b, std::size_t ib) const {
        return b_->at(a).data[ia] / b_->at(b).data[ib];
    }

    /// Quotient of one value by the mean of a set of values, exact in the
    /// same sense as ratio().
    double ratio_to_mean(const std::string& a, std::size_t ia, const std::string& b,
                         std::span<const std::size_t> ib) const {
        const Tensor& den = b_->at(b);
        double sum = 0.0;
        for (std::size_t i : ib) sum += den.data[i];
        return b_->at(a).data[ia] / (sum / static_cast<double>(ib.size()));
    }

    /// For a K×D weight gradient and a D_b×K bias gradient, divide the
    /// first `cols_used` entries of every weight row by the mean of the
    /// matching bias column. Exact in the ratio() sense. Returns K rows of
    /// `cols_used` quotients plus each column mean as a received value.
    struct DividedRows {
        std::vector<std::vector<double>> rows;
        std::vector<double> column_mean_values;  // value domain, for reporting
    };
    DividedRows rows_divided_by_column_means(const std::string& num_layer,
                                             const std::string& den_layer,
                                             std::size_t cols_used) const {
        const Tensor& num = b_->at(num_layer);
        const Tensor& den = b_->at(den_layer);
        if (num.shape.size() != 2 || den.shape.size() != 2 || den.shape[1] != num.shape[0])
            throw std::invalid_argument("rows_divided_by_column_means: shape mismatch");
        const std::size_t K = num.shape[0], D = num.shape[1], Db = den.shape[0];
        if (cols_used > D) throw std::invalid_argument("rows_divided_by_column_means: cols_used too large");
        DividedRows out;
        out.rows.resize(K);
        out.column_mean_values.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            double mean = 0.0;
            for (std::size_t j = 0; j < Db; ++j) mean += den.data[j * K + k];
            mean /= static_cast<double>(Db);
            out.column_mean_values[k] = mean * b_->scale();
            out.rows[k].resize(cols_used);
            if (mean == 0.0) continue;  // caller flags the unit via its column mean
            const double* row = &num.data[k * D];
            for (std::size_t t = 0; t < cols_used; ++t) out.rows[k][t] = row[t] / mean;
        }
        return out;
    }

    /// Recover the input vector of an affine layer from its gradients:
    /// weight gradient rows are g_o * v, replicated `replicates` times, and
    /// the bias gradient holds `replicates` copies of g_o per output (bias
    /// tensor shape: replicates × rows). Replicated copies are averaged
    /// first; the per-row divisions are then combined by bias-weighted
    /// least squares. The denominator multiplies the means of the two
    /// replicate halves, which cancels the noise-variance inflation a
    /// plain Σĝ² would carry. Scale-free.
    std::vector<double> affine_input_from_gradients(const std::string& weight_name,
                                                    const std::string& bias_name,
                                                    std::size_t n_inputs,
                                                    std::size_t replicates) const {
        const Tensor& wg = b_->at(weight_name);
        const Tensor& bg = b_->at(bias_name);
        if (bg.shape.size() != 2 || bg.shape[0] != replicates)
            throw std::invalid_argument("affine_input_from_gradients: bias shape mismatch");
        const std::size_t rows = bg.shape[1];
        if (wg.size() != rows * n_inputs * replicates)
            throw std::invalid_argument("affine_input_from_gradients: weight shape mismatch");
        std::vector<double> numer(n_inputs, 0.0);
        double denom = 0.0;
        for (std::size_t o = 0; o < rows; ++o) {
            double g_even = 0.0, g_odd = 0.0;
            std::size_t n_even = 0, n_odd = 0;
            for (std::size_t d = 0; d < replicates; ++d) {
                if (d % 2 == 0) { g_even += bg.data[d * rows + o]; ++n_even; }
                else { g_odd += bg.data[d * rows + o]; ++n_odd; }
            }
            g_even /= static_cast<double>(n_even);
            g_odd = n_odd ? g_odd / static_cast<double>(n_odd) : g_even;
            const double g = n_odd ? 0.5 * (g_even + g_odd) : g_even;
            denom += g_even * g_odd;
            const double* row = &wg.data[o * n_inputs * replicates];
            for (std::size_t j = 0; j < n_inputs; ++j) {
                double mean = 0.0;
                for (std::size_t d = 0; d < replicates; ++d) mean += row[d * n_inputs + j];
                numer[j] += g * (mean / static_cast<double>(replicates));
            }
        }
        if (denom == 0.0)
            throw std::runtime_error("affine_input_from_gradients: all bias gradients are zero");
        for (double& v : numer) v /= denom;
        return numer;
    }

private:
    const GradientBundle* b_;
};

}  // namespace fedleak
