#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace reform {

// Row-major dense float matrix. Owns its storage.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> flat() { return data_; }
    std::span<const float> flat() const { return data_; }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    // An empty matrix takes its width from the first appended row.
    void append_row(std::span<const float> r) {
        if (rows_ == 0) cols_ = r.size();
        assert(r.size() == cols_);
        data_.insert(data_.end(), r.begin(), r.end());
        ++rows_;
    }

    Matrix slice_rows(std::size_t begin, std::size_t end) const {
        assert(begin <= end && end <= rows_);
        Matrix out(end - begin, cols_);
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                  data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// Eight interleaved partial sums (fixed order, so results are reproducible)
// let the compiler vectorize without reassociation flags.
inline float dot(std::span<const float> a, std::span<const float> b) {
    assert(a.size() == b.size());
    const std::size_t n = a.size();
    float acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    }
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// y += a * x
inline void axpy(float a, std::span<const float> x, std::span<float> y) {
    assert(x.size() == y.size());
    const float* __restrict xs = x.data();
    float* __restrict ys = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) ys[i] += a * xs[i];
}

inline float l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// out[t, o] = sum_i x[t, i] * w[o, i]   (w stored [out_features, in_features])
inline Matrix matmul_nt(const Matrix& x, const Matrix& w) {
    assert(x.cols() == w.cols());
    Matrix out(x.rows(), w.rows());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        auto orow = out.row(t);
        for (std::size_t o = 0; o < w.rows(); ++o) {
            orow[o] = dot(xr, w.row(o));
        }
    }
    return out;
}

inline Matrix rms_norm(const Matrix& x, std::span<const float> weight, float eps) {
    assert(weight.size() == x.cols());
    Matrix out(x.rows(), x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        const float ms = dot(xr, xr) / static_cast<float>(x.cols());
        const float inv = 1.0f / std::sqrt(ms + eps);
        auto orow = out.row(t);
        for (std::size_t i = 0; i < x.cols(); ++i) {
            orow[i] = xr[i] * inv * weight[i];
        }
    }
    return out;
}

inline float silu(float v) { return v / (1.0f + std::exp(-v)); }

// In-place numerically stable softmax.
inline void softmax(std::span<float> v) {
    if (v.empty()) {
        return;
    }
    const float mx = *std::max_element(v.begin(), v.end());
    float sum = 0.0f;
    for (auto& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (auto& x : v) {
        x /= sum;
    }
}

// Index of the largest value; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const float> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

inline bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

} // namespace reform
