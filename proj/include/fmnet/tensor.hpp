#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmnet {

/// Heap storage aligned for the widest SIMD loads, so vectorised kernels take
/// the same code path (and summation order) wherever a buffer happens to live.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense NCHW tensor. Fully-connected activations use (N, F, 1, 1).
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    AlignedVector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_ = 1, int w_ = 1, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool empty() const { return data.empty(); }
    [[nodiscard]] int spatial() const { return h * w; }
    /// Per-sample element count.
    [[nodiscard]] int features() const { return c * h * w; }
    [[nodiscard]] std::array<int, 4> shape() const { return {n, c, h, w}; }

    T& at(int in, int ic, int iy, int ix) {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    const T& at(int in, int ic, int iy, int ix) const {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    std::span<T> sample(int i) {
        return {data.data() + static_cast<std::size_t>(i) * features(),
                static_cast<std::size_t>(features())};
    }
    std::span<const T> sample(int i) const {
        return {data.data() + static_cast<std::size_t>(i) * features(),
                static_cast<std::size_t>(features())};
    }

    /// Same data viewed as (N, C*H*W, 1, 1).
    [[nodiscard]] Tensor flattened() const {
        Tensor out = *this;
        out.c = features();
        out.h = out.w = 1;
        return out;
    }
    [[nodiscard]] Tensor reshaped(int c_, int h_, int w_) const {
        if (c_ * h_ * w_ != features())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor out = *this;
        out.c = c_;
        out.h = h_;
        out.w = w_;
        return out;
    }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// (N, F) view of a tensor, one row per sample.
template <typename T>
MatrixMap<T> rows_of(Tensor<T>& t) {
    return {t.data.data(), t.n, t.features()};
}
template <typename T>
ConstMatrixMap<T> rows_of(const Tensor<T>& t) {
    return {t.data.data(), t.n, t.features()};
}

std::string shape_string(const std::array<int, 4>& s);

template <typename T>
void require_shape(const Tensor<T>& t, int c, int h, int w, const char* where) {
    if (t.c != c || t.h != h || t.w != w) {
        throw std::invalid_argument(std::string(where) + ": expected per-sample shape (" +
                                    std::to_string(h) + "," + std::to_string(w) + "," +
                                    std::to_string(c) + "), got (" + std::to_string(t.h) +
                                    "," + std::to_string(t.w) + "," + std::to_string(t.c) + ")");
    }
}

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& t) {
    Tensor<U> out(t.n, t.c, t.h, t.w);
    for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
    return out;
}

}  // namespace fmnet
