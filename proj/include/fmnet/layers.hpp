#pragma once

#include "fmnet/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fmnet {

/// Learnable tensor with its accumulated gradient.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    AlignedVector<T> value;
    AlignedVector<T> grad;

    Param() = default;
    Param(std::string name_, std::vector<int> shape_);
    [[nodiscard]] std::size_t size() const { return value.size(); }
    void zero_grad();
};

/// Non-learnable persistent state (batch-norm running statistics).
template <typename T>
struct Buffer {
    std::string name;
    AlignedVector<T> value;
};

/// How a forward pass behaves. `training` selects batch statistics in batch
/// normalization (and updates running statistics); `record` keeps the
/// activations needed by backward().
struct Pass {
    bool training = false;
    bool record = false;

    static constexpr Pass train() { return {true, true}; }
    static constexpr Pass train_no_grad() { return {true, false}; }
    static constexpr Pass frozen() { return {false, true}; }
    static constexpr Pass infer() { return {false, false}; }
};

/// Geometry of a 2-D convolution as seen by im2col.
struct ConvGeometry {
    int channels = 0;
    int in_h = 0, in_w = 0;
    int kernel = 0, stride = 1, pad = 0;
    int out_h = 0, out_w = 0;

    static ConvGeometry make(int channels, int in_h, int in_w, int kernel, int stride, int pad);
    [[nodiscard]] int rows() const { return channels * kernel * kernel; }
};

/// Unfolds a (N,C,H,W) batch into a (C*k*k, N*out_h*out_w) matrix.
template <typename T>
void im2col(const T* x, int batch, const ConvGeometry& g, T* cols);
/// Adjoint of im2col; accumulates into x.
template <typename T>
void col2im(const T* cols, int batch, const ConvGeometry& g, T* x);

/// (N,C,H,W) -> (C, N*H*W) and back.
template <typename T>
RowMatrix<T> channel_major(const Tensor<T>& t);
template <typename T>
void from_channel_major(const RowMatrix<T>& m, Tensor<T>& t);

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_features, int out_features);

    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void init(std::mt19937_64& rng);
    void zero();

    [[nodiscard]] int in_features() const { return in_; }
    [[nodiscard]] int out_features() const { return out_; }
    std::vector<Param<T>*> params() { return {&weight, &bias}; }

    Param<T> weight, bias;

private:
    int in_ = 0, out_ = 0;
    Tensor<T> input_;
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad);

    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void init(std::mt19937_64& rng);
    void zero();
    std::vector<Param<T>*> params() { return {&weight, &bias}; }
    [[nodiscard]] ConvGeometry geometry(int in_h, int in_w) const;

    Param<T> weight, bias;

private:
    Tensor<T> forward_direct(const Tensor<T>& x, const ConvGeometry& g, Pass pass);
    Tensor<T> backward_direct(const Tensor<T>& grad_out);

    int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    ConvGeometry geom_;
    int batch_ = 0;
    bool direct_ = false;
    RowMatrix<T> cols_;
    Tensor<T> input_;
};

/// Transposed convolution; weight layout (in_channels, out_channels, k, k).
template <typename T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                    int pad, int output_pad);

    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void init(std::mt19937_64& rng);
    void zero();
    std::vector<Param<T>*> params() { return {&weight, &bias}; }
    [[nodiscard]] std::pair<int, int> output_size(int in_h, int in_w) const;

    Param<T> weight, bias;

private:
    int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0, out_pad_ = 0;
    ConvGeometry geom_;  // convolution mapping the output back onto the input grid
    int batch_ = 0, in_h_ = 0, in_w_ = 0;
    RowMatrix<T> input_cm_;
};

/// Per-channel batch normalization over (N, H, W); covers both the 1-d and 2-d cases.
template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(std::string name, int channels, T momentum = T(0.1), T eps = T(1e-5));

    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void init();
    std::vector<Param<T>*> params() { return {&gamma, &beta}; }
    std::vector<Buffer<T>*> buffers() { return {&running_mean, &running_var}; }

    Param<T> gamma, beta;
    Buffer<T> running_mean, running_var;

private:
    int channels_ = 0;
    T momentum_ = T(0.1), eps_ = T(1e-5);
    bool cached_training_ = false;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);

private:
    Tensor<T> output_;
};

template <typename T>
class Sigmoid {
public:
    Tensor<T> forward(const Tensor<T>& x, Pass pass);
    Tensor<T> backward(const Tensor<T>& grad_out);

private:
    Tensor<T> output_;
};

template <typename T>
T sigmoid(T x);

}  // namespace fmnet
