#include "fmnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fmnet {

std::string shape_string(const std::array<int, 4>& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[2]) + "," + std::to_string(s[3]) +
           "," + std::to_string(s[1]) + ")";
}

template <typename T>
Param<T>::Param(std::string name_, std::vector<int> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, T(0));
    grad.assign(count, T(0));
}

template <typename T>
void Param<T>::zero_grad() {
    std::fill(grad.begin(), grad.end(), T(0));
}

namespace {

template <typename T>
void uniform_fill(AlignedVector<T>& v, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace

ConvGeometry ConvGeometry::make(int channels, int in_h, int in_w, int kernel, int stride,
                                int pad) {
    ConvGeometry g;
    g.channels = channels;
    g.in_h = in_h;
    g.in_w = in_w;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
    g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
    return g;
}

template <typename T>
void im2col(const T* x, int batch, const ConvGeometry& g, T* cols) {
    const int plane = g.out_h * g.out_w;
    const std::size_t row_len = static_cast<std::size_t>(batch) * plane;
    for (int c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                T* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
                for (int n = 0; n < batch; ++n) {
                    const T* src = x + (static_cast<std::size_t>(n) * g.channels + c) * g.in_h * g.in_w;
                    T* dst = row + static_cast<std::size_t>(n) * plane;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        T* out = dst + oy * g.out_w;
                        if (iy < 0 || iy >= g.in_h) {
                            std::fill(out, out + g.out_w, T(0));
                            continue;
                        }
                        const T* line = src + iy * g.in_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            out[ox] = (ix >= 0 && ix < g.in_w) ? line[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int batch, const ConvGeometry& g, T* x) {
    const int plane = g.out_h * g.out_w;
    const std::size_t row_len = static_cast<std::size_t>(batch) * plane;
    for (int c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const T* row =
                    cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
                for (int n = 0; n < batch; ++n) {
                    T* dst = x + (static_cast<std::size_t>(n) * g.channels + c) * g.in_h * g.in_w;
                    const T* src = row + static_cast<std::size_t>(n) * plane;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        T* line = dst + iy * g.in_w;
                        const T* in = src + oy * g.out_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < g.in_w) line[ix] += in[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
RowMatrix<T> channel_major(const Tensor<T>& t) {
    const int plane = t.spatial();
    RowMatrix<T> m(t.c, static_cast<Eigen::Index>(t.n) * plane);
    for (int n = 0; n < t.n; ++n)
        for (int c = 0; c < t.c; ++c)
            std::copy_n(t.data.data() + (static_cast<std::size_t>(n) * t.c + c) * plane, plane,
                        m.data() + static_cast<std::size_t>(c) * m.cols() +
                            static_cast<std::size_t>(n) * plane);
    return m;
}

template <typename T>
void from_channel_major(const RowMatrix<T>& m, Tensor<T>& t) {
    const int plane = t.spatial();
    for (int n = 0; n < t.n; ++n)
        for (int c = 0; c < t.c; ++c)
            std::copy_n(m.data() + static_cast<std::size_t>(c) * m.cols() +
                            static_cast<std::size_t>(n) * plane,
                        plane, t.data.data() + (static_cast<std::size_t>(n) * t.c + c) * plane);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}),
      bias(name + ".bias", {out_features}),
      in_(in_features),
      out_(out_features) {}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    uniform_fill(weight.value, bound, rng);
    uniform_fill(bias.value, bound, rng);
}

template <typename T>
void Linear<T>::zero() {
    std::fill(weight.value.begin(), weight.value.end(), T(0));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Pass pass) {
    if (x.features() != in_)
        throw std::invalid_argument(weight.name + ": expected " + std::to_string(in_) +
                                    " input features, got " + std::to_string(x.features()));
    Tensor<T> y(x.n, out_);
    ConstMatrixMap<T> w(weight.value.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value.data(), out_);
    auto ym = rows_of(y);
    ym.noalias() = rows_of(x) * w.transpose();
    ym.rowwise() += b;
    if (pass.record) input_ = x;
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
    ConstMatrixMap<T> w(weight.value.data(), out_, in_);
    MatrixMap<T> gw(weight.grad.data(), out_, in_);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bias.grad.data(), out_);
    auto g = rows_of(grad_out);
    gw.noalias() += g.transpose() * rows_of(input_);
    gb += g.colwise().sum();
    Tensor<T> gx(grad_out.n, input_.c, input_.h, input_.w);
    rows_of(gx).noalias() = g * w;
    return gx;
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int pad)
    : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias(name + ".bias", {out_channels}),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad) {}

template <typename T>
ConvGeometry Conv2d<T>::geometry(int in_h, int in_w) const {
    return ConvGeometry::make(cin_, in_h, in_w, k_, stride_, pad_);
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * k_ * k_));
    uniform_fill(weight.value, bound, rng);
    uniform_fill(bias.value, bound, rng);
}

template <typename T>
void Conv2d<T>::zero() {
    std::fill(weight.value.begin(), weight.value.end(), T(0));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Pass pass) {
    if (x.c != cin_)
        throw std::invalid_argument(weight.name + ": expected " + std::to_string(cin_) +
                                    " channels, got " + std::to_string(x.c));
    const ConvGeometry g = geometry(x.h, x.w);
    if (stride_ == 1 && cout_ <= 4) return forward_direct(x, g, pass);
    const Eigen::Index plane = static_cast<Eigen::Index>(g.out_h) * g.out_w;
    RowMatrix<T> cols(g.rows(), plane * x.n);
    im2col(x.data.data(), x.n, g, cols.data());

    ConstMatrixMap<T> w(weight.value.data(), cout_, g.rows());
    RowMatrix<T> y = w * cols;
    for (int c = 0; c < cout_; ++c) y.row(c).array() += bias.value[c];

    Tensor<T> out(x.n, cout_, g.out_h, g.out_w);
    from_channel_major(y, out);
    if (pass.record) {
        geom_ = g;
        batch_ = x.n;
        cols_ = std::move(cols);
        direct_ = false;
    }
    return out;
}

// Few output channels at stride 1: shifted-plane accumulation instead of a
// large, nearly vector-shaped im2col product.
template <typename T>
Tensor<T> Conv2d<T>::forward_direct(const Tensor<T>& x, const ConvGeometry& g, Pass pass) {
    Tensor<T> out(x.n, cout_, g.out_h, g.out_w);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < cout_; ++co) {
            T* dst = out.data.data() + (static_cast<std::size_t>(n) * cout_ + co) * out.spatial();
            std::fill(dst, dst + out.spatial(), bias.value[co]);
            for (int ci = 0; ci < cin_; ++ci) {
                const T* src = x.data.data() + (static_cast<std::size_t>(n) * cin_ + ci) * x.spatial();
                for (int ky = 0; ky < k_; ++ky)
                    for (int kx = 0; kx < k_; ++kx) {
                        const T wv = weight.value[((static_cast<std::size_t>(co) * cin_ + ci) * k_ + ky) * k_ + kx];
                        const int x_lo = std::max(0, pad_ - kx), x_hi = std::min(g.out_w, x.w + pad_ - kx);
                        for (int oy = 0; oy < g.out_h; ++oy) {
                            const int iy = oy - pad_ + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            const T* line = src + iy * x.w - pad_ + kx;
                            T* o = dst + oy * g.out_w;
                            for (int ox = x_lo; ox < x_hi; ++ox) o[ox] += wv * line[ox];
                        }
                    }
            }
        }
    if (pass.record) {
        geom_ = g;
        batch_ = x.n;
        input_ = x;
        direct_ = true;
    }
    return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward_direct(const Tensor<T>& grad_out) {
    const ConvGeometry& g = geom_;
    Tensor<T> gx(batch_, cin_, g.in_h, g.in_w);
    for (int n = 0; n < batch_; ++n)
        for (int co = 0; co < cout_; ++co) {
            const T* gy = grad_out.data.data() + (static_cast<std::size_t>(n) * cout_ + co) * grad_out.spatial();
            T bsum = 0;
            for (int i = 0; i < grad_out.spatial(); ++i) bsum += gy[i];
            bias.grad[co] += bsum;
            for (int ci = 0; ci < cin_; ++ci) {
                const T* src = input_.data.data() + (static_cast<std::size_t>(n) * cin_ + ci) * input_.spatial();
                T* gsrc = gx.data.data() + (static_cast<std::size_t>(n) * cin_ + ci) * gx.spatial();
                for (int ky = 0; ky < k_; ++ky)
                    for (int kx = 0; kx < k_; ++kx) {
                        const std::size_t wi = ((static_cast<std::size_t>(co) * cin_ + ci) * k_ + ky) * k_ + kx;
                        const T wv = weight.value[wi];
                        const int x_lo = std::max(0, pad_ - kx), x_hi = std::min(g.out_w, g.in_w + pad_ - kx);
                        T acc = 0;
                        for (int oy = 0; oy < g.out_h; ++oy) {
                            const int iy = oy - pad_ + ky;
                            if (iy < 0 || iy >= g.in_h) continue;
                            const int off = iy * g.in_w - pad_ + kx;
                            const T* line = src + off;
                            T* gline = gsrc + off;
                            const T* o = gy + oy * g.out_w;
                            using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
                            const Eigen::Map<const Vec> ov(o + x_lo, x_hi - x_lo);
                            acc += ov.dot(Eigen::Map<const Vec>(line + x_lo, x_hi - x_lo));
                            Eigen::Map<Vec>(gline + x_lo, x_hi - x_lo) += wv * ov;
                        }
                        weight.grad[wi] += acc;
                    }
            }
        }
    return gx;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
    if (direct_) return backward_direct(grad_out);
    const RowMatrix<T> gy = channel_major(grad_out);
    ConstMatrixMap<T> w(weight.value.data(), cout_, geom_.rows());
    MatrixMap<T> gw(weight.grad.data(), cout_, geom_.rows());
    gw.noalias() += gy * cols_.transpose();
    for (int c = 0; c < cout_; ++c) bias.grad[c] += gy.row(c).sum();

    const RowMatrix<T> gcols = w.transpose() * gy;
    Tensor<T> gx(batch_, cin_, geom_.in_h, geom_.in_w);
    col2im(gcols.data(), batch_, geom_, gx.data.data());
    return gx;
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int in_channels, int out_channels,
                                    int kernel, int stride, int pad, int output_pad)
    : weight(name + ".weight", {in_channels, out_channels, kernel, kernel}),
      bias(name + ".bias", {out_channels}),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      out_pad_(output_pad) {}

template <typename T>
std::pair<int, int> ConvTranspose2d<T>::output_size(int in_h, int in_w) const {
    return {(in_h - 1) * stride_ - 2 * pad_ + k_ + out_pad_,
            (in_w - 1) * stride_ - 2 * pad_ + k_ + out_pad_};
}

template <typename T>
void ConvTranspose2d<T>::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cout_ * k_ * k_));
    uniform_fill(weight.value, bound, rng);
    uniform_fill(bias.value, bound, rng);
}

template <typename T>
void ConvTranspose2d<T>::zero() {
    std::fill(weight.value.begin(), weight.value.end(), T(0));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Pass pass) {
    if (x.c != cin_)
        throw std::invalid_argument(weight.name + ": expected " + std::to_string(cin_) +
                                    " channels, got " + std::to_string(x.c));
    const auto [oh, ow] = output_size(x.h, x.w);
    const ConvGeometry g = ConvGeometry::make(cout_, oh, ow, k_, stride_, pad_);
    if (g.out_h != x.h || g.out_w != x.w)
        throw std::logic_error(weight.name + ": inconsistent transposed-convolution geometry");

    RowMatrix<T> xin = channel_major(x);
    ConstMatrixMap<T> w(weight.value.data(), cin_, g.rows());
    const RowMatrix<T> cols = w.transpose() * xin;

    Tensor<T> out(x.n, cout_, oh, ow);
    col2im(cols.data(), x.n, g, out.data.data());
    const int plane = oh * ow;
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < cout_; ++c) {
            T* p = out.data.data() + (static_cast<std::size_t>(n) * cout_ + c) * plane;
            for (int i = 0; i < plane; ++i) p[i] += bias.value[c];
        }
    if (pass.record) {
        geom_ = g;
        batch_ = x.n;
        in_h_ = x.h;
        in_w_ = x.w;
        input_cm_ = std::move(xin);
    }
    return out;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& grad_out) {
    RowMatrix<T> gcols(geom_.rows(), static_cast<Eigen::Index>(batch_) * in_h_ * in_w_);
    im2col(grad_out.data.data(), batch_, geom_, gcols.data());

    ConstMatrixMap<T> w(weight.value.data(), cin_, geom_.rows());
    MatrixMap<T> gw(weight.grad.data(), cin_, geom_.rows());
    gw.noalias() += input_cm_ * gcols.transpose();
    const int plane = grad_out.spatial();
    for (int n = 0; n < grad_out.n; ++n)
        for (int c = 0; c < cout_; ++c) {
            const T* p = grad_out.data.data() + (static_cast<std::size_t>(n) * cout_ + c) * plane;
            T acc = 0;
            for (int i = 0; i < plane; ++i) acc += p[i];
            bias.grad[c] += acc;
        }

    const RowMatrix<T> gx_cm = w * gcols;
    Tensor<T> gx(batch_, cin_, in_h_, in_w_);
    from_channel_major(gx_cm, gx);
    return gx;
}

// ------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, int channels, T momentum, T eps)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean{name + ".running_mean", AlignedVector<T>(channels, T(0))},
      running_var{name + ".running_var", AlignedVector<T>(channels, T(1))},
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
    init();
}

template <typename T>
void BatchNorm<T>::init() {
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
    std::fill(beta.value.begin(), beta.value.end(), T(0));
    std::fill(running_mean.value.begin(), running_mean.value.end(), T(0));
    std::fill(running_var.value.begin(), running_var.value.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Pass pass) {
    if (x.c != channels_)
        throw std::invalid_argument(gamma.name + ": expected " + std::to_string(channels_) +
                                    " channels, got " + std::to_string(x.c));
    const int plane = x.spatial();
    const double count = static_cast<double>(x.n) * plane;
    Tensor<T> y(x.n, x.c, x.h, x.w);
    Tensor<T> xhat(x.n, x.c, x.h, x.w);
    std::vector<T> inv_std(channels_);

    for (int c = 0; c < channels_; ++c) {
        double mean, var;
        if (pass.training) {
            double s = 0, s2 = 0;
            for (int n = 0; n < x.n; ++n) {
                const T* p = x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * plane;
                for (int i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / count;
            for (int n = 0; n < x.n; ++n) {
                const T* p = x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * plane;
                for (int i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    s2 += d * d;
                }
            }
            var = s2 / count;
            const double unbiased = count > 1 ? s2 / (count - 1) : var;
            running_mean.value[c] = static_cast<T>((1 - momentum_) * running_mean.value[c] + momentum_ * mean);
            running_var.value[c] = static_cast<T>((1 - momentum_) * running_var.value[c] + momentum_ * unbiased);
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
        const T m = static_cast<T>(mean);
        inv_std[c] = istd;
        const T g = gamma.value[c], b = beta.value[c];
        for (int n = 0; n < x.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * x.c + c) * plane;
            for (int i = 0; i < plane; ++i) {
                const T xh = (x.data[off + i] - m) * istd;
                xhat.data[off + i] = xh;
                y.data[off + i] = g * xh + b;
            }
        }
    }
    if (pass.record) {
        cached_training_ = pass.training;
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv_std);
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
    const int plane = grad_out.spatial();
    const T count = static_cast<T>(grad_out.n) * plane;
    Tensor<T> gx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
    for (int c = 0; c < channels_; ++c) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < grad_out.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * grad_out.c + c) * plane;
            for (int i = 0; i < plane; ++i) {
                sum_dy += grad_out.data[off + i];
                sum_dy_xhat += grad_out.data[off + i] * xhat_.data[off + i];
            }
        }
        gamma.grad[c] += sum_dy_xhat;
        beta.grad[c] += sum_dy;
        const T g = gamma.value[c], istd = inv_std_[c];
        for (int n = 0; n < grad_out.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * grad_out.c + c) * plane;
            for (int i = 0; i < plane; ++i) {
                if (cached_training_) {
                    gx.data[off + i] = g * istd / count *
                                       (count * grad_out.data[off + i] - sum_dy -
                                        xhat_.data[off + i] * sum_dy_xhat);
                } else {
                    gx.data[off + i] = g * istd * grad_out.data[off + i];
                }
            }
        }
    }
    return gx;
}

// ----------------------------------------------------------- activations

template <typename T>
T sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Pass pass) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    if (pass.record) output_ = y;
    return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> gx = grad_out;
    for (std::size_t i = 0; i < gx.size(); ++i)
        if (!(output_.data[i] > T(0))) gx.data[i] = T(0);
    return gx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x, Pass pass) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = sigmoid(v);
    if (pass.record) output_ = y;
    return y;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> gx = grad_out;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        const T s = output_.data[i];
        gx.data[i] *= s * (T(1) - s);
    }
    return gx;
}

#define FMNET_INSTANTIATE(T)                                                        \
    template struct Param<T>;                                                       \
    template void im2col<T>(const T*, int, const ConvGeometry&, T*);                \
    template void col2im<T>(const T*, int, const ConvGeometry&, T*);                \
    template RowMatrix<T> channel_major<T>(const Tensor<T>&);                       \
    template void from_channel_major<T>(const RowMatrix<T>&, Tensor<T>&);           \
    template class Linear<T>;                                                       \
    template class Conv2d<T>;                                                       \
    template class ConvTranspose2d<T>;                                              \
    template class BatchNorm<T>;                                                    \
    template class ReLU<T>;                                                         \
    template class Sigmoid<T>;                                                      \
    template T sigmoid<T>(T);

FMNET_INSTANTIATE(float)
FMNET_INSTANTIATE(double)

}  // namespace fmnet
