#include "fmnet/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fmnet {

void LossWeights::validate() const {
    if (!(beta_kl >= 0.0) || !(lambda_anchor >= 0.0))
        throw std::invalid_argument("loss weights must be non-negative");
}

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw std::domain_error(std::string(what) + ": non-finite input");
}

template <typename T>
void prepare(Tensor<T>* grad, const Tensor<T>& like) {
    if (grad) *grad = Tensor<T>(like.n, like.c, like.h, like.w);
}

double clamp_probability(double p) {
    return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

bool clamped(double p) { return p < kProbabilityClamp || p > 1.0 - kProbabilityClamp; }

}  // namespace

template <typename T>
T recon_loss(const Tensor<T>& x_hat, const Tensor<T>& x, Tensor<T>* grad_x_hat) {
    require_same(x_hat, x, "recon_loss");
    prepare(grad_x_hat, x_hat);
    const double count = static_cast<double>(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x_hat.data[i]) - x.data[i];
        acc += d * d;
        if (grad_x_hat) grad_x_hat->data[i] = static_cast<T>(2.0 * d / count);
    }
    return static_cast<T>(acc / count);
}

template <typename T>
T kl_standard(const Tensor<T>& mu, const Tensor<T>& log_var, Tensor<T>* grad_mu,
              Tensor<T>* grad_log_var) {
    require_same(mu, log_var, "kl_standard");
    require_finite(mu, "kl_standard");
    require_finite(log_var, "kl_standard");
    prepare(grad_mu, mu);
    prepare(grad_log_var, log_var);
    const double batch = mu.n;
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.data[i], lv = log_var.data[i], v = std::exp(lv);
        acc += -0.5 * (1.0 + lv - m * m - v);
        if (grad_mu) grad_mu->data[i] = static_cast<T>(m / batch);
        if (grad_log_var) grad_log_var->data[i] = static_cast<T>(0.5 * (v - 1.0) / batch);
    }
    return static_cast<T>(acc / batch);
}

namespace {

double kl_term(double mu_a, double lv_a, double mu_b, double lv_b) {
    const double d = mu_a - mu_b;
    return 0.5 * (lv_b - lv_a) + (std::exp(lv_a) + d * d) / (2.0 * std::exp(lv_b)) - 0.5;
}

}  // namespace

template <typename T>
T kl_gaussians(const Tensor<T>& mu_a, const Tensor<T>& log_var_a, const Tensor<T>& mu_b,
               const Tensor<T>& log_var_b, Tensor<T>* grad_mu_b, Tensor<T>* grad_log_var_b) {
    require_same(mu_a, log_var_a, "kl_gaussians");
    require_same(mu_a, mu_b, "kl_gaussians");
    require_same(mu_a, log_var_b, "kl_gaussians");
    for (const auto* t : {&mu_a, &log_var_a, &mu_b, &log_var_b}) require_finite(*t, "kl_gaussians");
    prepare(grad_mu_b, mu_b);
    prepare(grad_log_var_b, log_var_b);
    const double count = static_cast<double>(mu_a.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a.data[i], la = log_var_a.data[i];
        const double mb = mu_b.data[i], lb = log_var_b.data[i];
        acc += kl_term(ma, la, mb, lb);
        const double inv_vb = std::exp(-lb);
        const double d = ma - mb;
        if (grad_mu_b) grad_mu_b->data[i] = static_cast<T>(-d * inv_vb / count);
        if (grad_log_var_b)
            grad_log_var_b->data[i] =
                static_cast<T>((0.5 - 0.5 * (std::exp(la) + d * d) * inv_vb) / count);
    }
    return static_cast<T>(acc / count);
}

double kl_gaussians(std::span<const double> mu_a, std::span<const double> log_var_a,
                    std::span<const double> mu_b, std::span<const double> log_var_b) {
    const std::size_t n = mu_a.size();
    if (n == 0 || log_var_a.size() != n || mu_b.size() != n || log_var_b.size() != n)
        throw std::invalid_argument("kl_gaussians: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(mu_a[i]) || !std::isfinite(log_var_a[i]) || !std::isfinite(mu_b[i]) ||
            !std::isfinite(log_var_b[i]))
            throw std::domain_error("kl_gaussians: non-finite input");
        acc += kl_term(mu_a[i], log_var_a[i], mu_b[i], log_var_b[i]);
    }
    return acc / static_cast<double>(n);
}

double adv_disc_loss(std::span<const double> p_real, std::span<const double> p_fake) {
    if (p_real.empty() || p_fake.empty()) throw std::invalid_argument("adv_disc_loss: empty batch");
    double real = 0.0, fake = 0.0;
    for (double p : p_real) real += std::log(clamp_probability(p));
    for (double p : p_fake) fake += std::log(1.0 - clamp_probability(p));
    return -real / static_cast<double>(p_real.size()) - fake / static_cast<double>(p_fake.size());
}

double adv_gen_loss(std::span<const double> p_fake) {
    if (p_fake.empty()) throw std::invalid_argument("adv_gen_loss: empty batch");
    double acc = 0.0;
    for (double p : p_fake) acc += std::log(clamp_probability(p));
    return -acc / static_cast<double>(p_fake.size());
}

void adv_disc_loss_grad(std::span<const double> p_real, std::span<const double> p_fake,
                        std::span<double> grad_real, std::span<double> grad_fake) {
    const double nr = static_cast<double>(p_real.size()), nf = static_cast<double>(p_fake.size());
    for (std::size_t i = 0; i < p_real.size(); ++i)
        grad_real[i] = clamped(p_real[i]) ? 0.0 : -1.0 / (nr * p_real[i]);
    for (std::size_t i = 0; i < p_fake.size(); ++i)
        grad_fake[i] = clamped(p_fake[i]) ? 0.0 : 1.0 / (nf * (1.0 - p_fake[i]));
}

void adv_gen_loss_grad(std::span<const double> p_fake, std::span<double> grad_fake) {
    const double nf = static_cast<double>(p_fake.size());
    for (std::size_t i = 0; i < p_fake.size(); ++i)
        grad_fake[i] = clamped(p_fake[i]) ? 0.0 : -1.0 / (nf * p_fake[i]);
}

template <typename T>
T adv_disc_loss_logits(const Tensor<T>& logit_real, const Tensor<T>& logit_fake,
                       Tensor<T>* grad_real, Tensor<T>* grad_fake) {
    std::vector<double> pr(logit_real.size()), pf(logit_fake.size());
    for (std::size_t i = 0; i < pr.size(); ++i) pr[i] = sigmoid(static_cast<double>(logit_real.data[i]));
    for (std::size_t i = 0; i < pf.size(); ++i) pf[i] = sigmoid(static_cast<double>(logit_fake.data[i]));
    prepare(grad_real, logit_real);
    prepare(grad_fake, logit_fake);
    for (std::size_t i = 0; i < pr.size() && grad_real; ++i)
        grad_real->data[i] = static_cast<T>((pr[i] - 1.0) / static_cast<double>(pr.size()));
    for (std::size_t i = 0; i < pf.size() && grad_fake; ++i)
        grad_fake->data[i] = static_cast<T>(pf[i] / static_cast<double>(pf.size()));
    return static_cast<T>(adv_disc_loss(pr, pf));
}

template <typename T>
T adv_gen_loss_logits(const Tensor<T>& logit_fake, Tensor<T>* grad_fake) {
    std::vector<double> pf(logit_fake.size());
    for (std::size_t i = 0; i < pf.size(); ++i) pf[i] = sigmoid(static_cast<double>(logit_fake.data[i]));
    prepare(grad_fake, logit_fake);
    for (std::size_t i = 0; i < pf.size() && grad_fake; ++i)
        grad_fake->data[i] = static_cast<T>((pf[i] - 1.0) / static_cast<double>(pf.size()));
    return static_cast<T>(adv_gen_loss(pf));
}

double pixel_loss(std::span<const float> m, std::span<const float> m_hat) {
    if (m.size() != m_hat.size() || m.empty())
        throw std::invalid_argument("pixel_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = static_cast<double>(m[i]) - m_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(m.size());
}

double pixel_loss(const Spectrogram& m, const Spectrogram& m_hat) {
    return pixel_loss(m.view(), m_hat.view());
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> gaussian_taps() {
    std::array<double, kSsimWindow> taps{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        taps[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += taps[i];
    }
    for (auto& t : taps) t /= sum;
    return taps;
}

// Separable 'valid' Gaussian filtering.
std::vector<double> filter_valid(const std::vector<double>& img, int rows, int cols) {
    static const auto taps = gaussian_taps();
    const int vr = rows - kSsimWindow + 1, vc = cols - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(rows) * vc);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < vc; ++c) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * img[r * cols + c + k];
            tmp[r * vc + c] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(vr) * vc);
    for (int r = 0; r < vr; ++r)
        for (int c = 0; c < vc; ++c) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * tmp[(r + k) * vc + c];
            out[r * vc + c] = acc;
        }
    return out;
}

}  // namespace

double ssim(std::span<const float> a, std::span<const float> b, int rows, int cols) {
    if (a.size() != b.size() || a.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("ssim: shape mismatch");
    if (rows < kSsimWindow || cols < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const std::size_t n = a.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a[i];
        y[i] = b[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, rows, cols), my = filter_valid(y, rows, cols);
    const auto fxx = filter_valid(xx, rows, cols), fyy = filter_valid(yy, rows, cols);
    const auto fxy = filter_valid(xy, rows, cols);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double sxx = fxx[i] - mx[i] * mx[i];
        const double syy = fyy[i] - my[i] * my[i];
        const double sxy = fxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * sxy + kC2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (sxx + syy + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mx.size());
}

double ssim(const Spectrogram& a, const Spectrogram& b) {
    return ssim(a.view(), b.view(), kDopplerBins, kTimeFrames);
}

#define FMNET_LOSSES_INSTANTIATE(T)                                                              \
    template T recon_loss<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                    \
    template T kl_standard<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);       \
    template T kl_gaussians<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, Tensor<T>*, Tensor<T>*);                        \
    template T adv_disc_loss_logits<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*); \
    template T adv_gen_loss_logits<T>(const Tensor<T>&, Tensor<T>*);

FMNET_LOSSES_INSTANTIATE(float)
FMNET_LOSSES_INSTANTIATE(double)

}  // namespace fmnet
