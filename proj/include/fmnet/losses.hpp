#pragma once

#include "fmnet/spectrogram.hpp"
#include "fmnet/tensor.hpp"

#include <span>

namespace fmnet {

/// Relative weights of the auxiliary training terms.
struct LossWeights {
    /// Weight of kl_standard against the per-pixel reconstruction mean.
    double beta_kl = 1.0 / kPixels;
    /// Weight of the simulated-reconstruction retention term in phases 2 and 3.
    double lambda_anchor = 0.5;

    void validate() const;
};

inline constexpr double kProbabilityClamp = 1e-7;

// All losses accumulate in double. Optional gradient outputs are overwritten.

/// Mean squared error over batch and pixels.
template <typename T>
T recon_loss(const Tensor<T>& x_hat, const Tensor<T>& x, Tensor<T>* grad_x_hat = nullptr);

/// Batch mean of sum_j -0.5 (1 + log_var - mu^2 - exp(log_var)).
template <typename T>
T kl_standard(const Tensor<T>& mu, const Tensor<T>& log_var, Tensor<T>* grad_mu = nullptr,
              Tensor<T>* grad_log_var = nullptr);

/// KL[N(mu_a, var_a) || N(mu_b, var_b)] for diagonal Gaussians, averaged over
/// dimensions and batch. Gradients are taken with respect to the b side.
template <typename T>
T kl_gaussians(const Tensor<T>& mu_a, const Tensor<T>& log_var_a, const Tensor<T>& mu_b,
               const Tensor<T>& log_var_b, Tensor<T>* grad_mu_b = nullptr,
               Tensor<T>* grad_log_var_b = nullptr);

/// Per-sample dimension-averaged KL between two latent distributions.
double kl_gaussians(std::span<const double> mu_a, std::span<const double> log_var_a,
                    std::span<const double> mu_b, std::span<const double> log_var_b);

/// -mean(log p_real) - mean(log(1 - p_fake)), probabilities clamped to [1e-7, 1-1e-7].
double adv_disc_loss(std::span<const double> p_real, std::span<const double> p_fake);
/// -mean(log p_fake), same clamp.
double adv_gen_loss(std::span<const double> p_fake);

/// Gradients of the clamped adversarial losses with respect to the probabilities.
void adv_disc_loss_grad(std::span<const double> p_real, std::span<const double> p_fake,
                        std::span<double> grad_real, std::span<double> grad_fake);
void adv_gen_loss_grad(std::span<const double> p_fake, std::span<double> grad_fake);

/// Logit-space gradients of the unclamped adversarial losses
/// (p = sigmoid(logit)); used by training.
template <typename T>
T adv_disc_loss_logits(const Tensor<T>& logit_real, const Tensor<T>& logit_fake,
                       Tensor<T>* grad_real, Tensor<T>* grad_fake);
template <typename T>
T adv_gen_loss_logits(const Tensor<T>& logit_fake, Tensor<T>* grad_fake);

/// ||m - m_hat||^2 / N.
double pixel_loss(std::span<const float> m, std::span<const float> m_hat);
double pixel_loss(const Spectrogram& m, const Spectrogram& m_hat);

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) over
/// the valid region; C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range.
double ssim(std::span<const float> a, std::span<const float> b, int rows, int cols);
double ssim(const Spectrogram& a, const Spectrogram& b);

}  // namespace fmnet
