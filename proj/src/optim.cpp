#include "fmnet/optim.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace fmnet {

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
    for (auto* p : params_) {
        m_.emplace_back(p->size(), T(0));
        v_.emplace_back(p->size(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ * std::sqrt(bc2) / bc1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(bc2));
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        const auto n = static_cast<Eigen::Index>(p.size());
        Eigen::Map<Arr> value(p.value.data(), n), grad(p.grad.data(), n);
        Eigen::Map<Arr> m(m_[k].data(), n), v(v_[k].data(), n);
        m = b1 * m + (T(1) - b1) * grad;
        v = b2 * v + (T(1) - b2) * grad.square();
        value -= step * m / (v.sqrt() + eps);
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace fmnet
