#pragma once

#include "fmnet/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace fmnet::test {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(u(rng));
    return t;
}

inline double central_difference(double& x, const std::function<double()>& f, double h = 1e-4) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

}  // namespace fmnet::test
