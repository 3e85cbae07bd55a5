#pragma once

#include "fmnet/layers.hpp"

#include <vector>

namespace fmnet {

/// Adam over a fixed parameter list. Moments are kept per parameter in list order.
template <typename T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void step();
    void zero_grad();
    [[nodiscard]] long steps() const { return t_; }

private:
    std::vector<Param<T>*> params_;
    std::vector<std::vector<T>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace fmnet
