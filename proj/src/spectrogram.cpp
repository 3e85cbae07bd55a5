#include "fmnet/spectrogram.hpp"

#include <algorithm>
#include <stdexcept>

namespace fmnet {

void Spectrogram::validate() const {
    if (values.size() != static_cast<std::size_t>(kPixels))
        throw std::invalid_argument("spectrogram must hold 48x80 values, got " +
                                    std::to_string(values.size()));
    for (float v : values)
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("spectrogram value outside [0,1]");
}

void Spectrogram::validate_normalized() const {
    validate();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo != 0.0f || *hi != 1.0f)
        throw std::invalid_argument("spectrogram is not min-max normalized");
}

Tensor<float> to_batch(const std::vector<const Spectrogram*>& items) {
    Tensor<float> t(static_cast<int>(items.size()), 1, kDopplerBins, kTimeFrames);
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i]->values.size() != static_cast<std::size_t>(kPixels))
            throw std::invalid_argument("to_batch: spectrogram is not 48x80");
        std::copy(items[i]->values.begin(), items[i]->values.end(),
                  t.data.begin() + static_cast<std::ptrdiff_t>(i * kPixels));
    }
    return t;
}

Tensor<float> to_batch(const std::vector<Spectrogram>& items) {
    std::vector<const Spectrogram*> ptrs;
    ptrs.reserve(items.size());
    for (const auto& s : items) ptrs.push_back(&s);
    return to_batch(ptrs);
}

Spectrogram from_batch(const Tensor<float>& batch, int i) {
    require_shape(batch, 1, kDopplerBins, kTimeFrames, "from_batch");
    Spectrogram s;
    const auto src = batch.sample(i);
    std::copy(src.begin(), src.end(), s.values.begin());
    return s;
}

}  // namespace fmnet
