#pragma once

#include "fmnet/netcore.hpp"

#include <span>
#include <vector>

namespace fmnet {

/// Doppler-time magnitude image: kDopplerBins rows (row r is Doppler bin
/// r - kDopplerBins/2) by kTimeFrames columns, values in [0,1].
struct Spectrogram {
    std::vector<float> values = std::vector<float>(kPixels, 0.0f);
    double doppler_extent_hz = 0.0;
    double duration_s = 0.0;

    float& operator()(int row, int col) { return values[static_cast<std::size_t>(row) * kTimeFrames + col]; }
    float operator()(int row, int col) const {
        return values[static_cast<std::size_t>(row) * kTimeFrames + col];
    }
    [[nodiscard]] std::span<const float> view() const { return values; }

    /// Throws unless the grid is 48x80 with every value in [0,1].
    void validate() const;
    /// validate() plus: at least one value is exactly 0 and one exactly 1.
    void validate_normalized() const;
};

/// Packs spectrograms into an (N,1,48,80) tensor.
Tensor<float> to_batch(const std::vector<const Spectrogram*>& items);
Tensor<float> to_batch(const std::vector<Spectrogram>& items);
/// Unpacks sample `i` of an (N,1,48,80) tensor.
Spectrogram from_batch(const Tensor<float>& batch, int i);

}  // namespace fmnet
