#pragma once

#include "fmnet/spectrogram.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fmnet {

struct Rgb {
    std::uint8_t r, g, b;
};

/// Perceptual ramp for values in [0,1]; out-of-range input is clamped.
Rgb colormap(double v);

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<Rgb>& pixels);

/// Tiles spectrograms into a grid, one inner vector per image row.
/// Positive Doppler is drawn at the top. Null entries are left blank.
void write_spectrogram_grid(const std::filesystem::path& path,
                            const std::vector<std::vector<const Spectrogram*>>& rows, int scale = 3);

/// Row-normalized matrix as a heatmap, one `cell` pixel square per entry.
/// Non-empty `labels` are drawn along the left and top edges.
void write_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& matrix,
                   const std::vector<std::string>& labels = {}, int cell = 24);

}  // namespace fmnet
