#include "fmnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace fmnet {

Rgb colormap(double v) {
    static constexpr std::array<std::array<double, 3>, 5> stops = {{
        {0.267, 0.005, 0.329},
        {0.229, 0.322, 0.546},
        {0.128, 0.567, 0.551},
        {0.369, 0.789, 0.383},
        {0.993, 0.906, 0.144},
    }};
    v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(v), stops.size() - 2);
    const double a = v - static_cast<double>(i);
    auto ch = [&](int c) {
        return static_cast<std::uint8_t>(std::lround(255.0 * ((1 - a) * stops[i][c] + a * stops[i + 1][c])));
    };
    return {ch(0), ch(1), ch(2)};
}

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<Rgb>& pixels) {
    if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("write_png_rgb: pixel buffer does not match dimensions");
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        auto* row = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(&pixels[static_cast<std::size_t>(y) * width]));
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_spectrogram_grid(const std::filesystem::path& path,
                            const std::vector<std::vector<const Spectrogram*>>& rows, int scale) {
    if (rows.empty()) throw std::invalid_argument("write_spectrogram_grid: nothing to draw");
    std::size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.size());
    const int gap = 2;
    const int tile_w = kTimeFrames * scale, tile_h = kDopplerBins * scale;
    const int width = static_cast<int>(cols) * (tile_w + gap) - gap;
    const int height = static_cast<int>(rows.size()) * (tile_h + gap) - gap;
    std::vector<Rgb> px(static_cast<std::size_t>(width) * height, Rgb{255, 255, 255});
    for (std::size_t gr = 0; gr < rows.size(); ++gr)
        for (std::size_t gc = 0; gc < rows[gr].size(); ++gc) {
            const Spectrogram* s = rows[gr][gc];
            if (!s) continue;
            const int x0 = static_cast<int>(gc) * (tile_w + gap);
            const int y0 = static_cast<int>(gr) * (tile_h + gap);
            for (int y = 0; y < tile_h; ++y)
                for (int x = 0; x < tile_w; ++x) {
                    const int row = kDopplerBins - 1 - y / scale;
                    px[static_cast<std::size_t>(y0 + y) * width + x0 + x] = colormap((*s)(row, x / scale));
                }
        }
    write_png_rgb(path, width, height, px);
}

namespace {

// 5x7 glyphs, one row per byte, low five bits used.
const std::array<std::uint8_t, 7>* glyph(char ch) {
    static const std::array<std::uint8_t, 7> S = {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E};
    static const std::array<std::uint8_t, 7> U = {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
    static const std::array<std::uint8_t, 7> D = {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E};
    static const std::array<std::uint8_t, 7> W = {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A};
    static const std::array<std::uint8_t, 7> F = {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10};
    switch (ch) {
        case 'S': return &S;
        case 'U': return &U;
        case 'D': return &D;
        case 'W': return &W;
        case 'F': return &F;
        default: return nullptr;
    }
}

void draw_text(std::vector<Rgb>& px, int width, int x0, int y0, const std::string& text, int scale) {
    for (std::size_t k = 0; k < text.size(); ++k) {
        const auto* g = glyph(text[k]);
        if (!g) continue;
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 5; ++c) {
                if (!((*g)[r] >> (4 - c) & 1)) continue;
                for (int dy = 0; dy < scale; ++dy)
                    for (int dx = 0; dx < scale; ++dx) {
                        const int x = x0 + (static_cast<int>(k) * 6 + c) * scale + dx;
                        const int y = y0 + r * scale + dy;
                        px[static_cast<std::size_t>(y) * width + x] = Rgb{0, 0, 0};
                    }
            }
    }
}

}  // namespace

void write_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& matrix,
                   const std::vector<std::string>& labels, int cell) {
    if (matrix.empty() || matrix.front().empty()) throw std::invalid_argument("write_heatmap: empty matrix");
    const int n_rows = static_cast<int>(matrix.size());
    const int n_cols = static_cast<int>(matrix.front().size());
    const int margin = labels.empty() ? 0 : 2 * 6 * 2 + 6;
    const int width = margin + n_cols * cell, height = margin + n_rows * cell;
    std::vector<Rgb> px(static_cast<std::size_t>(width) * height, Rgb{255, 255, 255});
    for (int r = 0; r < n_rows; ++r) {
        double total = 0.0;
        for (double v : matrix[r]) total += v;
        for (int c = 0; c < n_cols; ++c) {
            const Rgb color = colormap(total > 0 ? matrix[r][c] / total : 0.0);
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x) {
                    const bool border = x == 0 || y == 0;
                    px[static_cast<std::size_t>(margin + r * cell + y) * width + margin + c * cell + x] =
                        border ? Rgb{40, 40, 40} : color;
                }
        }
    }
    if (!labels.empty()) {
        if (labels.size() != static_cast<std::size_t>(n_rows) || n_rows != n_cols)
            throw std::invalid_argument("write_heatmap: one label per row and column required");
        for (int i = 0; i < n_rows; ++i) {
            draw_text(px, width, 2, margin + i * cell + (cell - 14) / 2, labels[i], 2);
            draw_text(px, width, margin + i * cell + (cell - 22) / 2, 2, labels[i], 2);
        }
    }
    write_png_rgb(path, width, height, px);
}

}  // namespace fmnet
