#include "vitc/overlay.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "vitc/errors.hpp"

namespace vitc {

std::array<std::uint8_t, 3> overlay_color(int label) {
    if (label <= 0) return kOverlayPalette[0];
    const auto n = static_cast<int>(kOverlayPalette.size()) - 1;
    return kOverlayPalette[static_cast<std::size_t>((label - 1) % n + 1)];
}

void write_overlay_png(const std::filesystem::path& path, const Tensor& slice, std::span<const int> labels,
                       double alpha) {
    if (slice.rank() != 2) throw ShapeError("write_overlay_png: slice must be [H x W]");
    const int h = slice.dim(0), w = slice.dim(1);
    if (labels.size() != slice.size()) throw ShapeError("write_overlay_png: label plane does not match the slice");
    const auto [lo_it, hi_it] = std::minmax_element(slice.values().begin(), slice.values().end());
    const double lo = *lo_it, range = *hi_it - *lo_it;

    std::vector<png_byte> rgb(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t i = 0; i < slice.size(); ++i) {
        const double grey = range > 0 ? 255.0 * (slice[i] - lo) / range : 0.0;
        const auto c = overlay_color(labels[i]);
        for (int ch = 0; ch < 3; ++ch) {
            const double v = labels[i] > 0 ? (1.0 - alpha) * grey + alpha * c[static_cast<std::size_t>(ch)] : grey;
            rgb[i * 3 + static_cast<std::size_t>(ch)] = static_cast<png_byte>(std::clamp(std::lround(v), 0L, 255L));
        }
    }

    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw DataError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, rgb.data() + static_cast<std::size_t>(y) * w * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace vitc
