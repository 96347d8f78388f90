#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <vector>

#include <png.h>
#include <unistd.h>

#include "vitc/errors.hpp"
#include "vitc/overlay.hpp"

using namespace vitc;

namespace {

struct Image {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

Image read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw std::runtime_error("read failed");
    img.format = PNG_FORMAT_RGB;
    Image out{static_cast<int>(img.width), static_cast<int>(img.height), {}};
    out.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) throw std::runtime_error("decode failed");
    return out;
}

}  // namespace

TEST(Overlay, PaletteWraps) {
    EXPECT_EQ(overlay_color(1), kOverlayPalette[1]);
    EXPECT_EQ(overlay_color(8), kOverlayPalette[8]);
    EXPECT_EQ(overlay_color(9), kOverlayPalette[1]);
}

TEST(Overlay, WritesBlendedRgb) {
    auto path = std::filesystem::temp_directory_path() / ("vitc_overlay_" + std::to_string(::getpid()) + ".png");
    Tensor slice({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    std::vector<int> labels{0, 0, 0, 0, 0, 2};
    write_overlay_png(path, slice, labels, 0.5);
    Image img = read_png(path);
    ASSERT_EQ(img.width, 3);
    ASSERT_EQ(img.height, 2);
    EXPECT_EQ(img.rgb[0], 0);  // min grey
    EXPECT_EQ(img.rgb[1], 0);
    // Pixel 4 has grey 4/5 * 255 = 204 and no label.
    EXPECT_EQ(img.rgb[12], 204);
    EXPECT_EQ(img.rgb[13], 204);
    // Pixel 5 is white blended half-way to palette entry 2.
    const auto c = kOverlayPalette[2];
    for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(img.rgb[15 + static_cast<std::size_t>(ch)], 0.5 * 255 + 0.5 * c[static_cast<std::size_t>(ch)], 1.0);
    std::filesystem::remove(path);
}

TEST(Overlay, ShapeMismatch) {
    Tensor slice({2, 2}, 0.0);
    std::vector<int> labels(3, 0);
    EXPECT_THROW(write_overlay_png("/tmp/x.png", slice, labels), ShapeError);
}
