#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "vitc/tensor.hpp"

namespace vitc {

/// RGB colour of each label value; index 0 (background) is never drawn.
/// Labels beyond the table wrap around to index 1.
inline constexpr std::array<std::array<std::uint8_t, 3>, 9> kOverlayPalette = {{
    {0, 0, 0},
    {230, 25, 75},
    {60, 180, 75},
    {255, 225, 25},
    {0, 130, 200},
    {245, 130, 48},
    {145, 30, 180},
    {70, 240, 240},
    {240, 50, 230},
}};

std::array<std::uint8_t, 3> overlay_color(int label);

/// Writes an 8-bit RGB PNG of `slice` ([H x W], min-max scaled to grey) with
/// labelled pixels blended at `alpha` towards their palette colour.
void write_overlay_png(const std::filesystem::path& path, const Tensor& slice, std::span<const int> labels,
                       double alpha = 0.5);

}  // namespace vitc
