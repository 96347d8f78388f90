#pragma once

#include <cstddef>
#include <vector>

namespace vitc {

/// Integer label plane [H x W]; 0 is background.
struct LabelSlice {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const LabelSlice&) const = default;
};

/// Integer label volume [D x H x W].
struct LabelVolume {
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    bool operator==(const LabelVolume&) const = default;
};

}  // namespace vitc
