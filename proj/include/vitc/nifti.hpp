#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace vitc::nifti {

enum class DataType : short {
    uint8 = 2,
    int16 = 4,
    int32 = 8,
    float32 = 16,
    float64 = 64,
    uint16 = 512,
};

/// A single-volume NIfTI-1 image; x varies fastest, so `data` is [nz x ny x nx].
struct Volume {
    int nx = 0, ny = 0, nz = 0;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<double> data;
};

/// Reads .nii or .nii.gz (gzip detected from content). Applies scl_slope/inter.
Volume read(const std::filesystem::path& path);
/// Writes .nii.gz when the name ends in ".gz", else plain .nii.
void write(const std::filesystem::path& path, const Volume& vol, DataType type);

}  // namespace vitc::nifti
