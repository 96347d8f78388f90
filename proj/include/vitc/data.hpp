#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vitc/backbone.hpp"
#include "vitc/label_map.hpp"

namespace vitc {

/// Intensity volume with a co-registered integer label volume, [D x H x W].
struct LabeledVolume {
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<double> intensities;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::string volume_id;

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    LabelVolume label_volume() const { return {depth, height, width, labels}; }
    /// Throws DataError when shapes disagree or labels leave [0, K].
    void validate() const;
};

struct VolumeShape {
    int depth = 12;
    int height = 96;
    int width = 96;
};

/// Names of the synthetic structure classes, in label order.
std::vector<std::string> synthetic_class_names(int num_classes);

/// Deterministic phantom: a body ellipse holding one structure per class
/// (sphere, box, thin tube, thin shell, disk, torus, cone, plate) with
/// class-dependent intensities, Gaussian noise and a smooth bias field.
LabeledVolume generate_synthetic_volume(std::uint64_t seed, int num_classes, VolumeShape shape = {});

struct SliceSample {
    ImageSlice image;
    LabelSlice labels;
};

/// 2D slices along `axis` (0 = depth), in index order.
std::vector<SliceSample> slice_volume(const LabeledVolume& vol, int axis = 0);

/// Stacks per-slice label maps in index order along axis 0. Slices whose
/// size differs from out_h x out_w are nearest-neighbour resized first.
LabelVolume reassemble_volume(std::span<const LabelSlice> slices, int expected_depth, int out_h, int out_w);

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::uint64_t seed = 0;
};

/// Seeded shuffle, then round(0.8 N) ids to train (at least one left for validation).
DatasetSplit make_split(std::vector<std::string> ids, std::uint64_t seed);

// ---- on-disk dataset -----------------------------------------------------------------

/// One manifest row.
struct VolumeRecord {
    std::string volume_id;
    std::string image_path;  // relative to the dataset root
    std::string label_path;
    std::vector<std::string> class_names;
    std::string split;  // "trainval" or "test"
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<VolumeRecord> volumes;
};

DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);
LabeledVolume load_volume(const std::filesystem::path& root, const VolumeRecord& record);
/// Writes image/label NIfTI files under root and returns the manifest row.
VolumeRecord save_volume(const std::filesystem::path& root, const LabeledVolume& vol, const std::string& split);

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<LabeledVolume> trainval;
    std::vector<LabeledVolume> test;
};

Dataset load_dataset(const std::filesystem::path& root);
/// In-memory synthetic dataset; volume seeds derive from `seed`.
Dataset generate_synthetic_dataset(std::uint64_t seed, int trainval, int test, int num_classes, VolumeShape shape);
/// Writes `dataset` as NIfTI volumes plus manifest.json.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

}  // namespace vitc
