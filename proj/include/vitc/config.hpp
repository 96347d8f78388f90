#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace vitc {

struct BackboneConfig {
    std::string kind = "synthetic";  // synthetic | dinov2_s | sam2_s
    std::uint64_t seed = 0;
    int patch = 16;
    int depth = 2;
    int dim = 384;
    /// Side length slices are resized to before feature extraction.
    int input_size = 224;
    /// Optional CT-style intensity window applied before standardization; disabled when lo >= hi.
    double window_lo = 0.0;
    double window_hi = 0.0;
};

struct ConditioningConfig {
    int blocks = 4;
    int heads = 8;
    int mlp_ratio = 4;
    double token_init_std = 0.02;
    double positional_init_std = 0.02;
};

struct UNetConfig {
    int levels = 5;
    int base_channels = 16;
    int max_channels = 320;
    int fusion_channels = 32;
    int in_channels = 3;
    double leaky_slope = 0.01;
    /// Routes trajectory state 1 to the deepest skip instead of the shallowest.
    bool reverse_fusion = false;
};

struct ModelConfig {
    std::string kind = "vitc_unet";  // vitc_unet | hybrid | linear
    std::uint64_t init_seed = 0;
    BackboneConfig backbone;
    ConditioningConfig conditioning;
    UNetConfig unet;
};

struct LossConfig {
    double gamma = 2.0;
    double w_focal = 1.0;
    double w_dice = 1.0;
    double dice_smooth = 1.0;
};

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-2;
    int batch_size = 32;
    int max_epochs = 100;
    int iters_per_epoch = 300;
    int patience = 10;
    double min_rel_improvement = 0.01;
    std::uint64_t seed = 0;
    double grad_clip = 1.0;  // <= 0 disables clipping
    std::string stage = "joint";  // joint | stage1 | stage2
    LossConfig loss;
};

struct DataConfig {
    int volumes = 40;
    int test_volumes = 10;
    int classes = 3;
    int depth = 12;
    int height = 96;
    int width = 96;
    std::uint64_t seed = 0;
    int slice_axis = 0;
};

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

void validate(const ExperimentConfig& cfg);

/// Loads a TOML file over the defaults; unknown keys and bad values raise ConfigError naming the field path.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& toml_text, const std::string& source = "<string>");
/// Applies a dotted `key=value` override, e.g. `train.lr=0.001`.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

}  // namespace vitc
