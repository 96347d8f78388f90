#pragma once

#include <random>

#include "vitc/backbone.hpp"
#include "vitc/config.hpp"
#include "vitc/data.hpp"
#include "vitc/layers.hpp"

namespace vitc::testing {

/// A model small enough for exhaustive checks: 4x4 feature grid of width 16,
/// two two-way blocks and a three-level UNet.
inline ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.model.backbone.patch = 4;
    cfg.model.backbone.dim = 16;
    cfg.model.backbone.depth = 1;
    cfg.model.backbone.input_size = 16;
    cfg.model.conditioning.blocks = 2;
    cfg.model.conditioning.heads = 2;
    cfg.model.conditioning.mlp_ratio = 2;
    cfg.model.unet.levels = 3;
    cfg.model.unet.base_channels = 4;
    cfg.model.unet.max_channels = 8;
    cfg.model.unet.fusion_channels = 4;
    cfg.train.lr = 3e-3;
    cfg.train.batch_size = 2;
    cfg.train.max_epochs = 2;
    cfg.train.iters_per_epoch = 2;
    cfg.data.volumes = 4;
    cfg.data.test_volumes = 1;
    cfg.data.depth = 3;
    cfg.data.height = 16;
    cfg.data.width = 16;
    return cfg;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

inline double squared_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return s;
}

inline FeatureGrid random_features(int gh, int gw, int dim, std::uint64_t seed) {
    FeatureGrid f;
    f.grid = random_tensor({gh, gw, dim}, seed);
    f.patch_size = 4;
    f.backbone_id = "test";
    return f;
}

}  // namespace vitc::testing
