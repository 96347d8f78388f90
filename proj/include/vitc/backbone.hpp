#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vitc/config.hpp"
#include "vitc/layers.hpp"
#include "vitc/tensor.hpp"

namespace vitc {

/// One 2D slice of a scan: [H x W] intensities plus optional pixel spacing.
struct ImageSlice {
    Tensor pixels;
    std::optional<std::array<double, 2>> spacing;
};

/// Normalized 3-channel network input, [3 x H' x W'].
struct PreparedImage {
    Tensor channels;

    int height() const { return channels.dim(1); }
    int width() const { return channels.dim(2); }
};

/// Frozen patch embeddings, stored as [Gh x Gw x D].
struct FeatureGrid {
    Tensor grid;
    int patch_size = 0;
    std::string backbone_id;

    int grid_h() const { return grid.dim(0); }
    int grid_w() const { return grid.dim(1); }
    int dim() const { return grid.dim(2); }
    /// Row-major token view [Gh*Gw x D].
    Tensor tokens() const { return grid.reshaped({grid_h() * grid_w(), dim()}); }
};

inline constexpr double kStandardizeEps = 1e-6;

/// Per-slice standardization (x - mean) / (std + eps), optional intensity
/// window, bilinear resize to target_size^2, replication to three channels.
PreparedImage preprocess(const ImageSlice& slice, int target_size, int patch_size,
                         double window_lo = 0.0, double window_hi = 0.0);

/// Frozen feature extractor. Implementations are immutable after
/// construction and `extract` is a pure function of its input.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual FeatureGrid extract(const PreparedImage& image) const = 0;
    virtual int patch_size() const = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
    /// Every weight tensor; none of these is ever handed to an optimizer.
    virtual std::vector<const Tensor*> frozen_weights() const = 0;
};

/// Desk-scale stand-in for a pre-trained ViT: patchify, fixed linear patch
/// embedding plus fixed positional code, `depth` pre-norm mixing layers
/// (token attention and MLP with residuals) and a final normalization.
class SyntheticBackbone final : public Backbone {
public:
    SyntheticBackbone(std::uint64_t seed, int patch_size, int depth, int dim);

    FeatureGrid extract(const PreparedImage& image) const override;
    int patch_size() const override { return patch_; }
    int dim() const override { return dim_; }
    std::string id() const override;
    std::vector<const Tensor*> frozen_weights() const override;

private:
    struct MixingLayer {
        Tensor wq, wk, wv, wo;  // [D x D]
        Tensor w1, w2;          // [D x 2D], [2D x D]
    };

    std::uint64_t seed_;
    int patch_;
    int depth_;
    int dim_;
    int heads_;
    Tensor embed_;       // [3 p^2 x D]
    Tensor pos_freq_;    // [2 x D] frequencies of the fixed positional code
    std::vector<MixingLayer> layers_;
};

/// Splits [3 x H x W] into row-major patches [(H/p)(W/p) x 3 p^2].
Tensor patchify(const Tensor& channels, int patch_size);

/// Builds the backbone named by `cfg.kind`. Only the synthetic encoder ships
/// in this build; the pre-trained kinds raise ConfigError.
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg);

}  // namespace vitc
