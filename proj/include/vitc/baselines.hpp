#pragma once

#include "vitc/pixel_decoder.hpp"

namespace vitc {

/// Per-patch linear classifier D -> K+1, bilinearly upsampled, softmax over
/// channels. Channel 0 is background.
class LinearHeadModel final : public SegmentationModel {
public:
    LinearHeadModel(const ModelConfig& cfg, int feature_dim, int num_classes);

    std::string kind() const override { return "linear"; }
    const ModelConfig& config() const override { return cfg_; }
    std::vector<NamedParameter> parameters() const override { return store_.entries(); }
    int output_channels() const override { return num_classes_ + 1; }

    /// [K+1 x H x W] class probabilities.
    Var forward(const FeatureGrid& features, int height, int width) const;

    Var sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                    std::span<const ClassRef> classes, const LossConfig& loss) const override;
    std::vector<int> predict_labelmap(const Var& image, const FeatureGrid& features,
                                      std::span<const ClassRef> classes) const override;

private:
    ModelConfig cfg_;
    ParameterStore store_;
    int num_classes_;
    Linear head_;
};

/// UNet without skip fusion; the frozen features are projected to the
/// bottleneck width, resized, and concatenated once at the bottleneck.
/// Fixed K+1 output channels.
class HybridUNetModel final : public SegmentationModel {
public:
    HybridUNetModel(const ModelConfig& cfg, int feature_dim, int num_classes);

    std::string kind() const override { return "hybrid"; }
    const ModelConfig& config() const override { return cfg_; }
    std::vector<NamedParameter> parameters() const override { return store_.entries(); }
    int output_channels() const override { return num_classes_ + 1; }
    const UNet& unet() const noexcept { return unet_; }

    /// [K+1 x H x W] logits.
    Var forward(const Var& image, const FeatureGrid& features) const;

    Var sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                    std::span<const ClassRef> classes, const LossConfig& loss) const override;
    std::vector<int> predict_labelmap(const Var& image, const FeatureGrid& features,
                                      std::span<const ClassRef> classes) const override;

private:
    ModelConfig cfg_;
    ParameterStore store_;
    int num_classes_;
    Linear projection_;
    UNet unet_;
};

/// Cross-entropy plus mean soft Dice over the K+1 softmax channels.
Var multiclass_loss(const Var& probs, std::span<const int> labels, const LossConfig& loss);
/// Channel argmax of a [C x H x W] map.
std::vector<int> argmax_channels(const Tensor& maps);

}  // namespace vitc
