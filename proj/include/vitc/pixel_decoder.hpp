#pragma once

#include <span>
#include <string>
#include <vector>

#include "vitc/conditioning.hpp"
#include "vitc/model.hpp"

namespace vitc {

/// Channel width of each UNet level: base * 2^l, capped.
std::vector<int> unet_channels(const UNetConfig& cfg);
void validate(const UNetConfig& cfg, int input_size);

/// Two 3x3 convolutions, each followed by instance norm and leaky ReLU; the
/// first may stride.
struct ConvBlock {
    ConvBlock() = default;
    ConvBlock(ParameterStore& store, const std::string& name, int in, int out, int stride, double slope, Rng& rng);
    Var operator()(const Var& x) const;

    Conv2d conv1, conv2;
    InstanceNorm norm1, norm2;
    double slope = 0.01;
};

/// nnU-Net style 2D encoder-decoder. Decoder level l (0 = shallowest) may
/// concatenate `skip_extra[l]` additional channels onto its skip, and the
/// bottleneck may take `bottleneck_extra` additional channels.
class UNet {
public:
    struct Encoded {
        std::vector<Var> features;  // one per level, last is the bottleneck
    };

    UNet() = default;
    UNet(ParameterStore& store, const std::string& name, const UNetConfig& cfg, std::vector<int> skip_extra,
         int bottleneck_extra, int out_channels, Rng& rng);

    int levels() const noexcept { return static_cast<int>(channels_.size()); }
    const std::vector<int>& channels() const noexcept { return channels_; }
    int out_channels() const noexcept { return out_channels_; }
    int bottleneck_width() const noexcept { return channels_.back() + bottleneck_extra_; }

    Encoded encode(const Var& image) const;
    /// `skips` holds the (possibly extended) skip tensor per decoder level;
    /// `bottleneck` the (possibly extended) deepest feature map.
    Var decode(std::span<const Var> skips, const Var& bottleneck) const;

private:
    UNetConfig cfg_;
    std::vector<int> channels_;
    std::vector<int> skip_extra_;
    int bottleneck_extra_ = 0;
    int out_channels_ = 1;
    std::vector<ConvBlock> down_;
    std::vector<ConvTranspose2x2> up_;
    std::vector<ConvBlock> up_blocks_;
    Conv2d head_;
};

/// Resizes a conditioned state [Gh*Gw x D] to the skip's resolution, projects
/// D -> F and appends it to the skip channels. The projection is applied on the
/// grid before resizing; both are linear and the bilinear taps sum to one, so
/// the order does not change the result.
Var fuse_state(const Var& state, int grid_h, int grid_w, const Var& skip, const Linear& projection);

/// sigmoid(logit) > threshold; ties are background.
std::vector<int> predict_mask(std::span<const double> logits, double threshold = 0.5);

/// Per pixel: 0 if every class probability is <= 0.5, otherwise the label of
/// the most probable class among those above 0.5.
std::vector<int> combine_class_probabilities(std::span<const std::vector<double>> probs, std::span<const int> labels,
                                             std::size_t pixels);

/// Token-conditioned UNet: frozen features -> conditioning trajectory ->
/// UNet with state n fused into the n-th shallowest skip -> one logit channel.
class ViTCUNet final : public SegmentationModel {
public:
    ViTCUNet(const ModelConfig& cfg, int feature_dim, int grid_h, int grid_w,
             const std::vector<std::string>& class_names);

    std::string kind() const override { return "vitc_unet"; }
    const ModelConfig& config() const override { return cfg_; }
    std::vector<NamedParameter> parameters() const override;
    int output_channels() const override { return 1; }

    Var sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                    std::span<const ClassRef> classes, const LossConfig& loss) const override;
    std::vector<int> predict_labelmap(const Var& image, const FeatureGrid& features,
                                      std::span<const ClassRef> classes) const override;

    const ConditioningDecoder& conditioning() const noexcept { return conditioning_; }
    const StructureTokenTable& tokens() const noexcept { return tokens_; }
    StructureTokenTable& tokens() noexcept { return tokens_; }
    const UNet& unet() const noexcept { return unet_; }
    const ParameterStore& network_parameters() const noexcept { return store_; }
    Rng& token_rng() noexcept { return token_rng_; }
    const Rng& token_rng() const noexcept { return token_rng_; }

    /// Adds a freshly initialised structure token; nothing else changes.
    std::size_t add_structure_token(const std::string& name);

    ConditionedTrajectory condition(const FeatureGrid& features, const std::string& token) const;
    /// Decoder level (0 = shallowest) that receives trajectory state `index`.
    int fusion_level(int index) const;
    /// Full forward from an image and a trajectory; [1 x H x W] logits.
    Var segment(const Var& image, const ConditionedTrajectory& traj) const;
    Var segment(const UNet::Encoded& encoded, const ConditionedTrajectory& traj) const;
    Var logits(const PreparedImage& image, const FeatureGrid& features, const std::string& token) const;
    const Linear& fusion_projection(int level) const { return fusion_.at(static_cast<std::size_t>(level)); }

private:
    ModelConfig cfg_;
    ParameterStore store_;
    Rng token_rng_;
    ConditioningDecoder conditioning_;
    StructureTokenTable tokens_;
    std::vector<Linear> fusion_;
    UNet unet_;
};

}  // namespace vitc
