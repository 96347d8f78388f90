#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vitc/backbone.hpp"
#include "vitc/config.hpp"
#include "vitc/layers.hpp"

namespace vitc {

/// A foreground class: label value in the label maps and its structure name.
struct ClassRef {
    int label = 0;
    std::string name;
};

std::vector<ClassRef> class_refs(const std::vector<std::string>& names);

/// Common surface of the three pixel decoders the trainer can optimise.
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;

    virtual std::string kind() const = 0;
    virtual const ModelConfig& config() const = 0;
    /// Every tensor the optimizer updates. Backbone weights never appear here.
    virtual std::vector<NamedParameter> parameters() const = 0;
    /// Channels of one forward pass (1 for the token-conditioned decoder).
    virtual int output_channels() const = 0;

    /// Loss of one training image over `classes`, averaged over its (image, class) terms.
    virtual Var sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                            std::span<const ClassRef> classes, const LossConfig& loss) const = 0;
    /// Integer label map at the prepared resolution.
    virtual std::vector<int> predict_labelmap(const Var& image, const FeatureGrid& features,
                                              std::span<const ClassRef> classes) const = 0;
};

/// Builds an untrained model of `cfg.kind` for a backbone of width `feature_dim`
/// producing a `grid_h` x `grid_w` grid, with one class per name.
std::unique_ptr<SegmentationModel> make_model(const ModelConfig& cfg, int feature_dim, int grid_h, int grid_w,
                                              const std::vector<std::string>& class_names);

}  // namespace vitc
