#include "vitc/baselines.hpp"

#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

namespace vitc {

namespace {

void check_labels(std::span<const int> labels, const Var& image) {
    if (labels.size() != static_cast<std::size_t>(image.dim(1)) * image.dim(2))
        throw ShapeError("sample_loss: label plane does not match the image");
}

}  // namespace

Var multiclass_loss(const Var& probs, std::span<const int> labels, const LossConfig& loss) {
    return ops::add(ops::cross_entropy(probs, labels), ops::multiclass_dice(probs, labels, loss.dice_smooth));
}

std::vector<int> argmax_channels(const Tensor& maps) {
    const int c = maps.dim(0);
    const std::size_t pixels = static_cast<std::size_t>(maps.dim(1)) * maps.dim(2);
    std::vector<int> out(pixels, 0);
    for (std::size_t i = 0; i < pixels; ++i) {
        double best = maps[i];
        for (int ch = 1; ch < c; ++ch) {
            const double v = maps[static_cast<std::size_t>(ch) * pixels + i];
            if (v > best) {
                best = v;
                out[i] = ch;
            }
        }
    }
    return out;
}

// ---- linear head -------------------------------------------------------------------------

LinearHeadModel::LinearHeadModel(const ModelConfig& cfg, int feature_dim, int num_classes)
    : cfg_(cfg), num_classes_(num_classes) {
    if (num_classes < 1) throw ConfigError("linear head needs at least one class");
    Rng rng(cfg.init_seed);
    head_ = Linear(store_, "linear_head", feature_dim, num_classes + 1, rng);
}

Var LinearHeadModel::forward(const FeatureGrid& features, int height, int width) const {
    const Var logits = head_(constant(features.tokens()));  // [G x K+1]
    Var grid = ops::reshape(ops::transpose(logits), {num_classes_ + 1, features.grid_h(), features.grid_w()});
    return ops::softmax_channels(ops::resize_bilinear(grid, height, width));
}

Var LinearHeadModel::sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                                 std::span<const ClassRef>, const LossConfig& loss) const {
    check_labels(labels, image);
    return multiclass_loss(forward(features, image.dim(1), image.dim(2)), labels, loss);
}

std::vector<int> LinearHeadModel::predict_labelmap(const Var& image, const FeatureGrid& features,
                                                   std::span<const ClassRef>) const {
    NoGradGuard no_grad;
    return argmax_channels(forward(features, image.dim(1), image.dim(2)).value());
}

// ---- hybrid -----------------------------------------------------------------------------

HybridUNetModel::HybridUNetModel(const ModelConfig& cfg, int feature_dim, int num_classes)
    : cfg_(cfg), num_classes_(num_classes) {
    if (num_classes < 1) throw ConfigError("hybrid model needs at least one class");
    validate(cfg.unet, 0);
    Rng rng(cfg.init_seed);
    const int bottleneck = unet_channels(cfg.unet).back();
    projection_ = Linear(store_, "vit_projection", feature_dim, bottleneck, rng);
    unet_ = UNet(store_, "unet", cfg.unet, std::vector<int>(static_cast<std::size_t>(cfg.unet.levels - 1), 0),
                 bottleneck, num_classes + 1, rng);
}

Var HybridUNetModel::forward(const Var& image, const FeatureGrid& features) const {
    const UNet::Encoded enc = unet_.encode(image);
    const Var& deepest = enc.features.back();
    const Var projected = projection_(constant(features.tokens()));
    Var grid = ops::reshape(ops::transpose(projected), {projected.dim(1), features.grid_h(), features.grid_w()});
    const Var parts[] = {deepest, ops::resize_bilinear(grid, deepest.dim(1), deepest.dim(2))};
    const Var bottleneck = ops::concat_channels(parts);
    return unet_.decode(std::span<const Var>(enc.features.data(), enc.features.size() - 1), bottleneck);
}

Var HybridUNetModel::sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                                 std::span<const ClassRef>, const LossConfig& loss) const {
    check_labels(labels, image);
    return multiclass_loss(ops::softmax_channels(forward(image, features)), labels, loss);
}

std::vector<int> HybridUNetModel::predict_labelmap(const Var& image, const FeatureGrid& features,
                                                   std::span<const ClassRef>) const {
    NoGradGuard no_grad;
    return argmax_channels(forward(image, features).value());
}

// ---- factory ------------------------------------------------------------------------------

std::vector<ClassRef> class_refs(const std::vector<std::string>& names) {
    std::vector<ClassRef> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.push_back({static_cast<int>(i) + 1, names[i]});
    return out;
}

std::unique_ptr<SegmentationModel> make_model(const ModelConfig& cfg, int feature_dim, int grid_h, int grid_w,
                                              const std::vector<std::string>& class_names) {
    if (cfg.kind == "vitc_unet") return std::make_unique<ViTCUNet>(cfg, feature_dim, grid_h, grid_w, class_names);
    if (cfg.kind == "hybrid")
        return std::make_unique<HybridUNetModel>(cfg, feature_dim, static_cast<int>(class_names.size()));
    if (cfg.kind == "linear")
        return std::make_unique<LinearHeadModel>(cfg, feature_dim, static_cast<int>(class_names.size()));
    throw ConfigError("model.kind: unknown model '" + cfg.kind + "' (expected vitc_unet, hybrid or linear)");
}

}  // namespace vitc
