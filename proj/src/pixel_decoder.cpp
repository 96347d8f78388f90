#include "vitc/pixel_decoder.hpp"

#include <algorithm>
#include <cmath>

#include "vitc/errors.hpp"
#include "vitc/objectives.hpp"
#include "vitc/ops.hpp"

namespace vitc {

std::vector<int> unet_channels(const UNetConfig& cfg) {
    std::vector<int> ch;
    int c = cfg.base_channels;
    for (int l = 0; l < cfg.levels; ++l) {
        ch.push_back(std::min(c, cfg.max_channels));
        c *= 2;
    }
    return ch;
}

void validate(const UNetConfig& cfg, int input_size) {
    if (cfg.levels < 2) throw ConfigError("model.unet.levels must be >= 2");
    if (cfg.base_channels < 1) throw ConfigError("model.unet.base_channels must be >= 1");
    if (cfg.max_channels < cfg.base_channels) throw ConfigError("model.unet.max_channels must be >= base_channels");
    if (cfg.fusion_channels < 1) throw ConfigError("model.unet.fusion_channels must be >= 1");
    if (cfg.in_channels < 1) throw ConfigError("model.unet.in_channels must be >= 1");
    const int factor = 1 << (cfg.levels - 1);
    if (input_size > 0 && input_size % factor != 0)
        throw ConfigError("model.unet.levels: input size " + std::to_string(input_size) + " is not divisible by " +
                          std::to_string(factor));
}

ConvBlock::ConvBlock(ParameterStore& store, const std::string& name, int in, int out, int stride, double slope_,
                     Rng& rng)
    : conv1(store, name + ".conv1", in, out, 3, stride, rng),
      conv2(store, name + ".conv2", out, out, 3, 1, rng),
      norm1(store, name + ".norm1", out),
      norm2(store, name + ".norm2", out),
      slope(slope_) {}

Var ConvBlock::operator()(const Var& x) const {
    Var h = ops::leaky_relu(norm1(conv1(x)), slope);
    return ops::leaky_relu(norm2(conv2(h)), slope);
}

UNet::UNet(ParameterStore& store, const std::string& name, const UNetConfig& cfg, std::vector<int> skip_extra,
           int bottleneck_extra, int out_channels, Rng& rng)
    : cfg_(cfg),
      channels_(unet_channels(cfg)),
      skip_extra_(std::move(skip_extra)),
      bottleneck_extra_(bottleneck_extra),
      out_channels_(out_channels) {
    validate(cfg, 0);
    const int levels = cfg.levels;
    if (static_cast<int>(skip_extra_.size()) != levels - 1)
        throw ConfigError("unet: need one skip extension width per decoder level");
    int in = cfg.in_channels;
    for (int l = 0; l < levels; ++l) {
        down_.emplace_back(store, name + ".down" + std::to_string(l), in, channels_[static_cast<std::size_t>(l)],
                           l == 0 ? 1 : 2, cfg.leaky_slope, rng);
        in = channels_[static_cast<std::size_t>(l)];
    }
    up_.resize(static_cast<std::size_t>(levels - 1));
    up_blocks_.resize(static_cast<std::size_t>(levels - 1));
    for (int l = levels - 2; l >= 0; --l) {
        const auto u = static_cast<std::size_t>(l);
        const int from = l == levels - 2 ? channels_.back() + bottleneck_extra_ : channels_[u + 1];
        up_[u] = ConvTranspose2x2(store, name + ".up" + std::to_string(l), from, channels_[u], rng);
        up_blocks_[u] = ConvBlock(store, name + ".upblock" + std::to_string(l), 2 * channels_[u] + skip_extra_[u],
                                  channels_[u], 1, cfg.leaky_slope, rng);
    }
    head_ = Conv2d(store, name + ".head", channels_[0], out_channels, 1, 1, rng);
}

UNet::Encoded UNet::encode(const Var& image) const {
    if (image.value().rank() != 3 || image.dim(0) != cfg_.in_channels)
        throw ShapeError("unet: expected [" + std::to_string(cfg_.in_channels) + " x H x W] input, got " +
                         shape_str(image.shape()));
    const int factor = 1 << (levels() - 1);
    if (image.dim(1) % factor != 0 || image.dim(2) % factor != 0)
        throw ShapeError("unet: input " + shape_str(image.shape()) + " not divisible by " + std::to_string(factor));
    Encoded e;
    Var x = image;
    for (const auto& block : down_) {
        x = block(x);
        e.features.push_back(x);
    }
    return e;
}

Var UNet::decode(std::span<const Var> skips, const Var& bottleneck) const {
    const int levels = this->levels();
    if (static_cast<int>(skips.size()) != levels - 1) throw ShapeError("unet: wrong number of skip tensors");
    Var x = bottleneck;
    for (int l = levels - 2; l >= 0; --l) {
        const auto u = static_cast<std::size_t>(l);
        x = up_[u](x);
        const Var parts[] = {x, skips[u]};
        x = up_blocks_[u](ops::concat_channels(parts));
    }
    return head_(x);
}

Var fuse_state(const Var& state, int grid_h, int grid_w, const Var& skip, const Linear& projection) {
    if (state.value().rank() != 2 || state.dim(0) != grid_h * grid_w)
        throw ShapeError("fuse_state: state " + shape_str(state.shape()) + " is not a " + std::to_string(grid_h) +
                         "x" + std::to_string(grid_w) + " grid");
    const Var projected = projection(state);  // [G x F]
    const int f = projected.dim(1);
    Var grid = ops::reshape(ops::transpose(projected), {f, grid_h, grid_w});
    Var resized = ops::resize_bilinear(grid, skip.dim(1), skip.dim(2));
    const Var parts[] = {skip, resized};
    return ops::concat_channels(parts);
}

std::vector<int> predict_mask(std::span<const double> logits, double threshold) {
    std::vector<int> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits[i]));
        out[i] = p > threshold ? 1 : 0;
    }
    return out;
}

std::vector<int> combine_class_probabilities(std::span<const std::vector<double>> probs, std::span<const int> labels,
                                             std::size_t pixels) {
    if (probs.size() != labels.size()) throw ShapeError("combine_class_probabilities: one label per map required");
    for (const auto& p : probs)
        if (p.size() != pixels) throw ShapeError("combine_class_probabilities: probability map size mismatch");
    std::vector<int> out(pixels, 0);
    for (std::size_t i = 0; i < pixels; ++i) {
        double best = 0.5;
        for (std::size_t c = 0; c < probs.size(); ++c)
            if (probs[c][i] > best) {
                best = probs[c][i];
                out[i] = labels[c];
            }
    }
    return out;
}

// ---- ViTC-UNet -----------------------------------------------------------------------

ViTCUNet::ViTCUNet(const ModelConfig& cfg, int feature_dim, int grid_h, int grid_w,
                   const std::vector<std::string>& class_names)
    : cfg_(cfg), token_rng_(cfg.init_seed ^ 0x7f4a7c15ULL) {
    validate(cfg.unet, 0);
    if (cfg.conditioning.blocks != cfg.unet.levels - 1)
        throw ConfigError("model.conditioning.blocks (" + std::to_string(cfg.conditioning.blocks) +
                          ") must equal model.unet.levels - 1 (" + std::to_string(cfg.unet.levels - 1) + ")");
    Rng rng(cfg.init_seed);
    const int dim = feature_dim;
    conditioning_ = ConditioningDecoder(store_, "conditioning", feature_dim, dim, cfg.conditioning, rng);
    tokens_ = StructureTokenTable(dim, grid_h, grid_w, cfg.conditioning.positional_init_std, rng);
    const int levels = cfg.unet.levels;
    for (int l = 0; l < levels - 1; ++l)
        fusion_.emplace_back(store_, "fusion" + std::to_string(l), dim, cfg.unet.fusion_channels, rng);
    unet_ = UNet(store_, "unet", cfg.unet, std::vector<int>(static_cast<std::size_t>(levels - 1), cfg.unet.fusion_channels),
                 0, 1, rng);
    for (const auto& name : class_names) add_structure_token(name);
}

std::vector<NamedParameter> ViTCUNet::parameters() const {
    std::vector<NamedParameter> out = store_.entries();
    out.push_back({"tokens.positional", tokens_.positional()});
    for (const auto& e : tokens_.entries())
        if (e.trainable) out.push_back({"tokens.entry." + e.name, e.vector});
    return out;
}

std::size_t ViTCUNet::add_structure_token(const std::string& name) {
    return tokens_.add(name, cfg_.conditioning.token_init_std, token_rng_);
}

ConditionedTrajectory ViTCUNet::condition(const FeatureGrid& features, const std::string& token) const {
    return conditioning_.condition(features, tokens_, token);
}

int ViTCUNet::fusion_level(int index) const {
    const int n = unet_.levels() - 1;
    return cfg_.unet.reverse_fusion ? n - 1 - index : index;
}

Var ViTCUNet::segment(const Var& image, const ConditionedTrajectory& traj) const {
    if (static_cast<int>(traj.size()) != unet_.levels() - 1)
        throw ConfigError("segment: trajectory has " + std::to_string(traj.size()) + " states, the UNet needs " +
                          std::to_string(unet_.levels() - 1));
    return segment(unet_.encode(image), traj);
}

Var ViTCUNet::segment(const UNet::Encoded& encoded, const ConditionedTrajectory& traj) const {
    const int n = unet_.levels() - 1;
    if (static_cast<int>(traj.size()) != n)
        throw ConfigError("segment: trajectory has " + std::to_string(traj.size()) + " states, the UNet needs " +
                          std::to_string(n));
    std::vector<Var> skips(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto level = static_cast<std::size_t>(fusion_level(i));
        skips[level] = fuse_state(traj.states[static_cast<std::size_t>(i)], traj.grid_h, traj.grid_w,
                                  encoded.features[level], fusion_[level]);
    }
    Var logits = unet_.decode(skips, encoded.features.back());
    if (!logits.value().all_finite()) throw NumericalError("segment: non-finite logits");
    return logits;
}

Var ViTCUNet::logits(const PreparedImage& image, const FeatureGrid& features, const std::string& token) const {
    return segment(constant(image.channels), condition(features, token));
}

Var ViTCUNet::sample_loss(const Var& image, const FeatureGrid& features, std::span<const int> labels,
                          std::span<const ClassRef> classes, const LossConfig& loss) const {
    if (classes.empty()) throw InvalidInput("sample_loss: no classes to train on");
    const std::size_t pixels = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
    if (labels.size() != pixels) throw ShapeError("sample_loss: label plane does not match the image");
    // The encoder path does not depend on the token, so it is shared by every class pass.
    const UNet::Encoded encoded = unet_.encode(image);
    const Var feats = constant(features.tokens());
    Var total;
    for (const ClassRef& cls : classes) {
        const ConditionedTrajectory traj =
            conditioning_.condition(feats, features.grid_h(), features.grid_w(), tokens_, cls.name);
        const Var out = segment(encoded, traj);
        Tensor target(out.shape());
        for (std::size_t i = 0; i < pixels; ++i) target[i] = labels[i] == cls.label ? 1.0 : 0.0;
        const Var l = combined_loss(out, target, loss);
        total = total.defined() ? ops::add(total, l) : l;
    }
    return ops::scale(total, 1.0 / static_cast<double>(classes.size()));
}

std::vector<int> ViTCUNet::predict_labelmap(const Var& image, const FeatureGrid& features,
                                            std::span<const ClassRef> classes) const {
    NoGradGuard no_grad;
    const std::size_t pixels = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
    if (classes.empty()) return std::vector<int>(pixels, 0);
    const UNet::Encoded encoded = unet_.encode(image);
    std::vector<std::vector<double>> probs;
    std::vector<int> labels;
    for (const ClassRef& cls : classes) {
        const Var out = segment(encoded, condition(features, cls.name));
        const Tensor p = ops::sigmoid(out).value();
        probs.emplace_back(p.to_vector());
        labels.push_back(cls.label);
    }
    return combine_class_probabilities(probs, labels, pixels);
}

}  // namespace vitc
