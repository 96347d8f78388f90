#include "vitc/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

namespace vitc {

PreparedImage preprocess(const ImageSlice& slice, int target_size, int patch_size, double window_lo,
                         double window_hi) {
    const Tensor& px = slice.pixels;
    if (px.rank() != 2) throw InvalidInput("preprocess: slice must be [H x W], got " + shape_str(px.shape()));
    if (px.empty()) throw InvalidInput("preprocess: empty slice");
    if (!px.all_finite()) throw InvalidInput("preprocess: slice contains non-finite values");
    if (patch_size <= 0 || target_size <= 0 || target_size % patch_size != 0)
        throw ConfigError("preprocess: target_size " + std::to_string(target_size) +
                          " is not a positive multiple of patch size " + std::to_string(patch_size));

    Tensor x = px;
    if (window_lo < window_hi)
        for (double& v : x.values()) v = std::clamp(v, window_lo, window_hi);

    const double n = static_cast<double>(x.size());
    double mu = 0.0;
    for (double v : x.values()) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x.values()) var += (v - mu) * (v - mu);
    const double sigma = std::sqrt(var / n);
    for (double& v : x.values()) v = (v - mu) / (sigma + kStandardizeEps);

    const Tensor resized = ops::resize_bilinear(x.reshaped({1, x.dim(0), x.dim(1)}), target_size, target_size);
    PreparedImage out{Tensor({3, target_size, target_size})};
    const std::size_t plane = resized.size();
    for (int c = 0; c < 3; ++c)
        std::copy(resized.data(), resized.data() + plane, out.channels.data() + static_cast<std::size_t>(c) * plane);
    return out;
}

Tensor patchify(const Tensor& channels, int p) {
    const int c = channels.dim(0), h = channels.dim(1), w = channels.dim(2);
    if (h % p != 0 || w % p != 0)
        throw ShapeError("patchify: image " + shape_str(channels.shape()) + " is not divisible by patch " +
                         std::to_string(p));
    const int gh = h / p, gw = w / p;
    Tensor out({gh * gw, c * p * p});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double* row = out.data() + static_cast<std::size_t>(gy * gw + gx) * c * p * p;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x) *row++ = channels.at(ch, gy * p + y, gx * p + x);
        }
    return out;
}

SyntheticBackbone::SyntheticBackbone(std::uint64_t seed, int patch_size, int depth, int dim)
    : seed_(seed), patch_(patch_size), depth_(depth), dim_(dim), heads_(dim % 8 == 0 ? 8 : 1) {
    if (depth < 1) throw ConfigError("backbone.depth must be >= 1");
    if (dim < 8) throw ConfigError("backbone.dim must be >= 8");
    if (patch_size < 1) throw ConfigError("backbone.patch must be >= 1");
    Rng rng(seed);
    const int in = 3 * patch_size * patch_size;
    embed_ = normal_tensor({in, dim}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    pos_freq_ = normal_tensor({2, dim}, 1.0, rng);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int l = 0; l < depth; ++l) {
        MixingLayer layer;
        layer.wq = normal_tensor({dim, dim}, s, rng);
        layer.wk = normal_tensor({dim, dim}, s, rng);
        layer.wv = normal_tensor({dim, dim}, s, rng);
        layer.wo = normal_tensor({dim, dim}, s, rng);
        layer.w1 = normal_tensor({dim, 2 * dim}, s, rng);
        layer.w2 = normal_tensor({2 * dim, dim}, s / std::sqrt(2.0), rng);
        layers_.push_back(std::move(layer));
    }
}

std::string SyntheticBackbone::id() const {
    return "synthetic-s" + std::to_string(seed_) + "-p" + std::to_string(patch_) + "-d" + std::to_string(depth_) +
           "-w" + std::to_string(dim_);
}

std::vector<const Tensor*> SyntheticBackbone::frozen_weights() const {
    std::vector<const Tensor*> out{&embed_, &pos_freq_};
    for (const auto& l : layers_)
        for (const Tensor* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) out.push_back(t);
    return out;
}

FeatureGrid SyntheticBackbone::extract(const PreparedImage& image) const {
    const Tensor& ch = image.channels;
    if (ch.rank() != 3 || ch.dim(0) != 3)
        throw ShapeError("extract_features: expected [3 x H x W], got " + shape_str(ch.shape()));
    if (ch.dim(1) % patch_ != 0 || ch.dim(2) % patch_ != 0)
        throw ShapeError("extract_features: image " + shape_str(ch.shape()) + " not divisible by patch " +
                         std::to_string(patch_));
    NoGradGuard no_grad;
    const int gh = ch.dim(1) / patch_, gw = ch.dim(2) / patch_;
    const Var zero_d = constant(Tensor({dim_}, 0.0));
    const Var ones_d = constant(Tensor({dim_}, 1.0));

    Tensor tokens = ops::matmul(constant(patchify(ch, patch_)), constant(embed_)).value();
    // Fixed sinusoidal position code keeps identical patches at different places distinct.
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int d = 0; d < dim_; ++d) {
                const double phase = pos_freq_.at(0, d) * gy / gh + pos_freq_.at(1, d) * gx / gw;
                tokens.at(gy * gw + gx, d) += 0.5 * std::sin(std::numbers::pi * phase + d);
            }
    Var x = constant(std::move(tokens));
    for (const auto& l : layers_) {
        Var h = ops::layer_norm(x, ones_d, zero_d);
        Var q = ops::matmul(h, constant(l.wq));
        Var k = ops::matmul(h, constant(l.wk));
        Var v = ops::matmul(h, constant(l.wv));
        x = ops::add(x, ops::matmul(ops::attention(q, k, v, heads_), constant(l.wo)));
        h = ops::layer_norm(x, ones_d, zero_d);
        x = ops::add(x, ops::matmul(ops::gelu(ops::matmul(h, constant(l.w1))), constant(l.w2)));
    }
    x = ops::layer_norm(x, ones_d, zero_d);
    return FeatureGrid{x.value().reshaped({gh, gw, dim_}), patch_, id()};
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg) {
    if (cfg.kind == "synthetic") return std::make_unique<SyntheticBackbone>(cfg.seed, cfg.patch, cfg.depth, cfg.dim);
    if (cfg.kind == "dinov2_s" || cfg.kind == "sam2_s")
        throw ConfigError("backbone.kind: '" + cfg.kind +
                          "' requires external pre-trained weights, which this build does not bundle");
    throw ConfigError("backbone.kind: unknown backbone '" + cfg.kind + "'");
}

}  // namespace vitc
