#include "vitc/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

namespace vitc {

namespace {

void require_match(std::span<const double> p, std::span<const double> y, const char* op) {
    if (p.size() != y.size())
        throw ShapeError(std::string(op) + ": " + std::to_string(p.size()) + " probabilities vs " +
                         std::to_string(y.size()) + " targets");
    if (p.empty()) throw ShapeError(std::string(op) + ": empty input");
}

}  // namespace

double focal_loss(std::span<const double> probs, std::span<const double> target, double gamma) {
    require_match(probs, target, "focal_loss");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], ops::kProbEps, 1.0 - ops::kProbEps);
        const double pt = target[i] > 0.5 ? p : 1.0 - p;
        total += -std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return total / static_cast<double>(probs.size());
}

double binary_cross_entropy(std::span<const double> probs, std::span<const double> target) {
    require_match(probs, target, "binary_cross_entropy");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], ops::kProbEps, 1.0 - ops::kProbEps);
        total -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
    }
    return total / static_cast<double>(probs.size());
}

double dice_loss(std::span<const double> probs, std::span<const double> target, double smooth) {
    require_match(probs, target, "dice_loss");
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inter += probs[i] * target[i];
        sp += probs[i];
        sy += target[i];
    }
    return 1.0 - (2.0 * inter + smooth) / (sp + sy + smooth);
}

void validate(const LossConfig& cfg) {
    if (!(cfg.gamma >= 0.0)) throw ConfigError("train.loss.gamma must be >= 0");
    if (cfg.w_focal < 0.0 || cfg.w_dice < 0.0) throw ConfigError("train.loss weights must be >= 0");
    if (cfg.w_focal == 0.0 && cfg.w_dice == 0.0) throw ConfigError("train.loss weights must not both be zero");
    if (!(cfg.dice_smooth > 0.0)) throw ConfigError("train.loss.dice_smooth must be > 0");
}

Var combined_loss(const Var& logits, const Tensor& target, const LossConfig& cfg) {
    if (logits.value().size() != target.size())
        throw ShapeError("combined_loss: logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(target.shape()));
    const Var probs = ops::sigmoid(logits);
    Var total;
    if (cfg.w_focal != 0.0) total = ops::scale(ops::focal_loss(probs, target, cfg.gamma), cfg.w_focal);
    if (cfg.w_dice != 0.0) {
        Var d = ops::scale(ops::dice_loss(probs, target, cfg.dice_smooth), cfg.w_dice);
        total = total.defined() ? ops::add(total, d) : d;
    }
    if (!total.defined()) throw ConfigError("combined_loss: both loss weights are zero");
    return total;
}

MiouResult volume_miou(const LabelVolume& pred, const LabelVolume& gt, int num_classes, std::span<const int> classes) {
    if (pred.depth != gt.depth || pred.height != gt.height || pred.width != gt.width ||
        pred.labels.size() != gt.labels.size())
        throw ShapeError("volume_miou: prediction " + std::to_string(pred.depth) + "x" + std::to_string(pred.height) +
                         "x" + std::to_string(pred.width) + " vs ground truth " + std::to_string(gt.depth) + "x" +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
    if (num_classes < 1) throw InvalidInput("volume_miou: num_classes must be >= 1");
    const auto nc = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> inter(nc + 1, 0), uni(nc + 1, 0);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const int p = pred.labels[i];
        const int g = gt.labels[i];
        if (p < 0 || p > num_classes || g < 0 || g > num_classes)
            throw InvalidInput("volume_miou: label outside [0, " + std::to_string(num_classes) + "]");
        if (p == g) {
            if (p > 0) {
                ++inter[static_cast<std::size_t>(p)];
                ++uni[static_cast<std::size_t>(p)];
            }
        } else {
            if (p > 0) ++uni[static_cast<std::size_t>(p)];
            if (g > 0) ++uni[static_cast<std::size_t>(g)];
        }
    }
    MiouResult r;
    r.per_class.resize(nc);
    for (std::size_t c = 1; c <= nc; ++c)
        r.per_class[c - 1] = uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    std::vector<int> selected(classes.begin(), classes.end());
    if (selected.empty())
        for (int c = 1; c <= num_classes; ++c) selected.push_back(c);
    double s = 0.0;
    for (int c : selected) {
        if (c < 1 || c > num_classes) throw InvalidInput("volume_miou: class " + std::to_string(c) + " out of range");
        s += r.per_class[static_cast<std::size_t>(c - 1)];
    }
    r.mean = s / static_cast<double>(selected.size());
    return r;
}

}  // namespace vitc
