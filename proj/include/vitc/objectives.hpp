#pragma once

#include <span>
#include <vector>

#include "vitc/autograd.hpp"
#include "vitc/config.hpp"
#include "vitc/label_map.hpp"

namespace vitc {

/// Mean over pixels of -(1 - p_t)^gamma log(p_t), with p_t = p for y = 1 and
/// 1 - p otherwise. Probabilities are clamped to [1e-7, 1 - 1e-7].
double focal_loss(std::span<const double> probs, std::span<const double> target, double gamma);
/// Soft Dice: 1 - (2 sum p y + smooth) / (sum p + sum y + smooth).
double dice_loss(std::span<const double> probs, std::span<const double> target, double smooth);
/// Mean binary cross-entropy with the same clamp as focal_loss.
double binary_cross_entropy(std::span<const double> probs, std::span<const double> target);

/// w_focal * focal + w_dice * dice on sigmoid(logits). `target` is a binary
/// mask with the logits' element count.
Var combined_loss(const Var& logits, const Tensor& target, const LossConfig& cfg);

void validate(const LossConfig& cfg);

struct MiouResult {
    std::vector<double> per_class;  // index c-1 holds class c
    double mean = 0.0;
};

/// Foreground IoU per class over the whole volume. Classes absent from both
/// volumes score 1. `classes` selects which labels enter the mean (all of
/// 1..num_classes when empty).
MiouResult volume_miou(const LabelVolume& pred, const LabelVolume& gt, int num_classes,
                       std::span<const int> classes = {});

}  // namespace vitc
