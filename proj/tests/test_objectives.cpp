#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "vitc/errors.hpp"
#include "vitc/objectives.hpp"
#include "vitc/ops.hpp"

using namespace vitc;
using vitc::testing::gradcheck;
using vitc::testing::random_tensor;

namespace {

std::vector<double> binary(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(0.4);
    std::vector<double> out(n);
    for (auto& v : out) v = b(rng) ? 1.0 : 0.0;
    return out;
}

double oracle_iou(const LabelVolume& p, const LabelVolume& g, int c) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
        const bool a = p.labels[i] == c, b = g.labels[i] == c;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

LabelVolume random_volume(std::uint64_t seed, int k) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, k);
    LabelVolume v{2, 5, 6, std::vector<int>(60)};
    for (auto& l : v.labels) l = u(rng);
    return v;
}

}  // namespace

TEST(Focal, HandValue) {
    std::vector<double> p{0.5}, y{1.0};
    EXPECT_NEAR(focal_loss(p, y, 2.0), 0.25 * std::log(2.0), 1e-12);
    std::vector<double> near1{1.0 - 1e-9};
    EXPECT_LT(focal_loss(near1, y, 2.0), 1e-12);
}

TEST(Focal, GammaZeroIsBce) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        Tensor p = random_tensor({37}, s, 0.0, 1.0);
        auto y = binary(37, s + 1000);
        EXPECT_NEAR(focal_loss(p.values(), y, 0.0), binary_cross_entropy(p.values(), y), 1e-12);
    }
}

TEST(Focal, MatchesDifferentiableVersion) {
    Tensor p = random_tensor({1, 5, 5}, 3, 0.0, 1.0);
    auto y = binary(25, 4);
    Tensor yt({1, 5, 5}, y);
    EXPECT_NEAR(ops::focal_loss(constant(p), yt, 2.0).value()[0], focal_loss(p.values(), y, 2.0), 1e-15);
    EXPECT_NEAR(ops::dice_loss(constant(p), yt, 1.0).value()[0], dice_loss(p.values(), y, 1.0), 1e-15);
}

TEST(Dice, HandValues) {
    auto y = binary(50, 5);
    EXPECT_EQ(dice_loss(y, y, 1.0), 0.0);
    std::vector<double> a(200, 0.0), b(200, 0.0);
    std::fill(a.begin(), a.begin() + 100, 1.0);
    std::fill(b.begin() + 100, b.end(), 1.0);
    EXPECT_NEAR(dice_loss(a, b, 1.0), 1.0 - 1.0 / 201.0, 1e-12);
    // p covers half of y, equal areas A = 100: 1 - (100 + 1) / (200 + 1).
    std::vector<double> c(200, 0.0);
    std::fill(c.begin() + 50, c.begin() + 150, 1.0);
    EXPECT_NEAR(dice_loss(c, a, 1.0), 1.0 - 101.0 / 201.0, 1e-12);
}

TEST(Dice, BoundedOnRandomInputs) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        Tensor p = random_tensor({40}, s, 0.0, 1.0);
        double d = dice_loss(p.values(), binary(40, s + 7), 1.0);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
}

TEST(Losses, ShapeMismatch) {
    std::vector<double> a(3, 0.5), b(4, 1.0);
    EXPECT_THROW(focal_loss(a, b, 2.0), ShapeError);
    EXPECT_THROW(dice_loss(a, b, 1.0), ShapeError);
    EXPECT_THROW(combined_loss(constant(Tensor({3})), Tensor({4}), LossConfig{}), ShapeError);
}

TEST(Combined, WeightsSelectTerms) {
    Tensor logits = random_tensor({1, 4, 4}, 8, -3, 3);
    auto y = binary(16, 9);
    Tensor target({1, 4, 4}, y);
    std::vector<double> p(16);
    for (std::size_t i = 0; i < 16; ++i) p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    LossConfig focal_only{2.0, 1.0, 0.0, 1.0};
    EXPECT_NEAR(combined_loss(constant(logits), target, focal_only).value()[0], focal_loss(p, y, 2.0), 1e-14);
    LossConfig both;
    EXPECT_NEAR(combined_loss(constant(logits), target, both).value()[0], focal_loss(p, y, 2.0) + dice_loss(p, y, 1.0),
                1e-14);
    Tensor perfect({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) perfect[i] = y[i] > 0.5 ? 40.0 : -40.0;
    EXPECT_LT(combined_loss(constant(perfect), target, both).value()[0], 1e-9);
}

TEST(Combined, GradientOnToy) {
    Var logits(random_tensor({1, 4, 4}, 10, -2, 2), true);
    Tensor target({1, 4, 4}, binary(16, 11));
    auto r = gradcheck([&] { return combined_loss(logits, target, LossConfig{}); }, {logits}, 16);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(LossConfig, Validation) {
    EXPECT_NO_THROW(validate(LossConfig{}));
    EXPECT_THROW(validate(LossConfig{-1.0, 1, 1, 1}), ConfigError);
    EXPECT_THROW(validate(LossConfig{2.0, 0, 0, 1}), ConfigError);
    EXPECT_THROW(validate(LossConfig{2.0, 1, 1, 0}), ConfigError);
}

TEST(VolumeMiou, HandExamples) {
    LabelVolume gt{1, 4, 4, std::vector<int>(16, 0)};
    EXPECT_EQ(volume_miou(gt, gt, 2).mean, 1.0);
    for (int i = 0; i < 8; ++i) gt.labels[static_cast<std::size_t>(i)] = 1;
    LabelVolume pred{1, 4, 4, std::vector<int>(16, 0)};
    EXPECT_EQ(volume_miou(pred, gt, 1).per_class[0], 0.0);
    for (int i = 4; i < 12; ++i) pred.labels[static_cast<std::size_t>(i)] = 1;
    EXPECT_NEAR(volume_miou(pred, gt, 1).per_class[0], 1.0 / 3.0, 1e-15);
    // Absent from both: IoU 1.
    EXPECT_EQ(volume_miou(pred, gt, 2).per_class[1], 1.0);
    EXPECT_THROW(volume_miou(pred, LabelVolume{1, 2, 8, gt.labels}, 2), ShapeError);
}

TEST(VolumeMiou, MatchesOracleSymmetricAndPermutationInvariant) {
    const int k = 3;
    for (std::uint64_t s = 0; s < 30; ++s) {
        LabelVolume a = random_volume(s, k), b = random_volume(s + 500, k);
        auto r = volume_miou(a, b, k);
        double mean = 0;
        for (int c = 1; c <= k; ++c) {
            EXPECT_NEAR(r.per_class[static_cast<std::size_t>(c - 1)], oracle_iou(a, b, c), 1e-15);
            mean += oracle_iou(a, b, c);
        }
        EXPECT_NEAR(r.mean, mean / k, 1e-15);
        EXPECT_EQ(volume_miou(b, a, k).mean, r.mean);
        std::vector<int> perm{0, 3, 1, 2};
        LabelVolume pa = a, pb = b;
        for (auto& l : pa.labels) l = perm[static_cast<std::size_t>(l)];
        for (auto& l : pb.labels) l = perm[static_cast<std::size_t>(l)];
        EXPECT_NEAR(volume_miou(pa, pb, k).mean, r.mean, 1e-15);
    }
}

TEST(VolumeMiou, ClassSubset) {
    LabelVolume a = random_volume(1, 3), b = random_volume(2, 3);
    std::vector<int> sel{1, 3};
    auto r = volume_miou(a, b, 3, sel);
    EXPECT_NEAR(r.mean, (oracle_iou(a, b, 1) + oracle_iou(a, b, 3)) / 2, 1e-15);
}
