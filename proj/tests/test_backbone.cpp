#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "vitc/backbone.hpp"
#include "vitc/errors.hpp"

using namespace vitc;
using vitc::testing::random_tensor;

TEST(Preprocess, SingleChannelReplicatedToThree) {
    ImageSlice s{random_tensor({96, 96}, 1, 0, 10), std::nullopt};
    PreparedImage p = preprocess(s, 224, 16);
    ASSERT_EQ(p.channels.shape(), (Shape{3, 224, 224}));
    const std::size_t plane = 224u * 224u;
    for (std::size_t i = 0; i < plane; ++i) {
        EXPECT_EQ(p.channels[i], p.channels[plane + i]);
        EXPECT_EQ(p.channels[i], p.channels[2 * plane + i]);
    }
}

TEST(Preprocess, ConstantSliceBecomesZero) {
    ImageSlice s{Tensor({32, 32}, 7.0), std::nullopt};
    PreparedImage p = preprocess(s, 32, 16);
    for (double v : p.channels.values()) EXPECT_EQ(v, 0.0);
}

TEST(Preprocess, StandardizationClosedForm) {
    // Half 0, half 100: mean 50, population std 50.
    Tensor px({4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) px.at(y, x) = x < 2 ? 0.0 : 100.0;
    PreparedImage p = preprocess({px, std::nullopt}, 4, 2);
    double lo = 1e300, hi = -1e300;
    for (double v : p.channels.values()) lo = std::min(lo, v), hi = std::max(hi, v);
    EXPECT_NEAR(lo, -50.0 / (50.0 + 1e-6), 1e-12);
    EXPECT_NEAR(hi, 50.0 / (50.0 + 1e-6), 1e-12);
}

TEST(Preprocess, WindowClampsFirst) {
    Tensor px({2, 2}, std::vector<double>{-1000, 0, 50, 1000});
    PreparedImage a = preprocess({px, std::nullopt}, 2, 1, 0.0, 50.0);
    Tensor clamped({2, 2}, std::vector<double>{0, 0, 50, 50});
    PreparedImage b = preprocess({clamped, std::nullopt}, 2, 1);
    EXPECT_TRUE(a.channels.bit_equal(b.channels));
}

TEST(Preprocess, Errors) {
    Tensor bad({4, 4}, 1.0);
    bad[3] = std::nan("");
    EXPECT_THROW(preprocess({bad, std::nullopt}, 16, 16), InvalidInput);
    EXPECT_THROW(preprocess({Tensor({4, 4}, 1.0), std::nullopt}, 20, 16), ConfigError);
}

TEST(SyntheticBackbone, GridGeometry) {
    SyntheticBackbone dino(0, 14, 1, 384);
    PreparedImage big{random_tensor({3, 448, 448}, 2)};
    FeatureGrid g = dino.extract(big);
    EXPECT_EQ(g.grid.shape(), (Shape{32, 32, 384}));
    EXPECT_EQ(g.patch_size, 14);

    SyntheticBackbone def(0, 16, 2, 384);
    FeatureGrid g2 = def.extract(PreparedImage{random_tensor({3, 224, 224}, 3)});
    EXPECT_EQ(g2.grid.shape(), (Shape{14, 14, 384}));
    EXPECT_EQ(g2.grid_h() * g2.patch_size, 224);
    EXPECT_TRUE(g2.grid.all_finite());
}

TEST(SyntheticBackbone, ShapeMismatchThrows) {
    SyntheticBackbone b(0, 16, 1, 32);
    EXPECT_THROW(b.extract(PreparedImage{Tensor({3, 40, 48})}), ShapeError);
}

TEST(SyntheticBackbone, DeterministicAndSeeded) {
    SyntheticBackbone a(0, 8, 2, 32), b(0, 8, 2, 32), c(1, 8, 2, 32);
    auto wa = a.frozen_weights(), wb = b.frozen_weights(), wc = c.frozen_weights();
    ASSERT_EQ(wa.size(), wb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < wa.size(); ++i) {
        EXPECT_TRUE(wa[i]->bit_equal(*wb[i]));
        any_diff |= !wa[i]->bit_equal(*wc[i]);
    }
    EXPECT_TRUE(any_diff);
    PreparedImage img{random_tensor({3, 32, 32}, 4)};
    EXPECT_TRUE(a.extract(img).grid.bit_equal(a.extract(img).grid));
    EXPECT_TRUE(a.extract(img).grid.bit_equal(b.extract(img).grid));
}

TEST(SyntheticBackbone, DistinctInputsGiveDistinctGrids) {
    SyntheticBackbone b(0, 8, 2, 32);
    std::vector<Tensor> grids;
    for (int i = 0; i < 32; ++i) grids.push_back(b.extract(PreparedImage{random_tensor({3, 32, 32}, 100 + i)}).grid);
    for (std::size_t i = 0; i < grids.size(); ++i)
        for (std::size_t j = i + 1; j < grids.size(); ++j) EXPECT_GT(grids[i].max_abs_diff(grids[j]), 0.0);
}

TEST(SyntheticBackbone, RejectsBadParameters) {
    EXPECT_THROW(SyntheticBackbone(0, 8, 0, 32), ConfigError);
    EXPECT_THROW(SyntheticBackbone(0, 8, 1, 4), ConfigError);
}

TEST(MakeBackbone, KindsAndIds) {
    BackboneConfig cfg;
    cfg.dim = 32;
    cfg.patch = 8;
    auto b = make_backbone(cfg);
    EXPECT_EQ(b->dim(), 32);
    EXPECT_EQ(b->patch_size(), 8);
    EXPECT_FALSE(b->id().empty());
    cfg.kind = "dinov2_s";
    EXPECT_THROW(make_backbone(cfg), ConfigError);
    cfg.kind = "nonsense";
    EXPECT_THROW(make_backbone(cfg), ConfigError);
}

TEST(Patchify, RowMajorPatches) {
    Tensor img({1, 4, 4});
    for (int i = 0; i < 16; ++i) img[static_cast<std::size_t>(i)] = i;
    Tensor p = patchify(img, 2);
    ASSERT_EQ(p.shape(), (Shape{4, 4}));
    // Second patch (gy=0, gx=1) covers pixels 2,3,6,7.
    EXPECT_EQ(p.at(1, 0), 2.0);
    EXPECT_EQ(p.at(1, 3), 7.0);
    EXPECT_THROW(patchify(img, 3), ShapeError);
}
