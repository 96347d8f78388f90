#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "vitc/baselines.hpp"
#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

using namespace vitc;
using vitc::testing::gradcheck;
using vitc::testing::random_features;
using vitc::testing::random_tensor;
using vitc::testing::tiny_config;

namespace {

std::vector<std::string> names(int k) {
    std::vector<std::string> out;
    for (int i = 0; i < k; ++i) out.push_back("c" + std::to_string(i));
    return out;
}

std::vector<int> stripes(int size, int k) {
    std::vector<int> lab(static_cast<std::size_t>(size * size));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) lab[static_cast<std::size_t>(y * size + x)] = (x * (k + 1)) / size;
    return lab;
}

}  // namespace

TEST(Baselines, ChannelCountIsKPlusOne) {
    for (const char* kind : {"linear", "hybrid"})
        for (int k : {1, 3, 7}) {
            ModelConfig cfg = tiny_config().model;
            cfg.kind = kind;
            auto m = make_model(cfg, 16, 4, 4, names(k));
            EXPECT_EQ(m->output_channels(), k + 1) << kind;
            EXPECT_EQ(m->kind(), kind);
        }
    ModelConfig cfg = tiny_config().model;
    cfg.kind = "linear";
    LinearHeadModel lin(cfg, 16, 3);
    EXPECT_EQ(lin.forward(random_features(4, 4, 16, 1), 16, 16).shape(), (Shape{4, 16, 16}));
    cfg.kind = "hybrid";
    HybridUNetModel hyb(cfg, 16, 3);
    EXPECT_EQ(hyb.forward(constant(random_tensor({3, 16, 16}, 2)), random_features(4, 4, 16, 3)).shape(),
              (Shape{4, 16, 16}));
    cfg.kind = "nope";
    EXPECT_THROW(make_model(cfg, 16, 4, 4, names(2)), ConfigError);
}

TEST(Baselines, LinearProbabilitiesSumToOne) {
    ModelConfig cfg = tiny_config().model;
    LinearHeadModel lin(cfg, 16, 2);
    Tensor p = lin.forward(random_features(4, 4, 16, 4), 8, 8).value();
    for (int i = 0; i < 64; ++i) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += p[static_cast<std::size_t>(c * 64 + i)];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Baselines, ArgmaxChannels) {
    Tensor m({3, 1, 3}, std::vector<double>{0.5, 0.1, 0.2, 0.3, 0.8, 0.2, 0.2, 0.1, 0.6});
    EXPECT_EQ(argmax_channels(m), (std::vector<int>{0, 1, 2}));
}

TEST(Baselines, MulticlassLossMatchesFormula) {
    Tensor p({2, 1, 2}, std::vector<double>{0.8, 0.3, 0.2, 0.7});
    std::vector<int> lab{0, 1};
    const double ce = -(std::log(0.8) + std::log(0.7)) / 2;
    const double d0 = 1 - (2 * 0.8 + 1) / (1.1 + 1 + 1), d1 = 1 - (2 * 0.7 + 1) / (0.9 + 1 + 1);
    EXPECT_NEAR(multiclass_loss(constant(p), lab, LossConfig{}).value()[0], ce + (d0 + d1) / 2, 1e-12);
}

TEST(Baselines, GradientChecks) {
    for (const char* kind : {"linear", "hybrid"}) {
        ModelConfig cfg = tiny_config().model;
        cfg.kind = kind;
        auto m = make_model(cfg, 16, 4, 4, names(2));
        Var img = constant(random_tensor({3, 16, 16}, 5));
        FeatureGrid f = random_features(4, 4, 16, 6);
        auto lab = stripes(16, 2);
        auto refs = class_refs(names(2));
        auto r = gradcheck([&] { return m->sample_loss(img, f, lab, refs, LossConfig{}); },
                           vitc::testing::vars_of(m->parameters()), 60);
        EXPECT_GE(r.sampled, 50) << kind;
        EXPECT_LT(r.max_rel_error, 1e-4) << kind;
    }
}

TEST(Baselines, PredictLabelmapInRange) {
    for (const char* kind : {"linear", "hybrid"}) {
        ModelConfig cfg = tiny_config().model;
        cfg.kind = kind;
        auto m = make_model(cfg, 16, 4, 4, names(3));
        auto refs = class_refs(names(3));
        auto lab = m->predict_labelmap(constant(random_tensor({3, 16, 16}, 7)), random_features(4, 4, 16, 8), refs);
        ASSERT_EQ(lab.size(), 256u);
        for (int l : lab) {
            EXPECT_GE(l, 0);
            EXPECT_LE(l, 3);
        }
    }
}
