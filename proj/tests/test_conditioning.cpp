#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "vitc/conditioning.hpp"
#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

using namespace vitc;
using vitc::testing::gradcheck;
using vitc::testing::random_features;
using vitc::testing::random_tensor;

namespace {

struct Toy {
    ParameterStore store;
    Rng rng{3};
    ConditioningDecoder decoder;
    StructureTokenTable table;

    Toy(int in_dim, int dim, int gh, int gw, int blocks = 2) {
        ConditioningConfig cfg;
        cfg.blocks = blocks;
        cfg.heads = 2;
        cfg.mlp_ratio = 2;
        decoder = ConditioningDecoder(store, "cond", in_dim, dim, cfg, rng);
        table = StructureTokenTable(dim, gh, gw, 0.02, rng);
        for (const char* n : {"liver", "kidney", "spleen"}) table.add(n, 0.5, rng);
    }
};

void zero(Var v) { v.mutable_value().fill(0.0); }

void zero_linear(const Linear& l) {
    zero(l.weight);
    zero(l.bias);
}

Tensor row_layer_norm(const Tensor& x) {
    Tensor y = x;
    const int n = x.dim(0), d = x.dim(1);
    for (int r = 0; r < n; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < d; ++c) m += x.at(r, c);
        m /= d;
        for (int c = 0; c < d; ++c) v += (x.at(r, c) - m) * (x.at(r, c) - m);
        v /= d;
        for (int c = 0; c < d; ++c) y.at(r, c) = (x.at(r, c) - m) / std::sqrt(v + 1e-5);
    }
    return y;
}

}  // namespace

TEST(ReplicateToken, CopiesAndShapes) {
    Var t = constant(random_tensor({16}, 1));
    Tensor one = replicate_token(t, 1, 1, 16).value();
    ASSERT_EQ(one.shape(), (Shape{1, 16}));
    for (int c = 0; c < 16; ++c) EXPECT_EQ(one.at(0, c), t.value()[static_cast<std::size_t>(c)]);
    Tensor grid = replicate_token(t, 14, 14, 16).value();
    ASSERT_EQ(grid.shape(), (Shape{196, 16}));
    for (int r = 0; r < 196; ++r)
        for (int c = 0; c < 16; ++c) EXPECT_EQ(grid.at(r, c), t.value()[static_cast<std::size_t>(c)]);
    EXPECT_THROW(replicate_token(constant(random_tensor({8}, 2)), 2, 2, 16), ShapeError);
}

TEST(Project, ShapeAndWidthCheck) {
    Toy toy(24, 16, 3, 3);
    Var out = toy.decoder.project(constant(random_tensor({9, 24}, 4)));
    EXPECT_EQ(out.shape(), (Shape{9, 16}));
    EXPECT_THROW(toy.decoder.project(constant(random_tensor({9, 20}, 4))), ShapeError);
}

TEST(Project, ZeroFinalLayerGivesBias) {
    Toy toy(16, 16, 2, 2);
    zero(toy.decoder.mlp_out.weight);
    Var bias = toy.decoder.mlp_out.bias;
    bias.mutable_value() = random_tensor({16}, 5);
    Tensor out = toy.decoder.project(constant(Tensor({4, 16}, 0.0))).value();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 16; ++c) EXPECT_EQ(out.at(r, c), bias.value()[static_cast<std::size_t>(c)]);
}

TEST(Project, GradientMatchesFiniteDifferences) {
    Toy toy(8, 8, 2, 2);
    Var x = constant(random_tensor({4, 8}, 6));
    Tensor w = random_tensor({4, 8}, 7);
    auto r = gradcheck([&] { return ops::sum(ops::mul(toy.decoder.project(x), constant(w))); },
                       {toy.decoder.mlp_in.weight, toy.decoder.mlp_in.bias, toy.decoder.mlp_out.weight,
                        toy.decoder.mlp_out.bias},
                       60);
    EXPECT_GE(r.sampled, 50);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TwoWayBlock, ShapesRoundTrip) {
    Toy toy(16, 16, 3, 3);
    const TwoWayBlock& b = toy.decoder.block(0);
    Var s = constant(random_tensor({9, 16}, 8)), t = constant(random_tensor({1, 16}, 9));
    auto [x, tt] = b(s, t, constant(random_tensor({9, 16}, 10)), t);
    EXPECT_EQ(x.shape(), s.shape());
    EXPECT_EQ(tt.shape(), t.shape());
    EXPECT_THROW(b(s, t, constant(random_tensor({4, 16}, 10)), t), ShapeError);
}

TEST(TwoWayBlock, ZeroedSublayersReduceToNormalizedResidual) {
    // 2x2 grid, width 4: with every sublayer output zero, post-norm blocks give
    // state -> LN(state) and token -> LN(LN(token)).
    Toy toy(4, 4, 2, 2, 1);
    const TwoWayBlock& b = toy.decoder.block(0);
    for (const Linear* l : {&b.token_to_image.wo, &b.image_to_token.wo, &b.mlp_out}) zero_linear(*l);
    Tensor state = random_tensor({4, 4}, 11, -2, 3), token = random_tensor({1, 4}, 12, -1, 1);
    auto [x, t] = b(constant(state), constant(token), constant(random_tensor({4, 4}, 13)), constant(token));
    EXPECT_LT(x.value().max_abs_diff(row_layer_norm(state)), 1e-12);
    EXPECT_LT(t.value().max_abs_diff(row_layer_norm(row_layer_norm(token))), 1e-12);
}

TEST(TwoWayBlock, NonFiniteActivationDiagnosed) {
    Toy toy(4, 4, 2, 2, 1);
    Tensor state = random_tensor({4, 4}, 14);
    state[0] = std::nan("");
    Var t = constant(random_tensor({1, 4}, 15));
    EXPECT_THROW(toy.decoder.block(0)(constant(state), t, constant(Tensor({4, 4})), t), NumericalError);
}

TEST(Condition, TrajectoryLengthEqualsBlocks) {
    for (int n : {1, 2, 4}) {
        Toy toy(16, 16, 3, 3, n);
        auto traj = toy.decoder.condition(random_features(3, 3, 16, 16), toy.table, "liver");
        EXPECT_EQ(static_cast<int>(traj.size()), n);
        EXPECT_EQ(traj.token_states.size(), static_cast<std::size_t>(n));
        EXPECT_EQ(traj.token_name, "liver");
        for (const auto& s : traj.states) {
            EXPECT_EQ(s.shape(), (Shape{9, 16}));
            EXPECT_TRUE(s.value().all_finite());
        }
    }
}

TEST(Condition, UnknownTokenThrowsListingNames) {
    Toy toy(16, 16, 2, 2);
    try {
        toy.decoder.condition(random_features(2, 2, 16, 17), toy.table, "aorta");
        FAIL();
    } catch (const UnknownStructure& e) {
        EXPECT_NE(std::string(e.what()).find("kidney"), std::string::npos);
    }
}

TEST(Condition, UnrelatedEntriesDoNotMatter) {
    Toy toy(16, 16, 3, 3);
    FeatureGrid f = random_features(3, 3, 16, 18);
    auto before = toy.decoder.condition(f, toy.table, "liver");
    toy.table.remove("kidney");
    auto removed = toy.decoder.condition(f, toy.table, "liver");
    toy.table.add("aorta", 0.5, toy.rng);
    auto added = toy.decoder.condition(f, toy.table, "liver");
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_TRUE(before.states[i].value().bit_equal(removed.states[i].value()));
        EXPECT_TRUE(before.states[i].value().bit_equal(added.states[i].value()));
    }
}

TEST(Condition, DifferentTokensDiffer) {
    Toy toy(16, 16, 3, 3);
    FeatureGrid f = random_features(3, 3, 16, 19);
    auto a = toy.decoder.condition(f, toy.table, "liver");
    auto b = toy.decoder.condition(f, toy.table, "spleen");
    EXPECT_GT(a.states.back().value().max_abs_diff(b.states.back().value()), 0.0);
}

TEST(Condition, GradientReachesToken) {
    Toy toy(8, 8, 2, 2);
    FeatureGrid f = random_features(2, 2, 8, 20);
    Var token = toy.table.at("liver").vector;
    auto loss = [&] { return ops::mean(toy.decoder.condition(f, toy.table, "liver").states.back()); };
    auto r = gradcheck(loss, {token}, 8);
    EXPECT_LT(r.max_rel_error, 1e-5);
    EXPECT_GT(vitc::testing::squared_norm(token.grad()), 0.0);
}

TEST(Condition, PositionalGridResizedForOtherGrids) {
    Toy toy(8, 8, 2, 2);
    auto traj = toy.decoder.condition(random_features(3, 5, 8, 21), toy.table, "liver");
    EXPECT_EQ(traj.states.back().shape(), (Shape{15, 8}));
    EXPECT_EQ(traj.grid_h, 3);
    EXPECT_EQ(traj.grid_w, 5);
}

TEST(Condition, FullGradientCheck) {
    Toy toy(8, 8, 2, 2);
    FeatureGrid f = random_features(2, 2, 8, 22);
    Tensor w = random_tensor({4, 8}, 23);
    std::vector<Var> params;
    for (const auto& p : toy.store.entries()) params.push_back(p.var);
    params.push_back(toy.table.positional());
    params.push_back(toy.table.at("kidney").vector);
    auto r = gradcheck(
        [&] { return ops::sum(ops::mul(toy.decoder.condition(f, toy.table, "kidney").states.back(), constant(w))); },
        params, 200);
    EXPECT_GE(r.sampled, 50);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TokenTable, AddKeepsExistingAndRejectsDuplicates) {
    Toy toy(8, 8, 2, 2);
    std::vector<Tensor> old;
    for (const auto& e : toy.table.entries()) old.push_back(e.vector.value());
    EXPECT_EQ(toy.table.add("aorta", 0.02, toy.rng), 3u);
    ASSERT_EQ(toy.table.size(), 4u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(toy.table.entries()[i].vector.value().bit_equal(old[i]));
    EXPECT_THROW(toy.table.add("liver", 0.02, toy.rng), DuplicateStructure);
    EXPECT_THROW(toy.table.add_with_value("x", Tensor({3}), true), ShapeError);
    EXPECT_EQ(toy.table.names(), (std::vector<std::string>{"liver", "kidney", "spleen", "aorta"}));
}

TEST(KoLeo, HandCases) {
    std::vector<std::vector<double>> two{{0.0, 0.0}, {1.0, 0.0}};
    EXPECT_EQ(koleo(two), 0.0);
    std::vector<std::vector<double>> three{{0.0}, {1.0}, {3.0}};
    EXPECT_NEAR(koleo(three), -std::log(2.0) / 3.0, 1e-12);
    std::vector<std::vector<double>> dup{{1.0, 2.0}, {1.0, 2.0}};
    EXPECT_NEAR(koleo(dup), -std::log(kKoLeoEps), 1e-9);
    std::vector<std::vector<double>> one{{1.0}};
    EXPECT_THROW(koleo(one), InvalidInput);
}
