#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "vitc/autograd.hpp"
#include "vitc/errors.hpp"
#include "vitc/ops.hpp"
#include "vitc/tensor.hpp"

using namespace vitc;

TEST(Tensor, ShapeAndFill) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
    t.fill(-2.0);
    EXPECT_DOUBLE_EQ(t[4], -2.0);
    EXPECT_EQ(element_count({2, 3, 4}), 24u);
    EXPECT_EQ(shape_str({2, 3}), "[2x3]");
}

TEST(Tensor, StorageIsCacheLineAligned) {
    for (int n : {1, 3, 7, 64, 1001}) {
        const Tensor a({n}, 1.0);
        const Tensor b = a.reshaped({1, n});
        const Tensor c({n}, std::vector<double>(static_cast<std::size_t>(n), 2.0));
        for (const Tensor* t : {&a, &b, &c})
            EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t->data()) % kBufferAlignment, 0u) << n;
    }
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
    Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    Tensor r = t.reshaped({3, 2});
    EXPECT_DOUBLE_EQ(r.at(2, 1), 5.0);
    EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, ConstructorRejectsSizeMismatch) {
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, FiniteAndBitEqual) {
    Tensor a({3}, std::vector<double>{1, 2, 3});
    Tensor b = a;
    EXPECT_TRUE(a.bit_equal(b));
    b[1] = std::nextafter(2.0, 3.0);
    EXPECT_FALSE(a.bit_equal(b));
    EXPECT_GT(a.max_abs_diff(b), 0.0);
    b[0] = std::nan("");
    EXPECT_FALSE(b.all_finite());
    EXPECT_TRUE(a.all_finite());
}

TEST(Autograd, ChainRuleOnProduct) {
    Var x(Tensor({1}, 3.0), true);
    Var y = ops::mul(x, x);  // x^2
    Var z = ops::scale(ops::add(y, x), 2.0);  // 2(x^2 + x)
    backward(z);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 * (2.0 * 3.0 + 1.0));
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    Var x(Tensor({2}, std::vector<double>{1.0, -2.0}), true);
    Var s = ops::sum(ops::add(x, x));
    backward(s);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(Autograd, SeedScalesGradient) {
    Var x(Tensor({1}, 2.0), true);
    backward(ops::mul(x, x), 0.25);
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autograd, ConstantsGetNoGradient) {
    Var c(Tensor({1}, 2.0), false);
    Var x(Tensor({1}, 1.0), true);
    backward(ops::mul(c, x));
    EXPECT_FALSE(c.has_grad());
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Autograd, NoGradGuardStopsRecording) {
    Var x(Tensor({1}, 1.0), true);
    {
        NoGradGuard guard;
        EXPECT_FALSE(grad_enabled());
        Var y = ops::mul(x, x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(grad_enabled());
    EXPECT_TRUE(ops::mul(x, x).requires_grad());
}

TEST(Autograd, ZeroGradClears) {
    Var x(Tensor({1}, 1.0), true);
    backward(ops::mul(x, x));
    EXPECT_TRUE(x.has_grad());
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}
