#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vitc/autograd.hpp"
#include "vitc/layers.hpp"

namespace vitc::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int sampled = 0;
};

/// Compares analytic gradients of a scalar `loss()` against central
/// differences for `samples` randomly chosen scalars across `params`.
/// Relative error is |a - n| / max(|a| + |n|, floor).
inline GradCheckResult gradcheck(const std::function<Var()>& loss, const std::vector<Var>& params, int samples,
                                 std::uint64_t seed = 7, double h = 1e-5, double floor = 1e-6) {
    for (Var p : params) p.zero_grad();
    Var out = loss();
    backward(out);
    std::vector<Tensor> analytic;
    for (const auto& p : params) analytic.push_back(p.grad());

    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].value().size(); ++j) pool.emplace_back(i, j);
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    if (static_cast<int>(pool.size()) > samples) pool.resize(static_cast<std::size_t>(samples));

    GradCheckResult result;
    NoGradGuard guard;
    for (auto [i, j] : pool) {
        Var p = params[i];
        double& x = p.mutable_value()[j];
        const double orig = x;
        x = orig + h;
        const double up = loss().value()[0];
        x = orig - h;
        const double down = loss().value()[0];
        x = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i][j];
        const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.sampled;
    }
    return result;
}

inline std::vector<Var> vars_of(const std::vector<NamedParameter>& params) {
    std::vector<Var> out;
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

}  // namespace vitc::testing
