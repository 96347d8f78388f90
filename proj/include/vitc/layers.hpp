#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vitc/autograd.hpp"

namespace vitc {

using Rng = std::mt19937_64;

struct NamedParameter {
    std::string name;
    Var var;
};

/// Ordered registry of trainable tensors, addressed by dotted names.
class ParameterStore {
public:
    /// Registers a new trainable tensor; names must be unique.
    Var add(const std::string& name, Tensor init);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }
    bool remove(const std::string& name);

    const std::vector<NamedParameter>& entries() const noexcept { return entries_; }
    std::size_t scalar_count() const;

private:
    std::vector<NamedParameter> entries_;
    std::map<std::string, std::size_t> index_;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

/// Fully connected layer on row-major activations [n x in].
struct Linear {
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
    Var operator()(const Var& x) const;

    Var weight;  // [in x out]
    Var bias;    // [out]
};

struct LayerNorm {
    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, int dim);
    Var operator()(const Var& x) const;

    Var gamma, beta;
};

struct Conv2d {
    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng);
    Var operator()(const Var& x) const;

    Var weight, bias;
    int stride = 1;
    int pad = 0;
};

struct ConvTranspose2x2 {
    ConvTranspose2x2() = default;
    ConvTranspose2x2(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
    Var operator()(const Var& x) const;

    Var weight, bias;
};

struct InstanceNorm {
    InstanceNorm() = default;
    InstanceNorm(ParameterStore& store, const std::string& name, int channels);
    Var operator()(const Var& x) const;

    Var gamma, beta;
};

/// Builds a constant (non-trainable) leaf.
inline Var constant(Tensor t) { return Var(std::move(t), false); }

}  // namespace vitc
