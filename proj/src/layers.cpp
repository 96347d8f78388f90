#include "vitc/layers.hpp"

#include <cmath>

#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

namespace vitc {

Var ParameterStore::add(const std::string& name, Tensor init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Var v(std::move(init), true);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, v});
    return v;
}

const Var& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return entries_[it->second].var;
}

bool ParameterStore::remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) return false;
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].name, i);
    return true;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
    bias = store.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim) {
    gamma = store.add(name + ".gamma", Tensor({dim}, 1.0));
    beta = store.add(name + ".beta", Tensor({dim}, 0.0));
}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta); }

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride_, Rng& rng)
    : stride(stride_), pad(kernel / 2) {
    const double fan_in = static_cast<double>(in) * kernel * kernel;
    // He-normal, matching nnU-Net's leaky-ReLU initialisation.
    weight = store.add(name + ".weight", normal_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
    bias = store.add(name + ".bias", Tensor({out}, 0.0));
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

ConvTranspose2x2::ConvTranspose2x2(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
    const double fan_in = static_cast<double>(in) * 4.0;
    weight = store.add(name + ".weight", normal_tensor({in, out, 2, 2}, std::sqrt(2.0 / fan_in), rng));
    bias = store.add(name + ".bias", Tensor({out}, 0.0));
}

Var ConvTranspose2x2::operator()(const Var& x) const { return ops::conv_transpose2x2(x, weight, bias); }

InstanceNorm::InstanceNorm(ParameterStore& store, const std::string& name, int channels) {
    gamma = store.add(name + ".gamma", Tensor({channels}, 1.0));
    beta = store.add(name + ".beta", Tensor({channels}, 0.0));
}

Var InstanceNorm::operator()(const Var& x) const { return ops::instance_norm(x, gamma, beta); }

}  // namespace vitc
