#pragma once

#include <atomic>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitc/backbone.hpp"
#include "vitc/config.hpp"
#include "vitc/layers.hpp"

namespace vitc {

/// Ordered registry of learnable structure tokens plus the shared learnable
/// positional grid. Background never has an entry.
class StructureTokenTable {
public:
    struct Entry {
        std::string name;
        Var vector;  // [D]
        bool trainable = true;
    };

    StructureTokenTable() = default;
    StructureTokenTable(int dim, int grid_h, int grid_w, double positional_std, Rng& rng);

    int dim() const noexcept { return dim_; }
    int grid_h() const noexcept { return grid_h_; }
    int grid_w() const noexcept { return grid_w_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::vector<std::string> names() const;

    bool contains(const std::string& name) const;
    /// Throws UnknownStructure listing the available names.
    const Entry& at(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    /// Appends a freshly initialised token; existing entries are untouched.
    std::size_t add(const std::string& name, double init_std, Rng& rng);
    /// Appends a token with a given value (checkpoint restore).
    std::size_t add_with_value(const std::string& name, Tensor value, bool trainable = true);
    bool remove(const std::string& name);

    /// Learnable positional grid, [Gh*Gw x D].
    const Var& positional() const noexcept { return positional_; }
    Var& positional() noexcept { return positional_; }

private:
    int dim_ = 0;
    int grid_h_ = 0;
    int grid_w_ = 0;
    std::vector<Entry> entries_;
    Var positional_;
};

/// Image latents after each two-way block, one per UNet fusion level.
struct ConditionedTrajectory {
    std::vector<Var> states;        // each [Gh*Gw x D]
    std::vector<Var> token_states;  // each [1 x D]
    std::string token_name;
    int grid_h = 0;
    int grid_w = 0;

    std::size_t size() const noexcept { return states.size(); }
};

/// Replicates a token to a [Gh*Gw x D] grid; `dim` is the decoder width.
Var replicate_token(const Var& token, int grid_h, int grid_w, int dim);

/// Cross-attention with learned projections.
struct CrossAttention {
    CrossAttention() = default;
    CrossAttention(ParameterStore& store, const std::string& name, int dim, int heads, Rng& rng);
    Var operator()(const Var& q, const Var& k, const Var& v) const;

    Linear wq, wk, wv, wo;
    int heads = 1;
};

/// One block: token->image attention, token MLP, image->token attention,
/// each wrapped as norm(x + sublayer(x)). Positional codes are added to
/// queries and keys only.
struct TwoWayBlock {
    TwoWayBlock() = default;
    TwoWayBlock(ParameterStore& store, const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng);

    /// state [G x D], token_state [1 x D], pos [G x D], token_pe [1 x D].
    std::pair<Var, Var> operator()(const Var& state, const Var& token_state, const Var& pos,
                                   const Var& token_pe) const;

    CrossAttention token_to_image;
    LayerNorm norm_token_attn;
    Linear mlp_in, mlp_out;
    LayerNorm norm_token_mlp;
    CrossAttention image_to_token;
    LayerNorm norm_image;
};

/// MLP projection of frozen features followed by N two-way blocks.
class ConditioningDecoder {
public:
    ConditioningDecoder() = default;
    ConditioningDecoder(ParameterStore& store, const std::string& name, int in_dim, int dim,
                        const ConditioningConfig& cfg, Rng& rng);

    int in_dim() const noexcept { return in_dim_; }
    int dim() const noexcept { return dim_; }
    int blocks() const noexcept { return static_cast<int>(blocks_.size()); }

    /// [G x in_dim] -> [G x D].
    Var project(const Var& features) const;
    const TwoWayBlock& block(int i) const { return blocks_.at(static_cast<std::size_t>(i)); }
    Var fit_positional(const Var& positional, int table_h, int table_w, int grid_h, int grid_w) const;

    ConditionedTrajectory condition(const FeatureGrid& features, const StructureTokenTable& table,
                                    const std::string& token_name) const;
    /// Same, from a feature matrix that may itself carry gradients.
    ConditionedTrajectory condition(const Var& features, int grid_h, int grid_w, const StructureTokenTable& table,
                                    const std::string& token_name) const;

    /// Number of condition() calls made through this decoder (and its copies).
    std::uint64_t passes() const noexcept { return passes_->load(); }

    Linear mlp_in, mlp_out;

private:
    std::shared_ptr<std::atomic<std::uint64_t>> passes_ = std::make_shared<std::atomic<std::uint64_t>>(0);
    int in_dim_ = 0;
    int dim_ = 0;
    std::vector<TwoWayBlock> blocks_;
};

inline constexpr double kKoLeoEps = 1e-12;

/// -(1/M) sum_i log(min_{j != i} ||x_i - x_j||), distances clamped at 1e-12.
/// Diagnostic only; never part of a training objective.
double koleo(std::span<const std::vector<double>> embeddings);

}  // namespace vitc
