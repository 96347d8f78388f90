#include "vitc/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vitc/errors.hpp"
#include "vitc/ops.hpp"

namespace vitc {

// ---- token table ---------------------------------------------------------------

StructureTokenTable::StructureTokenTable(int dim, int grid_h, int grid_w, double positional_std, Rng& rng)
    : dim_(dim), grid_h_(grid_h), grid_w_(grid_w) {
    positional_ = Var(normal_tensor({grid_h * grid_w, dim}, positional_std, rng), true);
}

std::vector<std::string> StructureTokenTable::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

bool StructureTokenTable::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t StructureTokenTable::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    std::string available;
    for (const auto& e : entries_) available += (available.empty() ? "" : ", ") + e.name;
    throw UnknownStructure("unknown structure '" + name + "'; available: [" + available + "]");
}

const StructureTokenTable::Entry& StructureTokenTable::at(const std::string& name) const {
    return entries_[index_of(name)];
}

std::size_t StructureTokenTable::add(const std::string& name, double init_std, Rng& rng) {
    return add_with_value(name, normal_tensor({dim_}, init_std, rng));
}

std::size_t StructureTokenTable::add_with_value(const std::string& name, Tensor value, bool trainable) {
    if (name.empty()) throw InvalidInput("structure names must be non-empty");
    if (contains(name)) throw DuplicateStructure("structure '" + name + "' already has a token");
    if (value.size() != static_cast<std::size_t>(dim_))
        throw ShapeError("token '" + name + "' has " + std::to_string(value.size()) + " entries, table width is " +
                         std::to_string(dim_));
    entries_.push_back({name, Var(value.reshaped({dim_}), trainable), trainable});
    return entries_.size() - 1;
}

bool StructureTokenTable::remove(const std::string& name) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
    if (it == entries_.end()) return false;
    entries_.erase(it);
    return true;
}

// ---- building blocks ---------------------------------------------------------------

Var replicate_token(const Var& token, int grid_h, int grid_w, int dim) {
    if (token.value().size() != static_cast<std::size_t>(dim))
        throw ShapeError("replicate_token: token of length " + std::to_string(token.value().size()) +
                         " does not match decoder width " + std::to_string(dim));
    return ops::broadcast_rows(token, grid_h * grid_w);
}

CrossAttention::CrossAttention(ParameterStore& store, const std::string& name, int dim, int heads_, Rng& rng)
    : wq(store, name + ".q", dim, dim, rng),
      wk(store, name + ".k", dim, dim, rng),
      wv(store, name + ".v", dim, dim, rng),
      wo(store, name + ".out", dim, dim, rng),
      heads(heads_) {}

Var CrossAttention::operator()(const Var& q, const Var& k, const Var& v) const {
    return wo(ops::attention(wq(q), wk(k), wv(v), heads));
}

TwoWayBlock::TwoWayBlock(ParameterStore& store, const std::string& name, int dim, int heads, int mlp_ratio,
                         Rng& rng)
    : token_to_image(store, name + ".token_to_image", dim, heads, rng),
      norm_token_attn(store, name + ".norm1", dim),
      mlp_in(store, name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
      mlp_out(store, name + ".mlp.fc2", dim * mlp_ratio, dim, rng),
      norm_token_mlp(store, name + ".norm2", dim),
      image_to_token(store, name + ".image_to_token", dim, heads, rng),
      norm_image(store, name + ".norm3", dim) {}

std::pair<Var, Var> TwoWayBlock::operator()(const Var& state, const Var& token_state, const Var& pos,
                                            const Var& token_pe) const {
    if (state.shape() != pos.shape())
        throw ShapeError("two_way_block: state " + shape_str(state.shape()) + " vs positional " +
                         shape_str(pos.shape()));
    if (token_state.shape() != token_pe.shape() || token_state.dim(1) != state.dim(1))
        throw ShapeError("two_way_block: token " + shape_str(token_state.shape()) + " incompatible with state " +
                         shape_str(state.shape()));
    const Var keys = ops::add(state, pos);

    Var t = norm_token_attn(ops::add(token_state, token_to_image(ops::add(token_state, token_pe), keys, state)));
    t = norm_token_mlp(ops::add(t, mlp_out(ops::gelu(mlp_in(t)))));
    Var x = norm_image(ops::add(state, image_to_token(keys, ops::add(t, token_pe), t)));

    if (!x.value().all_finite() || !t.value().all_finite())
        throw NumericalError("two_way_block: non-finite activation");
    return {x, t};
}

// ---- decoder -------------------------------------------------------------------------

ConditioningDecoder::ConditioningDecoder(ParameterStore& store, const std::string& name, int in_dim, int dim,
                                         const ConditioningConfig& cfg, Rng& rng)
    : mlp_in(store, name + ".proj.fc1", in_dim, dim, rng),
      mlp_out(store, name + ".proj.fc2", dim, dim, rng),
      in_dim_(in_dim),
      dim_(dim) {
    if (cfg.blocks < 1) throw ConfigError("conditioning.blocks must be >= 1");
    if (cfg.heads < 1 || dim % cfg.heads != 0)
        throw ConfigError("conditioning.heads must divide the latent width " + std::to_string(dim));
    for (int i = 0; i < cfg.blocks; ++i)
        blocks_.emplace_back(store, name + ".block" + std::to_string(i), dim, cfg.heads, cfg.mlp_ratio, rng);
}

Var ConditioningDecoder::project(const Var& features) const {
    if (features.value().rank() != 2 || features.dim(1) != in_dim_)
        throw ShapeError("project: feature width " + shape_str(features.shape()) + " does not match decoder input " +
                         std::to_string(in_dim_));
    return mlp_out(ops::gelu(mlp_in(features)));
}

Var ConditioningDecoder::fit_positional(const Var& positional, int table_h, int table_w, int grid_h,
                                        int grid_w) const {
    if (table_h == grid_h && table_w == grid_w) return positional;
    Var chw = ops::reshape(ops::transpose(positional), {dim_, table_h, table_w});
    Var resized = ops::resize_bilinear(chw, grid_h, grid_w);
    return ops::transpose(ops::reshape(resized, {dim_, grid_h * grid_w}));
}

ConditionedTrajectory ConditioningDecoder::condition(const FeatureGrid& features, const StructureTokenTable& table,
                                                     const std::string& token_name) const {
    return condition(constant(features.tokens()), features.grid_h(), features.grid_w(), table, token_name);
}

ConditionedTrajectory ConditioningDecoder::condition(const Var& features, int grid_h, int grid_w,
                                                     const StructureTokenTable& table,
                                                     const std::string& token_name) const {
    const auto& entry = table.at(token_name);
    passes_->fetch_add(1);
    if (table.dim() != dim_)
        throw ShapeError("condition: token table width " + std::to_string(table.dim()) + " vs decoder " +
                         std::to_string(dim_));
    const Var token = entry.vector;
    Var state = ops::add(project(features), replicate_token(token, grid_h, grid_w, dim_));
    const Var token_pe = ops::reshape(token, {1, dim_});
    Var token_state = token_pe;
    const Var pos = fit_positional(table.positional(), table.grid_h(), table.grid_w(), grid_h, grid_w);

    ConditionedTrajectory traj;
    traj.token_name = token_name;
    traj.grid_h = grid_h;
    traj.grid_w = grid_w;
    for (const auto& block : blocks_) {
        std::tie(state, token_state) = block(state, token_state, pos, token_pe);
        traj.states.push_back(state);
        traj.token_states.push_back(token_state);
    }
    return traj;
}

// ---- diagnostics ---------------------------------------------------------------------

double koleo(std::span<const std::vector<double>> embeddings) {
    const std::size_t m = embeddings.size();
    if (m < 2) throw InvalidInput("koleo: need at least two embeddings");
    const std::size_t d = embeddings[0].size();
    for (const auto& e : embeddings)
        if (e.size() != d) throw ShapeError("koleo: embeddings have differing widths");
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = embeddings[i][k] - embeddings[j][k];
                s += diff * diff;
            }
            best = std::min(best, std::sqrt(s));
        }
        total += std::log(std::max(best, kKoLeoEps));
    }
    return -total / static_cast<double>(m);
}

}  // namespace vitc
