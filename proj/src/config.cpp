#include "vitc/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "toml.hpp"
#include "vitc/errors.hpp"

namespace vitc {

namespace {

using nlohmann::json;

struct Field {
    std::string path;
    std::function<void(ExperimentConfig&, const json&)> set;
    std::function<json(const ExperimentConfig&)> get;
};

template <class T>
T convert(const json& v, const std::string& path) {
    auto fail = [&](const std::string& what) { return ConfigError(path + ": expected " + what + ", got " + v.dump()); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw fail("a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw fail("a string");
        return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw fail("a number");
        return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw fail("a non-negative integer");
        return v.get<std::uint64_t>();
    } else {
        if (!v.is_number_integer()) throw fail("an integer");
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw fail("a 32-bit integer");
        return static_cast<int>(x);
    }
}

template <class Ref>
Field field(std::string path, Ref ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<ExperimentConfig&>()))>;
    return Field{path,
                 [ref, path](ExperimentConfig& c, const json& v) { ref(c) = convert<T>(v, path); },
                 [ref](const ExperimentConfig& c) {
                     ExperimentConfig copy = c;
                     return json(ref(copy));
                 }};
}

#define VITC_FIELD(path, member) field(path, [](ExperimentConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        VITC_FIELD("model.kind", model.kind),
        VITC_FIELD("model.init_seed", model.init_seed),
        VITC_FIELD("model.backbone.kind", model.backbone.kind),
        VITC_FIELD("model.backbone.seed", model.backbone.seed),
        VITC_FIELD("model.backbone.patch", model.backbone.patch),
        VITC_FIELD("model.backbone.depth", model.backbone.depth),
        VITC_FIELD("model.backbone.dim", model.backbone.dim),
        VITC_FIELD("model.backbone.input_size", model.backbone.input_size),
        VITC_FIELD("model.backbone.window_lo", model.backbone.window_lo),
        VITC_FIELD("model.backbone.window_hi", model.backbone.window_hi),
        VITC_FIELD("model.conditioning.blocks", model.conditioning.blocks),
        VITC_FIELD("model.conditioning.heads", model.conditioning.heads),
        VITC_FIELD("model.conditioning.mlp_ratio", model.conditioning.mlp_ratio),
        VITC_FIELD("model.conditioning.token_init_std", model.conditioning.token_init_std),
        VITC_FIELD("model.conditioning.positional_init_std", model.conditioning.positional_init_std),
        VITC_FIELD("model.unet.levels", model.unet.levels),
        VITC_FIELD("model.unet.base_channels", model.unet.base_channels),
        VITC_FIELD("model.unet.max_channels", model.unet.max_channels),
        VITC_FIELD("model.unet.fusion_channels", model.unet.fusion_channels),
        VITC_FIELD("model.unet.in_channels", model.unet.in_channels),
        VITC_FIELD("model.unet.leaky_slope", model.unet.leaky_slope),
        VITC_FIELD("model.unet.reverse_fusion", model.unet.reverse_fusion),
        VITC_FIELD("train.lr", train.lr),
        VITC_FIELD("train.weight_decay", train.weight_decay),
        VITC_FIELD("train.batch_size", train.batch_size),
        VITC_FIELD("train.max_epochs", train.max_epochs),
        VITC_FIELD("train.iters_per_epoch", train.iters_per_epoch),
        VITC_FIELD("train.patience", train.patience),
        VITC_FIELD("train.min_rel_improvement", train.min_rel_improvement),
        VITC_FIELD("train.seed", train.seed),
        VITC_FIELD("train.grad_clip", train.grad_clip),
        VITC_FIELD("train.stage", train.stage),
        VITC_FIELD("train.loss.gamma", train.loss.gamma),
        VITC_FIELD("train.loss.w_focal", train.loss.w_focal),
        VITC_FIELD("train.loss.w_dice", train.loss.w_dice),
        VITC_FIELD("train.loss.dice_smooth", train.loss.dice_smooth),
        VITC_FIELD("data.volumes", data.volumes),
        VITC_FIELD("data.test_volumes", data.test_volumes),
        VITC_FIELD("data.classes", data.classes),
        VITC_FIELD("data.depth", data.depth),
        VITC_FIELD("data.height", data.height),
        VITC_FIELD("data.width", data.width),
        VITC_FIELD("data.seed", data.seed),
        VITC_FIELD("data.slice_axis", data.slice_axis),
    };
    return all;
}

#undef VITC_FIELD

const Field& find_field(const std::string& path) {
    for (const auto& f : fields())
        if (f.path == path) return f;
    throw ConfigError(path + ": unknown configuration key");
}

json toml_to_json(const toml::node& node, const std::string& path) {
    if (const auto* t = node.as_table()) {
        json out = json::object();
        for (const auto& [k, v] : *t) {
            const std::string key(k.str());
            out[key] = toml_to_json(v, path.empty() ? key : path + "." + key);
        }
        return out;
    }
    if (const auto* v = node.as_integer()) return json(v->get());
    if (const auto* v = node.as_floating_point()) return json(v->get());
    if (const auto* v = node.as_boolean()) return json(v->get());
    if (const auto* v = node.as_string()) return json(v->get());
    throw ConfigError(path + ": unsupported value type (arrays, dates and times are not configuration values)");
}

void apply_json(ExperimentConfig& cfg, const json& j, const std::string& prefix) {
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object())
            apply_json(cfg, value, path);
        else
            find_field(path).set(cfg, value);
    }
}

void require(bool ok, const std::string& path, const std::string& what) {
    if (!ok) throw ConfigError(path + ": " + what);
}

}  // namespace

void validate(const ExperimentConfig& c) {
    const auto& b = c.model.backbone;
    require(c.model.kind == "vitc_unet" || c.model.kind == "hybrid" || c.model.kind == "linear", "model.kind",
            "must be one of vitc_unet, hybrid, linear");
    require(b.kind == "synthetic" || b.kind == "dinov2_s" || b.kind == "sam2_s", "model.backbone.kind",
            "must be one of synthetic, dinov2_s, sam2_s");
    require(b.patch >= 1, "model.backbone.patch", "must be >= 1");
    require(b.depth >= 1, "model.backbone.depth", "must be >= 1");
    require(b.dim >= 8, "model.backbone.dim", "must be >= 8");
    require(b.input_size >= b.patch && b.input_size % b.patch == 0, "model.backbone.input_size",
            "must be a positive multiple of model.backbone.patch");

    const auto& k = c.model.conditioning;
    require(k.blocks >= 1, "model.conditioning.blocks", "must be >= 1");
    require(k.heads >= 1 && b.dim % k.heads == 0, "model.conditioning.heads", "must divide model.backbone.dim");
    require(k.mlp_ratio >= 1, "model.conditioning.mlp_ratio", "must be >= 1");
    require(k.token_init_std > 0, "model.conditioning.token_init_std", "must be > 0");
    require(k.positional_init_std >= 0, "model.conditioning.positional_init_std", "must be >= 0");

    const auto& u = c.model.unet;
    require(u.levels >= 2, "model.unet.levels", "must be >= 2");
    require(u.base_channels >= 1, "model.unet.base_channels", "must be >= 1");
    require(u.max_channels >= u.base_channels, "model.unet.max_channels", "must be >= model.unet.base_channels");
    require(u.fusion_channels >= 1, "model.unet.fusion_channels", "must be >= 1");
    require(u.in_channels == 3, "model.unet.in_channels", "must be 3 (prepared images have three channels)");
    require(u.leaky_slope >= 0 && u.leaky_slope < 1, "model.unet.leaky_slope", "must be in [0, 1)");
    require(b.input_size % (1 << (u.levels - 1)) == 0, "model.unet.levels",
            "model.backbone.input_size must be divisible by 2^(levels-1)");
    if (c.model.kind == "vitc_unet")
        require(k.blocks == u.levels - 1, "model.conditioning.blocks", "must equal model.unet.levels - 1");

    const auto& t = c.train;
    require(t.lr > 0, "train.lr", "must be > 0");
    require(t.weight_decay >= 0, "train.weight_decay", "must be >= 0");
    require(t.batch_size >= 1, "train.batch_size", "must be >= 1");
    require(t.max_epochs >= 1, "train.max_epochs", "must be >= 1");
    require(t.iters_per_epoch >= 1, "train.iters_per_epoch", "must be >= 1");
    require(t.patience >= 1, "train.patience", "must be >= 1");
    require(t.min_rel_improvement >= 0, "train.min_rel_improvement", "must be >= 0");
    require(t.stage == "joint" || t.stage == "stage1" || t.stage == "stage2", "train.stage",
            "must be one of joint, stage1, stage2");
    require(t.loss.gamma >= 0, "train.loss.gamma", "must be >= 0");
    require(t.loss.w_focal >= 0, "train.loss.w_focal", "must be >= 0");
    require(t.loss.w_dice >= 0, "train.loss.w_dice", "must be >= 0");
    require(t.loss.w_focal + t.loss.w_dice > 0, "train.loss", "w_focal and w_dice must not both be zero");
    require(t.loss.dice_smooth > 0, "train.loss.dice_smooth", "must be > 0");

    const auto& d = c.data;
    require(d.volumes >= 2, "data.volumes", "must be >= 2");
    require(d.test_volumes >= 0, "data.test_volumes", "must be >= 0");
    require(d.classes >= 1 && d.classes <= 8, "data.classes", "must be in [1, 8]");
    require(d.depth >= 1, "data.depth", "must be >= 1");
    require(d.height >= 16, "data.height", "must be >= 16");
    require(d.width >= 16, "data.width", "must be >= 16");
    require(d.slice_axis >= 0 && d.slice_axis <= 2, "data.slice_axis", "must be 0, 1 or 2");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    toml::table table;
    try {
        table = toml::parse(text, std::string_view(source));
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        throw ConfigError(msg.str());
    }
    ExperimentConfig cfg;
    apply_json(cfg, toml_to_json(table, ""), "");
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.string());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    const Field& f = find_field(key);
    json value;
    try {
        const toml::table t = toml::parse("v = " + raw);
        value = toml_to_json(*t.get("v"), key);
    } catch (const toml::parse_error&) {
        value = raw;  // bare words are strings
    }
    f.set(cfg, value);
}

json to_json(const ExperimentConfig& cfg) {
    json out = json::object();
    for (const auto& f : fields()) out[json::json_pointer("/" + [&] {
        std::string p = f.path;
        for (char& ch : p)
            if (ch == '.') ch = '/';
        return p;
    }())] = f.get(cfg);
    return out;
}

ExperimentConfig experiment_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    ExperimentConfig cfg;
    apply_json(cfg, j, "");
    validate(cfg);
    return cfg;
}

}  // namespace vitc
