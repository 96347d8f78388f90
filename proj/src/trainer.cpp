#include "vitc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vitc/errors.hpp"
#include "vitc/ops.hpp"
#include "vitc/pixel_decoder.hpp"

namespace vitc {

using nlohmann::json;

// ---- prepared inputs -----------------------------------------------------------------

PreparedVolume prepare_volume(const LabeledVolume& vol, const Backbone& backbone, const BackboneConfig& cfg,
                              int axis) {
    const std::vector<SliceSample> samples = slice_volume(vol, axis);
    PreparedVolume out;
    out.volume_id = vol.volume_id;
    out.slice_h = samples.front().labels.height;
    out.slice_w = samples.front().labels.width;
    out.ground_truth = LabelVolume{static_cast<int>(samples.size()), out.slice_h, out.slice_w, {}};
    out.ground_truth.labels.reserve(samples.size() * out.ground_truth.plane_size());
    NoGradGuard no_grad;
    for (const SliceSample& s : samples) {
        PreparedSlice p;
        PreparedImage img = preprocess(s.image, cfg.input_size, backbone.patch_size(), cfg.window_lo, cfg.window_hi);
        p.features = backbone.extract(img);
        p.image = std::move(img.channels);
        const int size = cfg.input_size;
        p.labels = size == out.slice_h && size == out.slice_w
                       ? s.labels.labels
                       : ops::resize_nearest(s.labels.labels, out.slice_h, out.slice_w, size, size);
        out.ground_truth.labels.insert(out.ground_truth.labels.end(), s.labels.labels.begin(), s.labels.labels.end());
        out.slices.push_back(std::move(p));
    }
    return out;
}

std::vector<PreparedVolume> prepare_volumes(std::span<const LabeledVolume> vols, const Backbone& backbone,
                                            const BackboneConfig& cfg, int axis) {
    std::vector<PreparedVolume> out;
    out.reserve(vols.size());
    for (const auto& v : vols) out.push_back(prepare_volume(v, backbone, cfg, axis));
    return out;
}

VolumeRefs refs(std::span<const PreparedVolume> vols) {
    VolumeRefs out;
    for (const auto& v : vols) out.push_back(&v);
    return out;
}

ActiveClasses::ActiveClasses(const std::vector<std::string>& dataset_classes, const std::vector<std::string>& names)
    : names_(names), forward_(dataset_classes.size() + 1, 0) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!seen.insert(names[i]).second) throw DuplicateStructure("class '" + names[i] + "' listed twice");
        const auto it = std::find(dataset_classes.begin(), dataset_classes.end(), names[i]);
        if (it == dataset_classes.end()) {
            std::string avail;
            for (const auto& n : dataset_classes) avail += (avail.empty() ? "" : ", ") + n;
            throw UnknownStructure("unknown structure '" + names[i] + "'; available: " + avail);
        }
        const int label = static_cast<int>(it - dataset_classes.begin()) + 1;
        dataset_labels_.push_back(label);
        forward_[static_cast<std::size_t>(label)] = static_cast<int>(i) + 1;
    }
}

std::vector<ClassRef> ActiveClasses::refs() const { return class_refs(names_); }

std::vector<int> ActiveClasses::to_model(std::span<const int> labels) const {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || l >= static_cast<int>(forward_.size())) throw InvalidInput("label " + std::to_string(l) + " out of range");
        out[i] = forward_[static_cast<std::size_t>(l)];
    }
    return out;
}

std::vector<int> ActiveClasses::to_dataset(std::span<const int> labels) const {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || l > static_cast<int>(dataset_labels_.size()))
            throw InvalidInput("model label " + std::to_string(l) + " out of range");
        out[i] = l == 0 ? 0 : dataset_labels_[static_cast<std::size_t>(l - 1)];
    }
    return out;
}

// ---- optimisation --------------------------------------------------------------------

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::span<const NamedParameter> params) {
    for (const NamedParameter& p : params) {
        if (!p.var.has_grad()) continue;
        Var v = p.var;
        Tensor& w = v.mutable_value();
        const Tensor& g = v.node()->grad;
        Slot& s = state_[p.name];
        if (s.m.shape() != w.shape()) {
            s.m = Tensor(w.shape());
            s.v = Tensor(w.shape());
            s.step = 0;
        }
        ++s.step;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.step));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.step));
        const double decay = 1.0 - lr_ * wd_;
        for (std::size_t i = 0; i < w.size(); ++i) {
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            w[i] = w[i] * decay - lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        if (p.var.has_grad())
            for (double g : p.var.node()->grad.values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / (norm + 1e-12);
        for (const auto& p : params)
            if (p.var.has_grad()) p.var.node()->grad *= s;
    }
    return norm;
}

double training_step(const SegmentationModel& model, std::span<const PreparedSlice* const> batch,
                     const ActiveClasses& classes, const TrainConfig& cfg, AdamW& optimizer) {
    if (batch.empty()) throw InvalidInput("training_step: empty batch");
    if (classes.size() == 0) throw InvalidInput("training_step: no classes to train");
    std::vector<NamedParameter> params = model.parameters();
    for (auto& p : params) p.var.zero_grad();
    const std::vector<ClassRef> refs = classes.refs();
    const double inv = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const PreparedSlice& s = *batch[i];
        const std::vector<int> labels = classes.to_model(s.labels);
        const Var loss = model.sample_loss(constant(s.image), s.features, labels, refs, cfg.loss);
        const double value = loss.value()[0];
        if (!std::isfinite(value))
            throw NumericalError("training_step: non-finite loss on batch item " + std::to_string(i));
        backward(loss, inv);
        total += value;
    }
    for (const auto& p : params)
        if (p.var.has_grad() && !p.var.node()->grad.all_finite())
            throw NumericalError("training_step: non-finite gradient for parameter '" + p.name + "'");
    clip_grad_norm(params, cfg.grad_clip);
    optimizer.step(params);
    return total * inv;
}

bool early_stop(std::span<const double> history, int patience, double min_rel) {
    if (patience < 1) throw ConfigError("early_stop: patience must be >= 1");
    if (static_cast<int>(history.size()) <= patience) return false;
    const auto split = history.end() - patience;
    const double before = *std::max_element(history.begin(), split);
    const double recent = *std::max_element(split, history.end());
    return recent < (1.0 + min_rel) * before;
}

// ---- evaluation ----------------------------------------------------------------------

LabelVolume predict_volume(const SegmentationModel& model, const PreparedVolume& vol, const ActiveClasses& classes) {
    NoGradGuard no_grad;
    const std::vector<ClassRef> refs = classes.refs();
    std::vector<LabelSlice> slices;
    slices.reserve(vol.slices.size());
    for (const PreparedSlice& s : vol.slices) {
        const std::vector<int> pred = model.predict_labelmap(constant(s.image), s.features, refs);
        slices.push_back(LabelSlice{s.image.dim(1), s.image.dim(2), classes.to_dataset(pred)});
    }
    return reassemble_volume(slices, static_cast<int>(vol.slices.size()), vol.slice_h, vol.slice_w);
}

EvalReport evaluate(const SegmentationModel& model, const VolumeRefs& vols, const ActiveClasses& classes) {
    if (vols.empty()) throw InvalidInput("evaluate: no volumes");
    EvalReport r;
    r.class_names = classes.names();
    r.per_class_iou.assign(classes.size(), 0.0);
    int num_dataset_classes = 0;
    for (int l : classes.dataset_labels()) num_dataset_classes = std::max(num_dataset_classes, l);
    for (const PreparedVolume* v : vols) {
        const LabelVolume pred = predict_volume(model, *v, classes);
        // Ground-truth labels beyond the active set count as background.
        LabelVolume gt = v->ground_truth;
        gt.labels = classes.to_dataset(classes.to_model(gt.labels));
        const MiouResult m = volume_miou(pred, gt, std::max(1, num_dataset_classes), classes.dataset_labels());
        for (std::size_t c = 0; c < classes.size(); ++c)
            r.per_class_iou[c] += m.per_class[static_cast<std::size_t>(classes.dataset_labels()[c] - 1)];
        r.per_volume_miou.push_back(m.mean);
        r.volume_ids.push_back(v->volume_id);
    }
    const double n = static_cast<double>(vols.size());
    for (double& x : r.per_class_iou) x /= n;
    r.miou = std::accumulate(r.per_volume_miou.begin(), r.per_volume_miou.end(), 0.0) / n;
    return r;
}

EvalReport select_classes(const EvalReport& report, std::span<const std::string> names) {
    if (names.empty()) throw InvalidInput("select_classes: no classes selected");
    EvalReport out;
    out.volume_ids = report.volume_ids;
    double s = 0.0;
    for (const auto& n : names) {
        const auto it = std::find(report.class_names.begin(), report.class_names.end(), n);
        if (it == report.class_names.end()) throw UnknownStructure("class '" + n + "' is not in the report");
        out.class_names.push_back(n);
        out.per_class_iou.push_back(report.per_class_iou[static_cast<std::size_t>(it - report.class_names.begin())]);
        s += out.per_class_iou.back();
    }
    out.miou = s / static_cast<double>(names.size());
    return out;
}

// ---- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'I', 'T', 'C', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint truncated reading " + what);
    return v;
}

struct BlobWriter {
    std::vector<const Tensor*> tensors;
    std::uint64_t offset = 0;

    json add(const Tensor& t) {
        json j = {{"shape", t.shape()}, {"offset", offset}};
        tensors.push_back(&t);
        offset += t.size();
        return j;
    }
};

Tensor read_tensor(const json& j, const std::vector<double>& blob) {
    const Shape shape = j.at("shape").get<Shape>();
    const auto offset = j.at("offset").get<std::uint64_t>();
    const std::size_t n = element_count(shape);
    if (offset + n > blob.size()) throw DataError("checkpoint tensor extends past the data block");
    return Tensor(shape, std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                             blob.begin() + static_cast<std::ptrdiff_t>(offset + n)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    BlobWriter blob;
    json h;
    h["config"] = to_json(c.config);
    h["dataset_classes"] = c.dataset_classes;
    h["active_classes"] = c.active_classes;
    h["epoch"] = c.epoch;
    h["best_epoch"] = c.best_epoch;
    h["best_val_miou"] = c.best_val_miou;
    h["train_rng"] = c.train_rng;
    h["token_rng"] = c.token_rng;
    h["history"] = json::array();
    for (const auto& r : c.history) h["history"].push_back({r.epoch, r.train_loss, r.val_miou});
    h["parameters"] = json::array();
    for (const auto& [name, t] : c.parameters) {
        json e = blob.add(t);
        e["name"] = name;
        h["parameters"].push_back(e);
    }
    h["optimizer"] = json::array();
    for (const auto& [name, slot] : c.optimizer)
        h["optimizer"].push_back({{"name", name}, {"step", slot.step}, {"m", blob.add(slot.m)}, {"v", blob.add(slot.v)}});
    const std::string header = h.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint64_t>(out, blob.offset);
    for (const Tensor* t : blob.tensors)
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("'" + path.string() + "' is not a checkpoint");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != Checkpoint::kVersion)
        throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
    const auto header_len = get<std::uint64_t>(in, "header length");
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw DataError("checkpoint header truncated");
    const auto count = get<std::uint64_t>(in, "data length");
    std::vector<double> blob(count);
    if (!in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(count * sizeof(double))))
        throw DataError("checkpoint data truncated");

    Checkpoint c;
    try {
        const json h = json::parse(header);
        c.config = experiment_from_json(h.at("config"));
        c.dataset_classes = h.at("dataset_classes").get<std::vector<std::string>>();
        c.active_classes = h.at("active_classes").get<std::vector<std::string>>();
        c.epoch = h.at("epoch").get<int>();
        c.best_epoch = h.at("best_epoch").get<int>();
        c.best_val_miou = h.at("best_val_miou").get<double>();
        c.train_rng = h.at("train_rng").get<std::string>();
        c.token_rng = h.at("token_rng").get<std::string>();
        for (const auto& r : h.at("history"))
            c.history.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>()});
        for (const auto& p : h.at("parameters")) c.parameters.emplace_back(p.at("name").get<std::string>(), read_tensor(p, blob));
        for (const auto& o : h.at("optimizer")) {
            AdamW::Slot s;
            s.step = o.at("step").get<std::int64_t>();
            s.m = read_tensor(o.at("m"), blob);
            s.v = read_tensor(o.at("v"), blob);
            c.optimizer.emplace(o.at("name").get<std::string>(), std::move(s));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header in '" + path.string() + "': " + e.what());
    }
    return c;
}

namespace {

std::pair<int, int> feature_grid(const ModelConfig& cfg) {
    const int g = cfg.backbone.input_size / cfg.backbone.patch;
    return {g, g};
}

void load_parameters(const SegmentationModel& model, const Checkpoint& c) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : c.parameters) by_name[name] = &t;
    for (NamedParameter p : model.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + p.name + "'");
        if (it->second->shape() != p.var.shape())
            throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                            ", the model expects " + shape_str(p.var.shape()));
        p.var.mutable_value() = *it->second;
    }
}

}  // namespace

std::unique_ptr<SegmentationModel> restore_model(const Checkpoint& c) {
    const auto [gh, gw] = feature_grid(c.config.model);
    auto model = make_model(c.config.model, c.config.model.backbone.dim, gh, gw, c.active_classes);
    load_parameters(*model, c);
    if (auto* vitc = dynamic_cast<ViTCUNet*>(model.get()); vitc && !c.token_rng.empty()) {
        std::istringstream in(c.token_rng);
        in >> vitc->token_rng();
    }
    return model;
}

void store_parameters(const SegmentationModel& model, Checkpoint& c) {
    c.parameters.clear();
    for (const auto& p : model.parameters()) c.parameters.emplace_back(p.name, p.var.value());
    if (const auto* vitc = dynamic_cast<const ViTCUNet*>(&model)) {
        std::ostringstream out;
        out << vitc->token_rng();
        c.token_rng = out.str();
    }
}

// ---- training runs -------------------------------------------------------------------

namespace {

struct Session {
    ExperimentConfig cfg;
    std::vector<std::string> dataset_classes;
    ActiveClasses classes;
    std::unique_ptr<SegmentationModel> model;
    AdamW optimizer;
    Rng rng;
    std::vector<EpochRecord> history;
    int epoch = 0;
    Checkpoint best;
    bool has_best = false;
};

std::string rng_state(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

Checkpoint snapshot(const Session& s) {
    Checkpoint c;
    c.config = s.cfg;
    c.dataset_classes = s.dataset_classes;
    c.active_classes = s.classes.names();
    store_parameters(*s.model, c);
    c.history = s.history;
    c.epoch = s.epoch;
    c.train_rng = rng_state(s.rng);
    c.optimizer = s.optimizer.state();
    return c;
}

TrainResult run(Session& s, const VolumeRefs& train_set, const VolumeRefs& val_set, const EpochCallback& on_epoch) {
    using clock = std::chrono::steady_clock;
    if (train_set.empty()) throw InvalidInput("train: no training volumes");
    if (val_set.empty()) throw InvalidInput("train: no validation volumes");
    std::vector<const PreparedSlice*> pool;
    for (const PreparedVolume* v : train_set)
        for (const PreparedSlice& sl : v->slices) pool.push_back(&sl);
    if (pool.empty()) throw InvalidInput("train: training volumes hold no slices");

    const TrainConfig& tc = s.cfg.train;
    TrainResult result;
    const auto t0 = clock::now();
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<const PreparedSlice*> batch(static_cast<std::size_t>(tc.batch_size));
    std::vector<double> metric;
    for (const auto& r : s.history) metric.push_back(r.val_miou);

    const int last_epoch = s.epoch + tc.max_epochs;
    while (s.epoch < last_epoch) {
        const auto e0 = clock::now();
        double loss_sum = 0.0;
        for (int it = 0; it < tc.iters_per_epoch; ++it) {
            for (auto& b : batch) b = pool[pick(s.rng)];
            loss_sum += training_step(*s.model, batch, s.classes, tc, s.optimizer);
        }
        ++s.epoch;
        const EvalReport val = evaluate(*s.model, val_set, s.classes);
        const EpochRecord rec{s.epoch, loss_sum / tc.iters_per_epoch, val.miou};
        s.history.push_back(rec);
        metric.push_back(rec.val_miou);
        ++result.epochs_run;
        if (!s.has_best || rec.val_miou > s.best.best_val_miou) {
            s.best = snapshot(s);
            s.best.best_epoch = rec.epoch;
            s.best.best_val_miou = rec.val_miou;
            s.has_best = true;
            result.best_updated = true;
        }
        const double secs = std::chrono::duration<double>(clock::now() - e0).count();
        result.epoch_seconds.push_back(secs);
        if (on_epoch) on_epoch(rec, secs);
        if (early_stop(metric, tc.patience, tc.min_rel_improvement)) {
            result.stopped_early = true;
            break;
        }
    }
    result.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.history = s.history;
    result.last = snapshot(s);
    result.last.best_epoch = s.best.best_epoch;
    result.last.best_val_miou = s.best.best_val_miou;
    s.best.history = s.history;
    result.best = s.best;
    return result;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const std::vector<std::string>& dataset_classes,
                  const std::vector<std::string>& active, const VolumeRefs& train_set, const VolumeRefs& val_set,
                  const Checkpoint* resume, const EpochCallback& on_epoch) {
    validate(cfg);
    Session s;
    s.cfg = cfg;
    s.dataset_classes = dataset_classes;
    s.classes = ActiveClasses(dataset_classes, active);
    s.optimizer = AdamW(cfg.train.lr, cfg.train.weight_decay);
    if (resume) {
        if (resume->active_classes != active)
            throw ConfigError("resume: checkpoint classes differ from the requested classes");
        s.cfg.model = resume->config.model;
        s.model = restore_model(*resume);
        s.optimizer.state() = resume->optimizer;
        std::istringstream in(resume->train_rng);
        in >> s.rng;
        s.history = resume->history;
        s.epoch = resume->epoch;
        if (!s.history.empty()) {
            s.best = *resume;
            s.has_best = true;
        }
    } else {
        const auto [gh, gw] = feature_grid(cfg.model);
        s.model = make_model(cfg.model, cfg.model.backbone.dim, gh, gw, active);
        s.rng = Rng(cfg.train.seed);
    }
    return run(s, train_set, val_set, on_epoch);
}

TrainResult expand_labels(const Checkpoint& stage1, const std::vector<std::string>& new_classes,
                          const ExperimentConfig& stage2_cfg, const VolumeRefs& train_set, const VolumeRefs& val_set,
                          const EpochCallback& on_epoch) {
    validate(stage2_cfg);
    if (stage1.config.model.kind != "vitc_unet")
        throw ConfigError("expand: only token-conditioned models can add classes without rebuilding the head");
    if (new_classes.empty()) throw UsageError("expand: no new classes given");
    Session s;
    s.cfg = stage2_cfg;
    s.cfg.model = stage1.config.model;
    s.cfg.train.stage = "stage2";
    s.dataset_classes = stage1.dataset_classes;
    s.model = restore_model(stage1);
    auto& model = dynamic_cast<ViTCUNet&>(*s.model);
    std::vector<std::string> all = stage1.active_classes;
    for (const auto& name : new_classes) {
        if (model.tokens().contains(name))
            throw DuplicateStructure("structure '" + name + "' already has a token");
        model.add_structure_token(name);
        all.push_back(name);
    }
    s.classes = ActiveClasses(s.dataset_classes, all);
    s.optimizer = AdamW(stage2_cfg.train.lr, stage2_cfg.train.weight_decay);
    s.optimizer.state() = stage1.optimizer;
    s.rng = Rng(stage2_cfg.train.seed);
    return run(s, train_set, val_set, on_epoch);
}

std::pair<VolumeRefs, VolumeRefs> split_volumes(std::span<const PreparedVolume> all, std::uint64_t seed) {
    std::vector<std::string> ids;
    std::map<std::string, const PreparedVolume*> by_id;
    for (const auto& v : all) {
        ids.push_back(v.volume_id);
        if (!by_id.emplace(v.volume_id, &v).second) throw DataError("duplicate volume id '" + v.volume_id + "'");
    }
    const DatasetSplit split = make_split(ids, seed);
    // Keep dataset order within each side so results do not depend on the shuffle order.
    std::set<std::string> train_ids(split.train_ids.begin(), split.train_ids.end());
    std::pair<VolumeRefs, VolumeRefs> out;
    for (const auto& v : all) (train_ids.contains(v.volume_id) ? out.first : out.second).push_back(&v);
    return out;
}

Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    a.n = values.size();
    if (values.empty()) return a;
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
    if (a.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
    }
    return a;
}

}  // namespace vitc
