#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vitc/backbone.hpp"
#include "vitc/config.hpp"
#include "vitc/data.hpp"
#include "vitc/errors.hpp"
#include "vitc/nifti.hpp"
#include "vitc/ops.hpp"
#include "vitc/overlay.hpp"
#include "vitc/pixel_decoder.hpp"
#include "vitc/trainer.hpp"

#ifndef VITC_GIT_HASH
#define VITC_GIT_HASH "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vitc;

namespace {

// ---- logging -------------------------------------------------------------------------

int verbosity() {
    static const int level = [] {
        const char* v = std::getenv("VITC_VERBOSITY");
        return v ? std::atoi(v) : 1;
    }();
    return level;
}

void info(const std::string& msg) {
    if (verbosity() >= 1) std::cerr << msg << '\n';
}

void debug(const std::string& msg) {
    if (verbosity() >= 2) std::cerr << msg << '\n';
}

// ---- helpers -------------------------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

/// Records how a command was invoked; written next to its artifacts.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    json seeds = json::array();
    json timings = json::object();
    json outputs = json::array();
    std::string started = utc_now();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const fs::path& dir) {
        timings["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(dir / "run_manifest.json", {{"tool", "vitc"},
                                               {"command", command},
                                               {"args", args},
                                               {"seeds", seeds},
                                               {"git_hash", VITC_GIT_HASH},
                                               {"started_utc", started},
                                               {"timings", timings},
                                               {"outputs", outputs}});
    }
};

json report_json(const EvalReport& r) {
    json per_class = json::object();
    for (std::size_t c = 0; c < r.class_names.size(); ++c) per_class[r.class_names[c]] = r.per_class_iou[c];
    return {{"per_class_iou", per_class}, {"miou", r.miou}};
}

json metrics_json(const std::string& dataset, std::uint64_t seed, const EvalReport& r, int epochs_run) {
    json j = report_json(r);
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["epochs_run"] = epochs_run;
    return j;
}

void write_history(const fs::path& dir, const std::vector<EpochRecord>& history) {
    std::ofstream csv(dir / "history.csv");
    if (!csv) throw DataError("cannot write history in '" + dir.string() + "'");
    csv << "epoch,train_loss,val_miou\n" << std::setprecision(17);
    json j = json::array();
    for (const auto& r : history) {
        csv << r.epoch << ',' << r.train_loss << ',' << r.val_miou << '\n';
        j.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_miou", r.val_miou}});
    }
    write_json(dir / "history.json", j);
}

ExperimentConfig load_experiment(const std::string& config_path, const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    validate(cfg);
    return cfg;
}

EpochCallback epoch_logger(const std::string& tag) {
    return [tag](const EpochRecord& r, double secs) {
        std::ostringstream msg;
        msg << tag << " epoch " << r.epoch << "  loss " << std::fixed << std::setprecision(4) << r.train_loss
            << "  val mIoU " << r.val_miou << "  (" << std::setprecision(1) << secs << " s)";
        info(msg.str());
    };
}

std::vector<PreparedVolume> prepare(const std::vector<LabeledVolume>& vols, const Backbone& backbone,
                                    const ExperimentConfig& cfg) {
    return prepare_volumes(vols, backbone, cfg.model.backbone, cfg.data.slice_axis);
}

// ---- generate ------------------------------------------------------------------------

struct GenerateArgs {
    std::string out;
    int volumes = 40;
    int test_volumes = 10;
    int classes = 3;
    std::uint64_t seed = 0;
    int depth = 12, height = 96, width = 96;
    bool force = false;
};

int cmd_generate(const GenerateArgs& a, RunManifest& manifest) {
    if (a.classes < 1 || a.classes > 8) throw UsageError("--classes must be between 1 and 8");
    if (a.volumes < 2) throw UsageError("--volumes must be at least 2");
    if (a.test_volumes < 0) throw UsageError("--test-volumes must be non-negative");
    const fs::path out(a.out);
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!a.force) throw UsageError("output directory '" + a.out + "' is not empty (use --force to overwrite)");
        for (const char* sub : {"images", "labels"}) fs::remove_all(out / sub);
        fs::remove(out / "manifest.json");
        fs::remove(out / "run_manifest.json");
    }
    prepare_out_dir(out);
    const Dataset ds =
        generate_synthetic_dataset(a.seed, a.volumes, a.test_volumes, a.classes, {a.depth, a.height, a.width});
    write_dataset(out, ds);
    manifest.seeds.push_back(a.seed);
    manifest.outputs.push_back("manifest.json");
    info("wrote " + std::to_string(ds.trainval.size()) + " train/val and " + std::to_string(ds.test.size()) +
         " test volumes to " + a.out);
    return 0;
}

// ---- train ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out, seeds, classes, resume;
    std::vector<std::string> overrides;
};

std::vector<std::string> stage_classes(const ExperimentConfig& cfg, const std::vector<std::string>& all,
                                       const std::string& requested) {
    if (!requested.empty()) return split_list(requested);
    if (cfg.train.stage == "stage1")
        return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>((all.size() + 1) / 2)};
    if (cfg.train.stage == "stage2") throw UsageError("stage2 training runs through the 'expand' command");
    return all;
}

int cmd_train(const TrainArgs& a, RunManifest& manifest) {
    ExperimentConfig cfg = load_experiment(a.config, a.overrides);
    std::vector<std::uint64_t> seeds;
    if (a.seeds.empty()) {
        seeds.push_back(cfg.train.seed);
    } else {
        for (const auto& s : split_list(a.seeds)) {
            try {
                seeds.push_back(std::stoull(s));
            } catch (const std::exception&) {
                throw UsageError("--seeds: '" + s + "' is not a non-negative integer");
            }
        }
    }
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        if (seeds.size() != 1) throw UsageError("--resume takes a single seed");
        resume = load_checkpoint(a.resume);
        cfg.model = resume->config.model;
    }

    const auto t_load = std::chrono::steady_clock::now();
    const Dataset ds = load_dataset(a.data);
    const auto backbone = make_backbone(cfg.model.backbone);
    const std::vector<PreparedVolume> trainval = prepare(ds.trainval, *backbone, cfg);
    const std::vector<PreparedVolume> test = prepare(ds.test, *backbone, cfg);
    manifest.timings["prepare_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_load).count();
    const std::vector<std::string> active = stage_classes(cfg, ds.class_names, a.classes);

    const fs::path out(a.out);
    prepare_out_dir(out);
    json per_seed = json::array();
    std::vector<double> mious;
    std::map<std::string, std::vector<double>> per_class;
    for (const std::uint64_t seed : seeds) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.train.seed = seed;
        if (!resume) run_cfg.model.init_seed = seed;
        const auto [train_set, val_set] = split_volumes(trainval, seed);
        info("seed " + std::to_string(seed) + ": " + std::to_string(train_set.size()) + " train / " +
             std::to_string(val_set.size()) + " val volumes, classes " + std::to_string(active.size()));
        const TrainResult result = train(run_cfg, ds.class_names, active, train_set, val_set,
                                         resume ? &*resume : nullptr, epoch_logger("seed " + std::to_string(seed)));
        const fs::path dir = out / ("seed_" + std::to_string(seed));
        prepare_out_dir(dir);
        if (result.best_updated || !fs::exists(dir / "best.ckpt")) save_checkpoint(dir / "best.ckpt", result.best);
        save_checkpoint(dir / "last.ckpt", result.last);
        write_history(dir, result.history);

        const auto model = restore_model(result.best);
        const ActiveClasses classes(ds.class_names, active);
        const bool has_test = !test.empty();
        const EvalReport report = evaluate(*model, has_test ? refs(test) : val_set, classes);
        json m = metrics_json(has_test ? "test" : "val", seed, report, static_cast<int>(result.history.size()));
        m["best_epoch"] = result.best.best_epoch;
        m["best_val_miou"] = result.best.best_val_miou;
        m["stopped_early"] = result.stopped_early;
        m["train_seconds"] = result.seconds;
        write_json(dir / "metrics.json", m);
        per_seed.push_back(m);
        mious.push_back(report.miou);
        for (std::size_t c = 0; c < report.class_names.size(); ++c)
            per_class[report.class_names[c]].push_back(report.per_class_iou[c]);
        manifest.seeds.push_back(seed);
        manifest.timings["seed_" + std::to_string(seed) + "_train_seconds"] = result.seconds;
        manifest.outputs.push_back(dir.filename().string());
        std::ostringstream msg;
        msg << "seed " << seed << ": " << (has_test ? "test" : "val") << " mIoU " << std::fixed
            << std::setprecision(4) << report.miou << " after " << result.history.size() << " epochs";
        info(msg.str());
    }
    const Aggregate agg = aggregate(mious);
    json pc = json::object();
    for (const auto& [name, values] : per_class) {
        const Aggregate a2 = aggregate(values);
        pc[name] = {{"mean", a2.mean}, {"std", a2.std}};
    }
    write_json(out / "aggregate.json", {{"model", cfg.model.kind},
                                        {"seeds", manifest.seeds},
                                        {"miou", {{"mean", agg.mean}, {"std", agg.std}, {"n", agg.n}}},
                                        {"per_class_iou", pc},
                                        {"runs", per_seed}});
    manifest.outputs.push_back("aggregate.json");
    std::ostringstream msg;
    msg << "mIoU " << std::fixed << std::setprecision(4) << agg.mean << " +/- " << agg.std << " over " << agg.n
        << " seed(s)";
    info(msg.str());
    return 0;
}

// ---- expand --------------------------------------------------------------------------

struct ExpandArgs {
    std::string checkpoint, new_classes, data, out, config;
    std::vector<std::string> overrides;
};

int cmd_expand(const ExpandArgs& a, RunManifest& manifest) {
    const Checkpoint stage1 = load_checkpoint(a.checkpoint);
    ExperimentConfig cfg = a.config.empty() ? stage1.config : load_config(a.config);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    cfg.model = stage1.config.model;
    validate(cfg);
    const std::vector<std::string> added = split_list(a.new_classes);
    if (added.empty()) throw UsageError("--new-classes needs at least one name");

    const Dataset ds = load_dataset(a.data);
    if (ds.class_names != stage1.dataset_classes)
        throw DataError("dataset classes differ from those the checkpoint was trained with");
    const auto backbone = make_backbone(cfg.model.backbone);
    const std::vector<PreparedVolume> trainval = prepare(ds.trainval, *backbone, cfg);
    const std::vector<PreparedVolume> test = prepare(ds.test, *backbone, cfg);
    const auto [train_set, val_set] = split_volumes(trainval, cfg.train.seed);

    const TrainResult result = expand_labels(stage1, added, cfg, train_set, val_set, epoch_logger("stage2"));
    const fs::path out(a.out);
    prepare_out_dir(out);
    save_checkpoint(out / "best.ckpt", result.best);
    save_checkpoint(out / "last.ckpt", result.last);
    write_history(out, result.history);

    const auto model = restore_model(result.best);
    const ActiveClasses classes(ds.class_names, result.best.active_classes);
    const bool has_test = !test.empty();
    const EvalReport all = evaluate(*model, has_test ? refs(test) : val_set, classes);
    const EvalReport old_part = select_classes(all, stage1.active_classes);
    const EvalReport new_part = select_classes(all, added);
    write_json(out / "expand_report.json",
               {{"dataset", has_test ? "test" : "val"},
                {"seed", cfg.train.seed},
                {"stage1_classes", report_json(old_part)},
                {"new_classes", report_json(new_part)},
                {"all_classes", report_json(all)},
                {"stage1_epochs", static_cast<int>(stage1.history.size())},
                {"stage2_epochs", result.epochs_run},
                {"stage2_seconds", result.seconds}});
    manifest.seeds.push_back(cfg.train.seed);
    manifest.timings["stage2_seconds"] = result.seconds;
    for (const char* f : {"best.ckpt", "last.ckpt", "history.csv", "history.json", "expand_report.json"})
        manifest.outputs.push_back(f);
    std::ostringstream msg;
    msg << "stage-1 classes mIoU " << std::fixed << std::setprecision(4) << old_part.miou << ", new classes mIoU "
        << new_part.miou << " after " << result.epochs_run << " stage-2 epochs";
    info(msg.str());
    return 0;
}

// ---- eval ----------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, split = "test", predictions, out;
};

int cmd_eval(const EvalArgs& a, RunManifest& manifest) {
    if (a.split != "test" && a.split != "trainval" && a.split != "val")
        throw UsageError("--split must be test, trainval or val");
    if (a.checkpoint.empty() == a.predictions.empty())
        throw UsageError("give exactly one of --checkpoint or --predictions");
    const DatasetManifest dm = read_manifest(a.data);
    const Dataset ds = load_dataset(a.data);
    std::vector<LabeledVolume> vols = a.split == "test" ? ds.test : ds.trainval;
    json result;

    if (!a.predictions.empty()) {
        // Score label volumes on disk (named <volume_id>.nii.gz) against the ground truth.
        if (a.split == "val") throw UsageError("--split val needs a checkpoint (the split depends on its seed)");
        const int k = static_cast<int>(ds.class_names.size());
        std::vector<double> per_class(static_cast<std::size_t>(k), 0.0), mious;
        for (const auto& v : vols) {
            const nifti::Volume p = nifti::read(fs::path(a.predictions) / (v.volume_id + ".nii.gz"));
            LabelVolume pred{p.nz, p.ny, p.nx, {}};
            for (double x : p.data) pred.labels.push_back(static_cast<int>(std::lround(x)));
            const MiouResult m = volume_miou(pred, v.label_volume(), k);
            for (int c = 0; c < k; ++c) per_class[static_cast<std::size_t>(c)] += m.per_class[static_cast<std::size_t>(c)];
            mious.push_back(m.mean);
        }
        if (vols.empty()) throw DataError("split '" + a.split + "' has no volumes");
        EvalReport r;
        r.class_names = ds.class_names;
        for (double& x : per_class) x /= static_cast<double>(vols.size());
        r.per_class_iou = per_class;
        r.miou = aggregate(mious).mean;
        result = metrics_json(a.split, 0, r, 0);
    } else {
        const Checkpoint ckpt = load_checkpoint(a.checkpoint);
        if (ds.class_names != ckpt.dataset_classes)
            throw DataError("dataset classes differ from those the checkpoint was trained with");
        const auto backbone = make_backbone(ckpt.config.model.backbone);
        const std::vector<PreparedVolume> prepared = prepare(vols, *backbone, ckpt.config);
        VolumeRefs selected = refs(prepared);
        if (a.split == "val") selected = split_volumes(prepared, ckpt.config.train.seed).second;
        if (selected.empty()) throw DataError("split '" + a.split + "' has no volumes");
        const auto model = restore_model(ckpt);
        const EvalReport r = evaluate(*model, selected, ActiveClasses(ds.class_names, ckpt.active_classes));
        result = metrics_json(a.split, ckpt.config.train.seed, r, static_cast<int>(ckpt.history.size()));
        manifest.seeds.push_back(ckpt.config.train.seed);
    }
    std::cout << result.dump(2) << '\n';
    if (!a.out.empty()) {
        prepare_out_dir(a.out);
        write_json(fs::path(a.out) / "metrics.json", result);
        manifest.outputs.push_back("metrics.json");
    }
    return 0;
}

// ---- predict -------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, volume, structures, out;
    bool no_overlays = false;
};

int cmd_predict(const PredictArgs& a, RunManifest& manifest) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const auto model = restore_model(ckpt);
    const std::vector<std::string> names = a.structures.empty() ? ckpt.active_classes : split_list(a.structures);
    // Checks every requested name before any work; unknown names list the vocabulary.
    const ActiveClasses requested(ckpt.active_classes, names);
    const ActiveClasses trained(ckpt.dataset_classes, ckpt.active_classes);

    const nifti::Volume img = nifti::read(a.volume);
    LabeledVolume vol;
    vol.depth = img.nz;
    vol.height = img.ny;
    vol.width = img.nx;
    vol.intensities = img.data;
    vol.labels.assign(img.data.size(), 0);
    vol.class_names = ckpt.dataset_classes;
    vol.volume_id = fs::path(a.volume).filename().string();
    const auto backbone = make_backbone(ckpt.config.model.backbone);
    const int axis = ckpt.config.data.slice_axis;
    const PreparedVolume pv = prepare_volume(vol, *backbone, ckpt.config.model.backbone, axis);
    const std::vector<SliceSample> raw = slice_volume(vol, axis);

    // Per requested structure: a binary mask per slice at the source resolution.
    const std::vector<ClassRef> all_refs = trained.refs();
    std::vector<ClassRef> refs_wanted;
    for (const auto& n : names)
        for (const auto& r : all_refs)
            if (r.name == n) refs_wanted.push_back(r);
    const std::size_t plane = static_cast<std::size_t>(pv.slice_h) * pv.slice_w;
    std::vector<std::vector<int>> masks(names.size(), std::vector<int>(plane * pv.slices.size(), 0));
    std::vector<int> labelmap(plane * pv.slices.size(), 0);
    const auto* vitc = dynamic_cast<const ViTCUNet*>(model.get());
    NoGradGuard no_grad;
    for (std::size_t z = 0; z < pv.slices.size(); ++z) {
        const PreparedSlice& s = pv.slices[z];
        const int size = s.image.dim(1);
        std::vector<int> lm_model;
        std::vector<std::vector<int>> slice_masks;
        if (vitc) {
            const Var image = constant(s.image);
            const UNet::Encoded enc = vitc->unet().encode(image);
            std::vector<std::vector<double>> probs;
            std::vector<int> labels;
            for (const ClassRef& r : refs_wanted) {
                const Var logits = vitc->segment(enc, vitc->condition(s.features, r.name));
                slice_masks.push_back(predict_mask(logits.value().values()));
                probs.push_back(ops::sigmoid(logits).value().to_vector());
                labels.push_back(r.label);
            }
            lm_model = combine_class_probabilities(probs, labels, static_cast<std::size_t>(size) * size);
        } else {
            const std::vector<int> full = model->predict_labelmap(constant(s.image), s.features, all_refs);
            lm_model.assign(full.size(), 0);
            for (const ClassRef& r : refs_wanted) {
                std::vector<int> m(full.size());
                for (std::size_t i = 0; i < full.size(); ++i) {
                    m[i] = full[i] == r.label ? 1 : 0;
                    if (m[i]) lm_model[i] = r.label;
                }
                slice_masks.push_back(std::move(m));
            }
        }
        auto place = [&](const std::vector<int>& src, std::vector<int>& dst) {
            const std::vector<int> r = size == pv.slice_h && size == pv.slice_w
                                           ? src
                                           : ops::resize_nearest(src, size, size, pv.slice_h, pv.slice_w);
            std::copy(r.begin(), r.end(), dst.begin() + static_cast<std::ptrdiff_t>(z * plane));
        };
        place(trained.to_dataset(lm_model), labelmap);
        for (std::size_t k = 0; k < names.size(); ++k) place(slice_masks[k], masks[k]);
    }

    // Slices were taken along `axis`; write volumes back in the source layout.
    auto to_volume = [&](const std::vector<int>& stack) {
        nifti::Volume v{img.nx, img.ny, img.nz, img.spacing, std::vector<double>(stack.size())};
        for (std::size_t k = 0; k < pv.slices.size(); ++k)
            for (int a1 = 0; a1 < pv.slice_h; ++a1)
                for (int b = 0; b < pv.slice_w; ++b) {
                    int z = 0, y = 0, x = 0;
                    if (axis == 0) z = static_cast<int>(k), y = a1, x = b;
                    if (axis == 1) z = a1, y = static_cast<int>(k), x = b;
                    if (axis == 2) z = a1, y = b, x = static_cast<int>(k);
                    v.data[(static_cast<std::size_t>(z) * img.ny + y) * img.nx + x] =
                        stack[k * plane + static_cast<std::size_t>(a1) * pv.slice_w + b];
                }
        return v;
    };
    const fs::path out(a.out);
    prepare_out_dir(out);
    for (std::size_t k = 0; k < names.size(); ++k) {
        const std::string file = "mask_" + names[k] + ".nii.gz";
        nifti::write(out / file, to_volume(masks[k]), nifti::DataType::uint8);
        manifest.outputs.push_back(file);
    }
    nifti::write(out / "labelmap.nii.gz", to_volume(labelmap), nifti::DataType::int16);
    manifest.outputs.push_back("labelmap.nii.gz");
    json legend = json::object();
    for (const auto& r : all_refs)
        if (std::find(names.begin(), names.end(), r.name) != names.end())
            legend[std::to_string(trained.dataset_labels()[static_cast<std::size_t>(r.label - 1)])] = r.name;
    write_json(out / "labelmap.json", legend);
    manifest.outputs.push_back("labelmap.json");

    if (!a.no_overlays) {
        fs::create_directories(out / "overlays");
        for (std::size_t z = 0; z < raw.size(); ++z) {
            char file[32];
            std::snprintf(file, sizeof(file), "slice_%03zu.png", z);
            write_overlay_png(out / "overlays" / file, raw[z].image.pixels,
                              std::span<const int>(labelmap.data() + z * plane, plane));
        }
        manifest.outputs.push_back("overlays");
    }
    info("wrote " + std::to_string(names.size()) + " mask(s), a labelmap and " +
         (a.no_overlays ? std::string("no") : std::to_string(raw.size())) + " overlay(s) to " + a.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViTC-UNet: token-conditioned segmentation on frozen ViT features"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("vitc ") + VITC_GIT_HASH);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic dataset (NIfTI volumes + manifest.json)");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--volumes", gen.volumes, "Train/val volumes")->capture_default_str();
    g->add_option("--test-volumes", gen.test_volumes, "Held-out test volumes")->capture_default_str();
    g->add_option("--classes", gen.classes, "Foreground classes (1-8)")->capture_default_str();
    g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    g->add_option("--depth", gen.depth, "Slices per volume")->capture_default_str();
    g->add_option("--height", gen.height, "Slice height")->capture_default_str();
    g->add_option("--width", gen.width, "Slice width")->capture_default_str();
    g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one model per seed and report mean +/- std");
    t->add_option("--config", tr.config, "TOML config (defaults when omitted)");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--seeds", tr.seeds, "Comma-separated seeds (default: train.seed)");
    t->add_option("--classes", tr.classes, "Comma-separated classes to train (default: by train.stage)");
    t->add_option("--resume", tr.resume, "Continue from a last.ckpt");
    t->add_option("--set", tr.overrides, "Config override key=value (repeatable)");

    ExpandArgs ex;
    auto* e = app.add_subcommand("expand", "Add structure tokens to a trained model and continue training");
    e->add_option("--checkpoint", ex.checkpoint, "Stage-1 checkpoint")->required();
    e->add_option("--new-classes", ex.new_classes, "Comma-separated new class names")->required();
    e->add_option("--data", ex.data, "Dataset directory")->required();
    e->add_option("--out", ex.out, "Output directory")->required();
    e->add_option("--config", ex.config, "TOML config for stage 2 (default: the checkpoint's)");
    e->add_option("--set", ex.overrides, "Config override key=value (repeatable)");

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "Per-class IoU and mIoU on reassembled volumes");
    v->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
    v->add_option("--predictions", ev.predictions, "Directory of <volume_id>.nii.gz label volumes to score");
    v->add_option("--data", ev.data, "Dataset directory")->required();
    v->add_option("--split", ev.split, "test, trainval or val")->capture_default_str();
    v->add_option("--out", ev.out, "Also write metrics.json here");

    PredictArgs pr;
    auto* p = app.add_subcommand("predict", "Masks, labelmap and overlays for one volume");
    p->add_option("--checkpoint", pr.checkpoint, "Checkpoint")->required();
    p->add_option("--volume", pr.volume, "Input .nii/.nii.gz volume")->required();
    p->add_option("--structures", pr.structures, "Comma-separated structure names (default: all trained)");
    p->add_option("--out", pr.out, "Output directory")->required();
    p->add_flag("--no-overlays", pr.no_overlays, "Skip PNG overlays");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 2;
    }

    RunManifest manifest;
    for (int i = 1; i < argc; ++i) manifest.args.emplace_back(argv[i]);
    std::string out_dir;
    try {
        int rc = 0;
        if (g->parsed()) {
            manifest.command = "generate";
            out_dir = gen.out;
            rc = cmd_generate(gen, manifest);
        } else if (t->parsed()) {
            manifest.command = "train";
            out_dir = tr.out;
            rc = cmd_train(tr, manifest);
        } else if (e->parsed()) {
            manifest.command = "expand";
            out_dir = ex.out;
            rc = cmd_expand(ex, manifest);
        } else if (v->parsed()) {
            manifest.command = "eval";
            out_dir = ev.out;
            rc = cmd_eval(ev, manifest);
        } else if (p->parsed()) {
            manifest.command = "predict";
            out_dir = pr.out;
            rc = cmd_predict(pr, manifest);
        }
        if (!out_dir.empty()) manifest.write(out_dir);
        debug("done");
        return rc;
    } catch (const vitc::Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        if (dynamic_cast<const NumericalError*>(&err) && !out_dir.empty() && fs::exists(out_dir)) {
            write_json(fs::path(out_dir) / "diagnostics.json",
                       {{"error", err.what()}, {"command", manifest.command}, {"args", manifest.args}});
        }
        return err.exit_code();
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
}
