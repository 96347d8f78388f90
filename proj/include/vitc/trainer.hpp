#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vitc/backbone.hpp"
#include "vitc/config.hpp"
#include "vitc/data.hpp"
#include "vitc/model.hpp"
#include "vitc/objectives.hpp"

namespace vitc {

// ---- prepared inputs -----------------------------------------------------------------

/// A slice after preprocessing, with its frozen features and labels at the
/// prepared resolution (dataset label values).
struct PreparedSlice {
    Tensor image;  // [3 x S x S]
    FeatureGrid features;
    std::vector<int> labels;
};

/// All slices of one volume plus the ground truth in slice-stack order.
struct PreparedVolume {
    std::string volume_id;
    int slice_h = 0;  // original slice resolution
    int slice_w = 0;
    std::vector<PreparedSlice> slices;
    LabelVolume ground_truth;
};

/// Slices along `axis`, preprocesses and extracts features once.
PreparedVolume prepare_volume(const LabeledVolume& vol, const Backbone& backbone, const BackboneConfig& cfg,
                              int axis);
std::vector<PreparedVolume> prepare_volumes(std::span<const LabeledVolume> vols, const Backbone& backbone,
                                            const BackboneConfig& cfg, int axis);

using VolumeRefs = std::vector<const PreparedVolume*>;
VolumeRefs refs(std::span<const PreparedVolume> vols);

/// The classes a model is trained on, as a subset of the dataset's classes.
/// Models see them relabelled 1..K in `names` order.
class ActiveClasses {
public:
    ActiveClasses() = default;
    /// Throws UnknownStructure if a name is not a dataset class, DuplicateStructure on repeats.
    ActiveClasses(const std::vector<std::string>& dataset_classes, const std::vector<std::string>& names);

    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<int>& dataset_labels() const noexcept { return dataset_labels_; }
    std::size_t size() const noexcept { return names_.size(); }
    std::vector<ClassRef> refs() const;
    /// Dataset labels -> model labels (inactive classes become background).
    std::vector<int> to_model(std::span<const int> labels) const;
    /// Model labels -> dataset labels.
    std::vector<int> to_dataset(std::span<const int> labels) const;

private:
    std::vector<std::string> names_;
    std::vector<int> dataset_labels_;
    std::vector<int> forward_;  // indexed by dataset label
};

// ---- optimisation --------------------------------------------------------------------

/// Decoupled-weight-decay Adam with per-parameter state keyed by name.
class AdamW {
public:
    struct Slot {
        std::int64_t step = 0;
        Tensor m, v;
    };

    AdamW() = default;
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::span<const NamedParameter> params);
    double lr() const noexcept { return lr_; }
    void set_lr(double lr) noexcept { lr_ = lr; }
    const std::map<std::string, Slot>& state() const noexcept { return state_; }
    std::map<std::string, Slot>& state() noexcept { return state_; }

private:
    double lr_ = 1e-4, wd_ = 1e-2, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::map<std::string, Slot> state_;
};

/// Scales every gradient so their global L2 norm is at most `max_norm`;
/// returns the norm before scaling. No-op when max_norm <= 0.
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);

/// One optimizer step over a batch: every active class is conditioned and
/// decoded for every image, losses are averaged over (image, class) pairs.
/// Throws NumericalError on a non-finite loss or gradient.
double training_step(const SegmentationModel& model, std::span<const PreparedSlice* const> batch,
                     const ActiveClasses& classes, const TrainConfig& cfg, AdamW& optimizer);

/// True iff history has more than `patience` entries and the best value in the
/// last `patience` entries is below (1 + min_rel) times the best before them.
bool early_stop(std::span<const double> history, int patience, double min_rel);

// ---- evaluation ----------------------------------------------------------------------

/// Slice-wise inference, resize back to the slice resolution and reassembly.
LabelVolume predict_volume(const SegmentationModel& model, const PreparedVolume& vol, const ActiveClasses& classes);

struct EvalReport {
    std::vector<std::string> class_names;       // evaluated classes
    std::vector<double> per_class_iou;          // mean over volumes
    std::vector<double> per_volume_miou;
    std::vector<std::string> volume_ids;
    double miou = 0.0;                          // mean over volumes
};

/// Per-volume foreground mIoU over the active classes, averaged over volumes.
EvalReport evaluate(const SegmentationModel& model, const VolumeRefs& vols,
                    const ActiveClasses& classes);
/// Restricts a report to a subset of its classes (mean over that subset).
EvalReport select_classes(const EvalReport& report, std::span<const std::string> names);

// ---- checkpoints ---------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_miou = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    ExperimentConfig config;
    std::vector<std::string> dataset_classes;
    std::vector<std::string> active_classes;  // token order for the conditioned model
    std::vector<std::pair<std::string, Tensor>> parameters;
    std::vector<EpochRecord> history;
    int epoch = 0;  // last completed epoch
    int best_epoch = 0;
    double best_val_miou = 0.0;
    std::string train_rng;  // serialized engine states
    std::string token_rng;
    std::map<std::string, AdamW::Slot> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on a malformed or foreign file, ConfigError on a version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model a checkpoint describes and loads its weights.
std::unique_ptr<SegmentationModel> restore_model(const Checkpoint& ckpt);
/// Copies the model's trainable tensors into `ckpt.parameters`.
void store_parameters(const SegmentationModel& model, Checkpoint& ckpt);

// ---- training runs -------------------------------------------------------------------

struct TrainResult {
    Checkpoint best;  // weights of the best validation epoch
    Checkpoint last;  // weights and optimizer state after the last epoch
    std::vector<EpochRecord> history;
    int epochs_run = 0;  // epochs executed by this call
    bool stopped_early = false;
    bool best_updated = false;  // false when a resumed run never beat the resumed best
    double seconds = 0.0;
    std::vector<double> epoch_seconds;
};

using EpochCallback = std::function<void(const EpochRecord&, double seconds)>;

/// Trains `active` classes on `train`, validating on `val` after every epoch.
/// With `resume`, continues from its weights, optimizer, rng and history.
TrainResult train(const ExperimentConfig& cfg, const std::vector<std::string>& dataset_classes,
                  const std::vector<std::string>& active, const VolumeRefs& train_set, const VolumeRefs& val_set,
                  const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

/// Loads a trained conditioned model, adds one token per new name, and
/// continues training on the union of classes with everything trainable.
TrainResult expand_labels(const Checkpoint& stage1, const std::vector<std::string>& new_classes,
                          const ExperimentConfig& stage2_cfg, const VolumeRefs& train_set,
                          const VolumeRefs& val_set, const EpochCallback& on_epoch = {});

/// Splits volumes into train/val with make_split(seed).
std::pair<VolumeRefs, VolumeRefs> split_volumes(std::span<const PreparedVolume> all, std::uint64_t seed);

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t n = 0;
};
Aggregate aggregate(std::span<const double> values);

}  // namespace vitc
