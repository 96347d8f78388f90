#include "vitc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "vitc/errors.hpp"
#include "vitc/nifti.hpp"
#include "vitc/ops.hpp"

namespace vitc {

namespace {

constexpr double kPi = std::numbers::pi;

const std::vector<std::string> kShapeNames = {"sphere", "box", "tube", "shell", "disk", "torus", "cone", "plate"};
// Mean intensity per class label (index 0: body tissue).
constexpr double kClassMean[] = {0.20, 1.00, 0.60, 1.35, 0.80, 0.45, 1.15, 0.70, 1.55};

struct Placement {
    double cy, cx;    // in-plane centre
    double cell;      // cell side length
    double cz;        // axial centre
    double angle;     // in-plane rotation
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Whether voxel (z, y, x) belongs to structure `label` at `p`.
/// Shape-specific parameters are drawn once per volume into `params`.
bool inside(int label, const Placement& p, const std::vector<double>& params, double z, double y, double x,
            int depth) {
    const double dy = y - p.cy, dx = x - p.cx;
    const double ry = std::cos(p.angle) * dy + std::sin(p.angle) * dx;
    const double rx = -std::sin(p.angle) * dy + std::cos(p.angle) * dx;
    const double zrel = (z - p.cz) / std::max(1.0, 0.5 * depth);  // roughly [-1, 1]
    switch (label) {
        case 1: {  // sphere (ellipsoid flattened along z)
            const double r = params[0];
            return (dy * dy + dx * dx) / (r * r) + zrel * zrel / (params[1] * params[1]) <= 1.0;
        }
        case 2:  // rotated box
            return std::abs(ry) <= params[0] && std::abs(rx) <= params[1] && std::abs(zrel) <= params[2];
        case 3: {  // thin tube meandering along z
            const double t = z / std::max(1, depth - 1);
            const double ty = p.cy + params[1] * std::sin(2.0 * kPi * (params[3] * t + params[4]));
            const double tx = p.cx + params[2] * std::cos(2.0 * kPi * (params[3] * t + params[5]));
            return (y - ty) * (y - ty) + (x - tx) * (x - tx) <= params[0] * params[0];
        }
        case 4: {  // thin shell
            const double r = std::sqrt(dy * dy + dx * dx + std::pow(zrel * params[0] / params[2], 2));
            return r <= params[0] && r >= params[0] - params[1];
        }
        case 5:  // disk stack
            return dy * dy + dx * dx <= params[0] * params[0] && std::abs(zrel) <= params[1];
        case 6: {  // torus
            const double rho = std::sqrt(dy * dy + dx * dx) - params[0];
            return rho * rho + std::pow(zrel * params[0], 2) <= params[1] * params[1];
        }
        case 7: {  // cone narrowing along z
            const double f = 0.5 * (1.0 - zrel);
            return std::abs(zrel) <= 1.0 && dy * dy + dx * dx <= std::pow(params[0] * std::max(0.15, f), 2);
        }
        case 8:  // thin plate
            return std::abs(ry) <= params[0] && std::abs(rx) <= params[1] && std::abs(zrel) <= params[2];
        default: return false;
    }
}

std::vector<double> draw_params(int label, double cell, Rng& rng) {
    switch (label) {
        case 1: return {uniform(rng, 0.26, 0.36) * cell, uniform(rng, 0.6, 0.9)};
        case 2: return {uniform(rng, 0.18, 0.32) * cell, uniform(rng, 0.18, 0.32) * cell, uniform(rng, 0.5, 0.8)};
        case 3:
            return {uniform(rng, 2.8, 3.6), uniform(rng, 0.10, 0.22) * cell, uniform(rng, 0.10, 0.22) * cell,
                    uniform(rng, 0.3, 0.8), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
        case 4: return {uniform(rng, 0.28, 0.38) * cell, uniform(rng, 2.0, 3.0), uniform(rng, 0.6, 0.9)};
        case 5: return {uniform(rng, 0.22, 0.34) * cell, uniform(rng, 0.5, 0.9)};
        case 6: return {uniform(rng, 0.20, 0.28) * cell, uniform(rng, 2.5, 4.0)};
        case 7: return {uniform(rng, 0.28, 0.38) * cell};
        case 8: return {uniform(rng, 1.0, 1.6), uniform(rng, 0.25, 0.38) * cell, uniform(rng, 0.5, 0.8)};
        default: return {};
    }
}

}  // namespace

void LabeledVolume::validate() const {
    const std::size_t n = static_cast<std::size_t>(depth) * height * width;
    if (depth <= 0 || height <= 0 || width <= 0) throw DataError("volume '" + volume_id + "' has an empty axis");
    if (intensities.size() != n || labels.size() != n)
        throw DataError("volume '" + volume_id + "': intensity/label sizes do not match its shape");
    const int k = static_cast<int>(class_names.size());
    for (int l : labels)
        if (l < 0 || l > k)
            throw DataError("volume '" + volume_id + "': label " + std::to_string(l) + " outside [0, " +
                            std::to_string(k) + "]");
}

std::vector<std::string> synthetic_class_names(int num_classes) {
    if (num_classes < 1 || num_classes > static_cast<int>(kShapeNames.size()))
        throw InvalidInput("synthetic volumes support 1 to 8 classes, got " + std::to_string(num_classes));
    return {kShapeNames.begin(), kShapeNames.begin() + num_classes};
}

LabeledVolume generate_synthetic_volume(std::uint64_t seed, int num_classes, VolumeShape shape) {
    LabeledVolume vol;
    vol.class_names = synthetic_class_names(num_classes);
    if (shape.depth < 1 || shape.height < 16 || shape.width < 16)
        throw InvalidInput("synthetic volume shape must be at least 1x16x16");
    vol.depth = shape.depth;
    vol.height = shape.height;
    vol.width = shape.width;
    vol.volume_id = "synth_" + std::to_string(seed);
    Rng rng(seed);

    // One structure per cell of a g x g grid inside the body, cells assigned at random.
    const int grid = num_classes <= 4 ? 2 : 3;
    const double margin = 0.08;
    const double span_y = vol.height * (1.0 - 2 * margin), span_x = vol.width * (1.0 - 2 * margin);
    const double cell = std::min(span_y, span_x) / grid;
    std::vector<int> cells(static_cast<std::size_t>(grid * grid));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    std::shuffle(cells.begin(), cells.end(), rng);

    std::vector<Placement> place(static_cast<std::size_t>(num_classes) + 1);
    std::vector<std::vector<double>> params(static_cast<std::size_t>(num_classes) + 1);
    for (int c = 1; c <= num_classes; ++c) {
        const int idx = cells[static_cast<std::size_t>(c - 1)];
        Placement& p = place[static_cast<std::size_t>(c)];
        p.cell = cell;
        p.cy = vol.height * margin + (idx / grid + 0.5) * cell + uniform(rng, -0.08, 0.08) * cell;
        p.cx = vol.width * margin + (idx % grid + 0.5) * cell + uniform(rng, -0.08, 0.08) * cell;
        p.cz = (vol.depth - 1) * uniform(rng, 0.4, 0.6);
        p.angle = uniform(rng, 0.0, kPi);
        params[static_cast<std::size_t>(c)] = draw_params(c, cell, rng);
    }

    // Body ellipse, per-volume contrast jitter, smooth bias field.
    const double body_ry = vol.height * uniform(rng, 0.45, 0.5), body_rx = vol.width * uniform(rng, 0.45, 0.5);
    std::vector<double> means(std::begin(kClassMean), std::end(kClassMean));
    for (double& m : means) m += uniform(rng, -0.06, 0.06);
    const double fy = uniform(rng, 0.5, 1.5), fx = uniform(rng, 0.5, 1.5), fz = uniform(rng, 0.2, 0.6);
    const double phy = uniform(rng, 0, 2 * kPi), phx = uniform(rng, 0, 2 * kPi);
    std::normal_distribution<double> noise(0.0, 0.15);

    const std::size_t n = static_cast<std::size_t>(vol.depth) * vol.plane_size();
    vol.intensities.assign(n, 0.0);
    vol.labels.assign(n, 0);
    for (int z = 0; z < vol.depth; ++z)
        for (int y = 0; y < vol.height; ++y)
            for (int x = 0; x < vol.width; ++x) {
                const std::size_t i = (static_cast<std::size_t>(z) * vol.height + y) * vol.width + x;
                const double ey = (y - 0.5 * vol.height) / body_ry, ex = (x - 0.5 * vol.width) / body_rx;
                double mean = ey * ey + ex * ex <= 1.0 ? means[0] : -0.3;
                int label = 0;
                for (int c = 1; c <= num_classes; ++c)
                    if (inside(c, place[static_cast<std::size_t>(c)], params[static_cast<std::size_t>(c)], z, y, x,
                               vol.depth)) {
                        label = c;
                        mean = means[static_cast<std::size_t>(c)];
                    }
                const double bias = 0.12 * std::sin(2 * kPi * fy * y / vol.height + phy) +
                                    0.12 * std::cos(2 * kPi * fx * x / vol.width + phx) + 0.05 * std::sin(fz * z);
                vol.labels[i] = label;
                vol.intensities[i] = mean * (1.0 + 0.5 * bias) + bias + noise(rng);
            }
    return vol;
}

std::vector<SliceSample> slice_volume(const LabeledVolume& vol, int axis) {
    vol.validate();
    if (axis < 0 || axis > 2) throw InvalidInput("slice axis must be 0, 1 or 2");
    const int dims[3] = {vol.depth, vol.height, vol.width};
    const int count = dims[axis];
    const int h = axis == 0 ? vol.height : vol.depth;
    const int w = axis == 2 ? vol.height : vol.width;
    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        SliceSample s;
        s.image.pixels = Tensor({h, w});
        s.labels = LabelSlice{h, w, std::vector<int>(static_cast<std::size_t>(h) * w)};
        for (int a = 0; a < h; ++a)
            for (int b = 0; b < w; ++b) {
                int z = 0, y = 0, x = 0;
                if (axis == 0) z = k, y = a, x = b;
                if (axis == 1) z = a, y = k, x = b;
                if (axis == 2) z = a, y = b, x = k;
                const std::size_t src = (static_cast<std::size_t>(z) * vol.height + y) * vol.width + x;
                const std::size_t dst = static_cast<std::size_t>(a) * w + b;
                s.image.pixels[dst] = vol.intensities[src];
                s.labels.labels[dst] = vol.labels[src];
            }
        out.push_back(std::move(s));
    }
    return out;
}

LabelVolume reassemble_volume(std::span<const LabelSlice> slices, int expected_depth, int out_h, int out_w) {
    if (static_cast<int>(slices.size()) != expected_depth)
        throw ShapeError("reassemble_volume: got " + std::to_string(slices.size()) + " slices, expected " +
                         std::to_string(expected_depth));
    if (out_h <= 0 || out_w <= 0) throw ShapeError("reassemble_volume: non-positive output size");
    LabelVolume vol{expected_depth, out_h, out_w, {}};
    vol.labels.reserve(static_cast<std::size_t>(expected_depth) * vol.plane_size());
    for (const LabelSlice& s : slices) {
        if (s.height != slices.front().height || s.width != slices.front().width)
            throw ShapeError("reassemble_volume: slices have differing shapes");
        if (s.labels.size() != static_cast<std::size_t>(s.height) * s.width)
            throw ShapeError("reassemble_volume: slice data does not match its shape");
        if (s.height == out_h && s.width == out_w) {
            vol.labels.insert(vol.labels.end(), s.labels.begin(), s.labels.end());
        } else {
            const auto r = ops::resize_nearest(s.labels, s.height, s.width, out_h, out_w);
            vol.labels.insert(vol.labels.end(), r.begin(), r.end());
        }
    }
    return vol;
}

DatasetSplit make_split(std::vector<std::string> ids, std::uint64_t seed) {
    if (ids.size() < 2) throw InvalidInput("make_split: need at least two volumes, got " + std::to_string(ids.size()));
    Rng rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = ids.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    DatasetSplit split;
    split.seed = seed;
    split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return split;
}

// ---- on-disk dataset -----------------------------------------------------------------

DatasetManifest read_manifest(const std::filesystem::path& root) {
    const auto path = root / "manifest.json";
    std::ifstream in(path);
    if (!in) throw DataError("no manifest.json in '" + root.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        DatasetManifest m;
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        for (const auto& v : j.at("volumes")) {
            VolumeRecord r;
            r.volume_id = v.at("volume_id").get<std::string>();
            r.image_path = v.at("image_path").get<std::string>();
            r.label_path = v.at("label_path").get<std::string>();
            r.class_names = v.value("class_names", m.class_names);
            r.split = v.value("split", std::string("trainval"));
            if (r.split != "trainval" && r.split != "test")
                throw DataError("volume '" + r.volume_id + "': split must be 'trainval' or 'test'");
            m.volumes.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest '" + path.string() + "': " + e.what());
    }
}

void write_manifest(const std::filesystem::path& root, const DatasetManifest& m) {
    nlohmann::json j;
    j["class_names"] = m.class_names;
    j["volumes"] = nlohmann::json::array();
    for (const auto& r : m.volumes)
        j["volumes"].push_back({{"volume_id", r.volume_id},
                                {"image_path", r.image_path},
                                {"label_path", r.label_path},
                                {"class_names", r.class_names},
                                {"split", r.split}});
    std::ofstream out(root / "manifest.json");
    if (!out) throw DataError("cannot write manifest in '" + root.string() + "'");
    out << j.dump(2) << '\n';
}

LabeledVolume load_volume(const std::filesystem::path& root, const VolumeRecord& record) {
    const nifti::Volume img = nifti::read(root / record.image_path);
    const nifti::Volume lab = nifti::read(root / record.label_path);
    if (img.nx != lab.nx || img.ny != lab.ny || img.nz != lab.nz)
        throw DataError("volume '" + record.volume_id + "': image and label dimensions differ");
    LabeledVolume vol;
    vol.depth = img.nz;
    vol.height = img.ny;
    vol.width = img.nx;
    vol.intensities = img.data;
    vol.labels.resize(lab.data.size());
    for (std::size_t i = 0; i < lab.data.size(); ++i) vol.labels[i] = static_cast<int>(std::lround(lab.data[i]));
    vol.class_names = record.class_names;
    vol.volume_id = record.volume_id;
    vol.validate();
    return vol;
}

VolumeRecord save_volume(const std::filesystem::path& root, const LabeledVolume& vol, const std::string& split) {
    vol.validate();
    std::filesystem::create_directories(root / "images");
    std::filesystem::create_directories(root / "labels");
    VolumeRecord r{vol.volume_id, "images/" + vol.volume_id + ".nii.gz", "labels/" + vol.volume_id + ".nii.gz",
                   vol.class_names, split};
    nifti::Volume img{vol.width, vol.height, vol.depth, {1.0, 1.0, 1.0}, vol.intensities};
    nifti::write(root / r.image_path, img, nifti::DataType::float64);
    nifti::Volume lab{vol.width, vol.height, vol.depth, {1.0, 1.0, 1.0},
                      std::vector<double>(vol.labels.begin(), vol.labels.end())};
    nifti::write(root / r.label_path, lab, nifti::DataType::int16);
    return r;
}

Dataset load_dataset(const std::filesystem::path& root) {
    const DatasetManifest m = read_manifest(root);
    Dataset ds;
    ds.class_names = m.class_names;
    for (const auto& r : m.volumes) {
        if (r.class_names != m.class_names)
            throw DataError("volume '" + r.volume_id + "' class list differs from the dataset's");
        (r.split == "test" ? ds.test : ds.trainval).push_back(load_volume(root, r));
    }
    return ds;
}

Dataset generate_synthetic_dataset(std::uint64_t seed, int trainval, int test, int num_classes, VolumeShape shape) {
    Dataset ds;
    ds.class_names = synthetic_class_names(num_classes);
    // Volume seeds are spaced so datasets with neighbouring seeds share no volumes.
    const std::uint64_t base = seed * 1000003ULL;
    for (int i = 0; i < trainval + test; ++i) {
        LabeledVolume v = generate_synthetic_volume(base + static_cast<std::uint64_t>(i), num_classes, shape);
        char id[32];
        std::snprintf(id, sizeof(id), "vol_%03d", i);
        v.volume_id = id;
        (i < trainval ? ds.trainval : ds.test).push_back(std::move(v));
    }
    return ds;
}

void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
    std::filesystem::create_directories(root);
    DatasetManifest m;
    m.class_names = ds.class_names;
    for (const auto& v : ds.trainval) m.volumes.push_back(save_volume(root, v, "trainval"));
    for (const auto& v : ds.test) m.volumes.push_back(save_volume(root, v, "test"));
    write_manifest(root, m);
}

}  // namespace vitc
