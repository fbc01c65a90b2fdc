#include "dwl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace dwl {

void DomainDataset::validate() const {
    if (source_features.rank() != 2 || target_features.rank() != 2) {
        throw ShapeError("dataset: feature matrices must be rank-2");
    }
    if (source_features.cols() != target_features.cols()) {
        throw ShapeError("dataset: source width " + std::to_string(source_features.cols()) +
                         " != target width " + std::to_string(target_features.cols()));
    }
    if (source_labels.size() != n_source()) {
        throw ShapeError("dataset: " + std::to_string(source_labels.size()) + " source labels for " +
                         std::to_string(n_source()) + " rows");
    }
    if (num_classes == 0) throw ConfigError("dataset: num_classes must be >= 1");
    for (int y : source_labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ConfigError("dataset: source label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
    }
    if (target_labels_eval_only) {
        if (target_labels_eval_only->size() != n_target()) {
            throw ShapeError("dataset: eval label count mismatch");
        }
        for (int y : *target_labels_eval_only) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw ConfigError("dataset: target label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Two moons
// ---------------------------------------------------------------------------

namespace {

// Clean two-moons points on a deterministic angular grid, one moon per class.
void base_moons(std::size_t count, std::vector<double>& xy, std::vector<int>& labels) {
    const std::size_t n0 = (count + 1) / 2;
    const std::size_t n1 = count - n0;
    xy.reserve(2 * count);
    labels.reserve(count);
    auto angle = [](std::size_t i, std::size_t n) {
        return n > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1)
                     : 0.0;
    };
    for (std::size_t i = 0; i < n0; ++i) {
        const double t = angle(i, n0);
        xy.push_back(std::cos(t));
        xy.push_back(std::sin(t));
        labels.push_back(0);
    }
    for (std::size_t i = 0; i < n1; ++i) {
        const double t = angle(i, n1);
        xy.push_back(1.0 - std::cos(t));
        xy.push_back(0.5 - std::sin(t));
        labels.push_back(1);
    }
}

} // namespace

DomainDataset make_two_moons_shift(const TwoMoonsSpec& spec) {
    if (spec.n_source < 4 || spec.n_target < 4) {
        throw ConfigError("two-moons: need at least 2 samples per class per domain");
    }
    if (spec.noise_std < 0.0) throw ConfigError("two-moons: noise_std must be >= 0");

    const double theta = spec.rotation_degrees * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);

    auto build = [&](std::size_t count, bool shifted, std::uint64_t stream_seed) {
        std::vector<double> xy;
        std::vector<int> labels;
        base_moons(count, xy, labels);
        if (shifted) {
            for (std::size_t i = 0; i < count; ++i) {
                const double x = xy[2 * i], y = xy[2 * i + 1];
                xy[2 * i] = c * x - s * y + spec.translation_x;
                xy[2 * i + 1] = s * x + c * y + spec.translation_y;
            }
        }
        if (spec.noise_std > 0.0) {
            std::mt19937_64 rng(stream_seed);
            std::normal_distribution<double> noise(0.0, spec.noise_std);
            for (auto& v : xy) v += noise(rng);
        }
        return std::pair{Tensor({count, 2}, std::move(xy)), std::move(labels)};
    };

    auto [src, src_labels] = build(spec.n_source, false, derive_seed(spec.seed, "two-moons-source"));
    auto [tgt, tgt_labels] = build(spec.n_target, true, derive_seed(spec.seed, "two-moons-target"));

    DomainDataset d;
    d.source_features = std::move(src);
    d.source_labels = std::move(src_labels);
    d.target_features = std::move(tgt);
    d.target_labels_eval_only = std::move(tgt_labels);
    d.num_classes = 2;
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::string& path) {
    if (off + 4 > b.size()) throw FormatError("idx: truncated header in " + path);
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

} // namespace

namespace {

// Reads and validates an images file; returns the feature matrix plus the
// full header count (before max_count truncation).
std::pair<Tensor, std::size_t> read_idx_images(const std::string& images_path,
                                               std::size_t max_count) {
    auto img = read_file(images_path);
    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kIdxImagesMagic) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%08x", img_magic);
        throw FormatError("idx: bad magic in images file " + images_path + " (got 0x" + buf +
                          ", want 0x00000803)");
    }
    const std::size_t img_count = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t pixels = rows * cols;
    if (img.size() != 16 + img_count * pixels) {
        throw FormatError("idx: images file length " + std::to_string(img.size()) +
                          " does not match header (expect " +
                          std::to_string(16 + img_count * pixels) + ")");
    }
    const std::size_t count = max_count == 0 ? img_count : std::min(img_count, max_count);
    std::vector<double> features(count * pixels);
    for (std::size_t i = 0; i < count * pixels; ++i) {
        features[i] = static_cast<double>(img[16 + i]) / 255.0;
    }
    return {Tensor({count, pixels}, std::move(features)), img_count};
}

} // namespace

Tensor load_idx_images(const std::string& images_path, std::size_t max_count) {
    return read_idx_images(images_path, max_count).first;
}

IdxData load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_count) {
    auto lab = read_file(labels_path);
    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kIdxLabelsMagic) {
        throw FormatError("idx: bad magic in labels file " + labels_path + " (want 0x00000801)");
    }
    const std::size_t lab_count = read_be32(lab, 4, labels_path);
    if (lab.size() != 8 + lab_count) {
        throw FormatError("idx: labels file length " + std::to_string(lab.size()) +
                          " does not match header");
    }

    auto [features, img_count] = read_idx_images(images_path, max_count);
    if (img_count != lab_count) {
        throw FormatError("idx: image count " + std::to_string(img_count) + " != label count " +
                          std::to_string(lab_count));
    }
    const std::size_t count = features.rows();
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(lab[8 + i]);
    return IdxData{std::move(features), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Sample weighting and batching
// ---------------------------------------------------------------------------

SampleWeights weight_samples(std::size_t n_source, std::size_t n_target, double a) {
    if (!(a > 0.0) || a > 1.0) {
        throw ConfigError("sample weighting: a must lie in (0,1], got " + format_double(a));
    }
    if (n_source == 0 || n_target == 0) {
        throw ConfigError("sample weighting: both domains must be non-empty");
    }
    const double ns = static_cast<double>(n_source), nt = static_cast<double>(n_target);
    return SampleWeights{a * (1.0 + nt / ns), a * (1.0 + ns / nt)};
}

Tensor scale_inputs(const Tensor& features, double w) {
    return affine(features, w, 0.0);
}

EpochBatcher::EpochBatcher(const TrainView& view, std::size_t batch_size, double a,
                           bool apply_weighting, std::uint64_t seed)
    : view_(view), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ < 2) throw ConfigError("batching: batch size must be >= 2");
    if (view.n_source() == 0 || view.n_target() == 0) {
        throw ConfigError("batching: both domains must be non-empty");
    }
    weights_ = apply_weighting ? weight_samples(view.n_source(), view.n_target(), a)
                               : SampleWeights{1.0, 1.0};
}

std::size_t EpochBatcher::batches_per_epoch() const {
    const std::size_t longest = std::max(view_.n_source(), view_.n_target());
    return (longest + batch_size_ - 1) / batch_size_;
}

namespace {

Tensor gather_scaled_rows(const Tensor& features, const std::vector<std::size_t>& perm,
                          std::size_t begin, std::size_t len, double w) {
    const std::size_t n = features.rows(), d = features.cols();
    const std::size_t take = std::min(len, n); // a batch never exceeds the full domain
    std::vector<double> out(take * d);
    auto vals = features.values();
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t row = perm[(begin + k) % n];
        for (std::size_t j = 0; j < d; ++j) out[k * d + j] = w * vals[row * d + j];
    }
    return Tensor({take, d}, std::move(out));
}

} // namespace

std::vector<WeightedBatch> EpochBatcher::next_epoch() {
    const std::size_t n_s = view_.n_source(), n_t = view_.n_target();
    std::vector<std::size_t> perm_s(n_s), perm_t(n_t);
    std::iota(perm_s.begin(), perm_s.end(), 0);
    std::iota(perm_t.begin(), perm_t.end(), 0);
    std::shuffle(perm_s.begin(), perm_s.end(), rng_);
    std::shuffle(perm_t.begin(), perm_t.end(), rng_);

    const std::size_t longest = std::max(n_s, n_t);
    std::vector<WeightedBatch> batches;
    batches.reserve(batches_per_epoch());
    for (std::size_t begin = 0; begin < longest; begin += batch_size_) {
        const std::size_t len = std::min(batch_size_, longest - begin);
        WeightedBatch b;
        b.w_source = weights_.w_source;
        b.w_target = weights_.w_target;
        b.source_inputs =
            gather_scaled_rows(view_.source_features, perm_s, begin, len, weights_.w_source);
        const std::size_t src_take = b.source_inputs.rows();
        b.source_labels.resize(src_take);
        for (std::size_t k = 0; k < src_take; ++k) {
            b.source_labels[k] = view_.source_labels[perm_s[(begin + k) % n_s]];
        }
        b.target_inputs =
            gather_scaled_rows(view_.target_features, perm_t, begin, len, weights_.w_target);
        batches.push_back(std::move(b));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

void export_dataset_csv(const DomainDataset& dataset, const std::string& path,
                        bool training_view) {
    dataset.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    const std::size_t d = dataset.feature_dim();
    out << "domain,label";
    for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
    out << "\n";
    auto write_rows = [&](const Tensor& feats, const char* domain,
                          const std::vector<int>* labels) {
        for (std::size_t i = 0; i < feats.rows(); ++i) {
            out << domain << ",";
            if (labels) out << (*labels)[i];
            for (std::size_t j = 0; j < d; ++j) out << "," << format_double(feats.at(i, j));
            out << "\n";
        }
    };
    write_rows(dataset.source_features, "source", &dataset.source_labels);
    const std::vector<int>* tgt_labels = nullptr;
    if (!training_view && dataset.target_labels_eval_only) {
        tgt_labels = &*dataset.target_labels_eval_only;
    }
    write_rows(dataset.target_features, "target", tgt_labels);
    if (!out) throw Error("failed writing " + path);
}

} // namespace dwl
