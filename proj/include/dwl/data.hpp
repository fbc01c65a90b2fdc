#ifndef DWL_DATA_HPP
#define DWL_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dwl/tensor.hpp"

namespace dwl {

/// Labeled source samples plus unlabeled target samples. Target labels, when
/// known (synthetic data, benchmark test sets), are held out for accuracy
/// reporting only: training code receives a TrainView, which has no way to
/// reach them.
struct DomainDataset {
    Tensor source_features;  // [n_s x d]
    std::vector<int> source_labels;
    Tensor target_features;  // [n_t x d]
    std::optional<std::vector<int>> target_labels_eval_only;
    std::size_t num_classes = 0;

    std::size_t n_source() const { return source_features.rows(); }
    std::size_t n_target() const { return target_features.rows(); }
    std::size_t feature_dim() const { return source_features.cols(); }

    void validate() const;
};

/// The training-facing slice of a dataset: everything except target labels.
struct TrainView {
    const Tensor& source_features;
    const std::vector<int>& source_labels;
    const Tensor& target_features;
    std::size_t num_classes;

    std::size_t n_source() const { return source_features.rows(); }
    std::size_t n_target() const { return target_features.rows(); }
};

inline TrainView train_view(const DomainDataset& d) {
    return TrainView{d.source_features, d.source_labels, d.target_features, d.num_classes};
}

// ---------------------------------------------------------------------------
// Synthetic generator: two moons with a rotation/translation domain shift.
// ---------------------------------------------------------------------------

struct TwoMoonsSpec {
    std::size_t n_source = 400;
    std::size_t n_target = 400;
    double rotation_degrees = 0.0;
    double translation_x = 0.0;
    double translation_y = 0.0;
    double noise_std = 0.1;
    std::uint64_t seed = 0;
};

/// Source is the standard two-moons layout; the target is drawn from the same
/// generator (its own noise stream) and then rotated about the origin and
/// translated. K = 2; target labels are stored for evaluation only.
DomainDataset make_two_moons_shift(const TwoMoonsSpec& spec);

// ---------------------------------------------------------------------------
// IDX ingestion (big-endian headers, the de-facto MNIST layout).
// ---------------------------------------------------------------------------

struct IdxData {
    Tensor features; // [n x rows*cols], pixel values scaled into [0,1]
    std::vector<int> labels;
};

/// Reads an images/labels file pair. `max_count` of 0 keeps every record;
/// otherwise the first min(header count, max_count) records are returned.
IdxData load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_count = 0);

/// Images-only variant for unlabeled target domains.
Tensor load_idx_images(const std::string& images_path, std::size_t max_count = 0);

// ---------------------------------------------------------------------------
// Domain sample-size rebalancing.
// ---------------------------------------------------------------------------

struct SampleWeights {
    double w_source = 1.0;
    double w_target = 1.0;
};

/// w_s = a(1 + n_t/n_s), w_t = a(1 + n_s/n_t); the weighted total masses
/// w_s*n_s and w_t*n_t come out equal for any sizes. Requires a in (0,1].
SampleWeights weight_samples(std::size_t n_source, std::size_t n_target, double a);

/// One paired mini-batch with inputs already scaled by the domain weights.
struct WeightedBatch {
    Tensor source_inputs;
    std::vector<int> source_labels;
    Tensor target_inputs;
    double w_source = 1.0;
    double w_target = 1.0;
};

/// Per-epoch batch stream. Every epoch reshuffles both domains independently;
/// each batch pairs one source slice with one target slice of equal length.
/// When domain sizes differ, the smaller domain cycles through its shuffled
/// order; a batch size above a domain's size yields the full domain.
class EpochBatcher {
public:
    /// `apply_weighting` false leaves inputs unscaled (w = 1 exactly).
    EpochBatcher(const TrainView& view, std::size_t batch_size, double a, bool apply_weighting,
                 std::uint64_t seed);

    std::vector<WeightedBatch> next_epoch();

    std::size_t batches_per_epoch() const;
    const SampleWeights& weights() const { return weights_; }

private:
    const TrainView view_;
    std::size_t batch_size_;
    SampleWeights weights_;
    std::mt19937_64 rng_;
};

/// Scales every row of a feature matrix by a domain weight.
Tensor scale_inputs(const Tensor& features, double w);

// ---------------------------------------------------------------------------
// CSV export: header `domain,label,f0..fd-1`. In the training view target
// labels are blank; the full view fills them when available.
// ---------------------------------------------------------------------------

void export_dataset_csv(const DomainDataset& dataset, const std::string& path,
                        bool training_view);

} // namespace dwl

#endif
