#ifndef DWL_EXPERIMENT_HPP
#define DWL_EXPERIMENT_HPP

#include <string>
#include <vector>

#include "dwl/trainer.hpp"

namespace dwl {

// ---------------------------------------------------------------------------
// Configuration. One JSON file is the source of truth; CLI flags override
// individual dotted keys. The experiment seed feeds dataset generation, model
// initialization, and shuffling through independently derived streams.
// ---------------------------------------------------------------------------

struct DatasetSpec {
    enum class Kind { two_moons_shift, idx };
    Kind kind = Kind::two_moons_shift;

    // two-moons-shift
    std::size_t n_source = 400;
    std::size_t n_target = 400;
    double rotation_degrees = 30.0;
    double translation_x = 0.0;
    double translation_y = 0.0;
    double noise_std = 0.1;

    // idx
    std::string source_images;
    std::string source_labels;
    std::string target_images;
    std::string target_labels; // optional; empty = unlabeled target
    std::size_t max_count = 0;
    std::size_t num_classes = 0; // 0 = infer from labels
};

struct ModelSpec {
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 16;
    double discriminator_dropout = 0.0;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train; // seed inside is the master seed
    std::string output_dir = "runs/out";

    void validate() const;
};

/// Parses a config JSON file, applying `overrides` ("dotted.path=value").
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

/// Parses config text (same schema as the file form).
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides = {});

/// JSON echo of a config, used in summary files.
std::string config_echo_json(const ExperimentConfig& config);

/// Materializes the dataset named by the spec; derived stream of the master
/// seed keeps it independent of model/shuffle randomness.
DomainDataset build_dataset(const DatasetSpec& spec, std::uint64_t master_seed);

// ---------------------------------------------------------------------------
// Single run: writes metrics.csv, timing.csv, checkpoint.txt, summary.json
// into the output directory (error.json instead when the run fails).
// ---------------------------------------------------------------------------

struct RunResult {
    std::vector<EpochMetrics> rows;
    std::optional<double> final_target_accuracy;
    std::optional<double> best_target_accuracy;
    double final_tau = 0.5;
    double total_wall_time_seconds = 0.0;
    std::string output_dir;
};

RunResult run_experiment(const ExperimentConfig& config);

/// metrics.csv header, fixed and documented.
extern const char* kMetricsCsvHeader;

std::string format_metrics_row(const EpochMetrics& row);

// ---------------------------------------------------------------------------
// Ablation sweeps over {weighting mode} x {sample weighting} x seeds.
// ---------------------------------------------------------------------------

struct AblationGrid {
    std::vector<std::string> weighting_modes; // "dynamic", "static:0.5", "none-cd", "none-da"
    std::vector<bool> sample_weighting;
};

AblationGrid load_grid(const std::string& path);

struct AblationCell {
    std::string weighting_mode;
    bool sample_weighting = true;
    std::size_t seeds = 0;
    double mean_target_accuracy = 0.0;
    double std_target_accuracy = 0.0;
    std::size_t failures = 0;
};

/// Runs every cell over `num_seeds` consecutive seeds starting at the base
/// config's seed; cell failures are recorded and the sweep continues.
/// Writes ablation.csv under `output_dir`.
std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const AblationGrid& grid,
                                       std::size_t num_seeds, const std::string& output_dir);

// ---------------------------------------------------------------------------
// Embedding export: CSV rows `domain,label,feat0..featF-1` of generator
// outputs for a checkpointed model on a dataset spec.
// ---------------------------------------------------------------------------

void export_embeddings(const std::string& checkpoint_path, const ExperimentConfig& data_config,
                       const std::string& out_path);

/// Applies a weighting-mode string ("dynamic", "static:<t>", "none-cd",
/// "none-da") to a train config.
void apply_weighting_mode(TrainConfig& train, const std::string& mode);

} // namespace dwl

#endif
