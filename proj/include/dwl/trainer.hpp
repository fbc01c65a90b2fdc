#ifndef DWL_TRAINER_HPP
#define DWL_TRAINER_HPP

#include <optional>
#include <vector>

#include "dwl/data.hpp"
#include "dwl/metrics.hpp"
#include "dwl/nn.hpp"

namespace dwl {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of probability rows against integer labels.
/// Probabilities are clamped into [eps_p, 1-eps_p] before the log.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

/// Source cross-entropy of the main classifier: mean NLL of C(G(x_s)).
Tensor loss_ce(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch);

/// Minimax alignment value: mean log D(G(x_s)) + mean log(1 - D(G(x_t))).
/// D maximizes it, G minimizes it.
Tensor loss_da(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch,
               std::mt19937_64* dropout_rng = nullptr);

/// Classifier discrepancy on the target batch: mean over rows of
/// |C1-C2|_1 + |C-C1|_1 + |C-C2|_1 between probability rows.
Tensor loss_cd(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch);

/// The per-epoch loss record: total = ce + tau*da + (1-tau)*cd.
struct LossBundle {
    double ce = 0.0;
    double da = 0.0;
    double cd = 0.0;
    double tau = 0.5;
    double total = 0.0;
};

LossBundle make_loss_bundle(double ce, double da, double cd, double tau);

// ---------------------------------------------------------------------------
// The alternating schedule. Each batch executes, in order:
//   A  minimize source cross-entropy of C, C1, C2 (through G)
//   B  maximize tau * L_da in the discriminator, generator frozen
//   C  minimize tau * L_da in the generator, discriminator frozen
//   D  maximize (1-tau) * L_cd in C1, C2 (keeping their source CE), G/C frozen
//   E  minimize (1-tau) * L_cd in the generator and C, C1/C2 frozen
// A zero multiplier skips the corresponding steps outright so frozen players
// see no optimizer-state drift.
// ---------------------------------------------------------------------------

enum class SubStep {
    source_ce,             // A
    discriminator_max,     // B
    generator_align,       // C
    aux_classifier_max,    // D
    generator_discrepancy, // E
};

const char* substep_name(SubStep step);

/// The effective loss of one sub-step plus the raw loss values it contains
/// (empty tensors where a term does not participate). Exposed so the
/// gradient tests can differentiate exactly what the trainer optimizes.
struct SubStepGraph {
    Tensor loss;
    Tensor ce;
    Tensor da;
    Tensor cd;
};

SubStepGraph build_substep(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch,
                           SubStep step, double tau, std::mt19937_64* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// Evaluation helpers (tape-free).
// ---------------------------------------------------------------------------

/// Fraction of rows whose argmax of C(G(x)) equals the label.
double evaluate_accuracy(const DwlModel& model, const Tensor& inputs,
                         const std::vector<int>& labels);

/// argmax C(G(x)) per row; feeds the pooled discriminability estimate.
std::vector<int> pseudo_labels(const DwlModel& model, const Tensor& inputs);

double eval_loss_ce(const DwlModel& model, const WeightedBatch& batch);
double eval_loss_da(const DwlModel& model, const WeightedBatch& batch);
double eval_loss_cd(const DwlModel& model, const WeightedBatch& batch);

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

enum class WeightingMode {
    dynamic_tau, // tau from the balance state, refreshed once per epoch
    static_tau,  // tau frozen at tau_fixed
    none_cd,     // discrepancy loss zeroed (tau = 1)
    none_da,     // alignment loss zeroed (tau = 0)
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t warmup_epochs = 5; // source-only pre-training, >= 1
    std::size_t batch_size = 128;
    double sample_weighting_a = 0.5;
    bool sample_weighting = true;
    WeightingMode mode = WeightingMode::dynamic_tau;
    double tau_fixed = 0.5;
    std::size_t eval_subsample = 512; // per domain, 0 = all
    double scatter_eps = 1e-5;
    double divergence_threshold = 1e6;
    OptimizerSpec optimizer;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One monitoring row. Normalized estimator values are absent until the
/// min-max scaling is defined; the target accuracy is absent when the
/// dataset carries no held-out target labels.
struct EpochMetrics {
    std::size_t epoch = 0; // 1-based
    double loss_ce = 0.0;
    double loss_da = 0.0;
    double loss_cd = 0.0;
    double tau = 0.5;
    double mmd_raw = 0.0;
    std::optional<double> mmd_normalized;
    double j_raw = 0.0;
    std::optional<double> j_normalized;
    double source_accuracy = 0.0;
    std::optional<double> target_accuracy;
    double wall_time_seconds = 0.0;
};

class Trainer {
public:
    Trainer(DwlModel& model, const DomainDataset& data, TrainConfig config);

    /// Runs the next epoch (warm-up while epochs_run < warmup_epochs) and
    /// returns its metrics row. Throws DivergenceError when a sub-step loss
    /// leaves the stable regime.
    EpochMetrics run_epoch();

    std::vector<EpochMetrics> run_all();

    std::size_t epochs_run() const { return epochs_run_; }
    bool in_warmup() const { return epochs_run_ < config_.warmup_epochs; }
    const BalanceState& balance_state() const { return balance_; }
    const TrainConfig& config() const { return config_; }

    /// tau the next epoch's sub-steps will use.
    double current_tau() const;

private:
    struct BatchMonitors {
        double ce = 0.0, da = 0.0, cd = 0.0;
    };

    BatchMonitors run_batch_warmup(const WeightedBatch& batch);
    BatchMonitors run_batch_adaptation(const WeightedBatch& batch, double tau);
    void compute_epoch_estimators(double& mmd_raw, double& j_raw) const;

    DwlModel& model_;
    const DomainDataset& data_;
    TrainConfig config_;
    EpochBatcher batcher_;
    BalanceState balance_;
    std::mt19937_64 dropout_rng_;

    Optimizer opt_generator_;
    Optimizer opt_discriminator_;
    Optimizer opt_classifier_;
    Optimizer opt_aux1_;
    Optimizer opt_aux2_;

    // weighted full-set inputs for accuracy reporting; weighted fixed
    // subsamples for the per-epoch estimators
    Tensor eval_source_full_;
    Tensor eval_target_full_;
    Tensor eval_source_sub_;
    Tensor eval_target_sub_;
    std::vector<int> eval_source_sub_labels_;

    std::size_t epochs_run_ = 0;
};

} // namespace dwl

#endif
