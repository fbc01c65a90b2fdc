#include "dwl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace dwl {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2 || probs.rows() == 0) {
        throw ShapeError("cross_entropy: need a non-empty [n x K] probability matrix");
    }
    const std::size_t n = probs.rows(), k = probs.cols();
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    std::vector<double> onehot(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
        }
        onehot[i * k + static_cast<std::size_t>(y)] = 1.0;
    }
    Tensor mask({n, k}, std::move(onehot));
    Tensor logp = log(clamp(probs, kProbEpsilon, 1.0 - kProbEpsilon));
    return affine(sum(mul(mask, logp)), -1.0 / static_cast<double>(n), 0.0);
}

namespace {

// One forward context covering both the taped (training) and tape-free
// (evaluation) paths so the loss formulas exist exactly once.
struct ForwardCtx {
    ParamBinding* bind = nullptr;
    std::mt19937_64* dropout_rng = nullptr;

    Tensor net(const Mlp& mlp, const Tensor& x) const {
        return bind ? mlp.forward(*bind, x, dropout_rng) : mlp.infer(x);
    }
};

Tensor ce_of(const ForwardCtx& ctx, const Mlp& classifier, const Tensor& features,
             const std::vector<int>& labels) {
    return cross_entropy(ctx.net(classifier, features), labels);
}

Tensor da_of(const DwlModel& model, const ForwardCtx& ctx, const WeightedBatch& batch) {
    if (batch.source_inputs.rows() == 0 || batch.target_inputs.rows() == 0) {
        throw ShapeError("loss_da: needs rows from both domains");
    }
    Tensor feat_s = ctx.net(model.generator, batch.source_inputs);
    Tensor feat_t = ctx.net(model.generator, batch.target_inputs);
    Tensor d_s = ctx.net(model.discriminator, feat_s);
    Tensor d_t = ctx.net(model.discriminator, feat_t);
    return add(mean(log(d_s)), mean(log(affine(d_t, -1.0, 1.0))));
}

Tensor cd_of(const DwlModel& model, const ForwardCtx& ctx, const WeightedBatch& batch) {
    const std::size_t n = batch.target_inputs.rows();
    if (n == 0) throw ShapeError("loss_cd: needs target rows");
    Tensor feat_t = ctx.net(model.generator, batch.target_inputs);
    Tensor p = ctx.net(model.classifier_main, feat_t);
    Tensor p1 = ctx.net(model.classifier_aux1, feat_t);
    Tensor p2 = ctx.net(model.classifier_aux2, feat_t);
    Tensor total = add(add(l1_norm(sub(p1, p2)), l1_norm(sub(p, p1))), l1_norm(sub(p, p2)));
    return affine(total, 1.0 / static_cast<double>(n), 0.0);
}

} // namespace

Tensor loss_ce(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch) {
    ForwardCtx ctx{&bind, nullptr};
    Tensor feats = ctx.net(model.generator, batch.source_inputs);
    return ce_of(ctx, model.classifier_main, feats, batch.source_labels);
}

Tensor loss_da(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch,
               std::mt19937_64* dropout_rng) {
    ForwardCtx ctx{&bind, dropout_rng};
    return da_of(model, ctx, batch);
}

Tensor loss_cd(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch) {
    ForwardCtx ctx{&bind, nullptr};
    return cd_of(model, ctx, batch);
}

LossBundle make_loss_bundle(double ce, double da, double cd, double tau) {
    LossBundle b;
    b.ce = ce;
    b.da = da;
    b.cd = cd;
    b.tau = tau;
    b.total = ce + tau * da + (1.0 - tau) * cd;
    return b;
}

const char* substep_name(SubStep step) {
    switch (step) {
    case SubStep::source_ce: return "A/source-ce";
    case SubStep::discriminator_max: return "B/discriminator-max";
    case SubStep::generator_align: return "C/generator-align";
    case SubStep::aux_classifier_max: return "D/aux-classifier-max";
    case SubStep::generator_discrepancy: return "E/generator-discrepancy";
    }
    return "?";
}

SubStepGraph build_substep(const DwlModel& model, ParamBinding& bind, const WeightedBatch& batch,
                           SubStep step, double tau, std::mt19937_64* dropout_rng) {
    ForwardCtx ctx{&bind, dropout_rng};
    SubStepGraph g;
    switch (step) {
    case SubStep::source_ce: {
        if (batch.source_inputs.rows() == 0) throw ShapeError("source-ce: empty source batch");
        Tensor feats = ctx.net(model.generator, batch.source_inputs);
        g.ce = ce_of(ctx, model.classifier_main, feats, batch.source_labels);
        Tensor ce1 = ce_of(ctx, model.classifier_aux1, feats, batch.source_labels);
        Tensor ce2 = ce_of(ctx, model.classifier_aux2, feats, batch.source_labels);
        g.loss = add(g.ce, add(ce1, ce2));
        break;
    }
    case SubStep::discriminator_max:
    case SubStep::generator_align: {
        g.da = da_of(model, ctx, batch);
        g.loss = affine(g.da, tau, 0.0);
        break;
    }
    case SubStep::aux_classifier_max: {
        Tensor feats = ctx.net(model.generator, batch.source_inputs);
        Tensor ce1 = ce_of(ctx, model.classifier_aux1, feats, batch.source_labels);
        Tensor ce2 = ce_of(ctx, model.classifier_aux2, feats, batch.source_labels);
        g.cd = cd_of(model, ctx, batch);
        // maximized: raise the discrepancy while staying a source classifier
        g.loss = sub(affine(g.cd, 1.0 - tau, 0.0), add(ce1, ce2));
        break;
    }
    case SubStep::generator_discrepancy: {
        g.cd = cd_of(model, ctx, batch);
        g.loss = affine(g.cd, 1.0 - tau, 0.0);
        break;
    }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

std::vector<int> pseudo_labels(const DwlModel& model, const Tensor& inputs) {
    Tensor probs = model.classifier_main.infer(model.generator.infer(inputs));
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.cols(); ++j) {
            if (probs.at(i, j) > probs.at(i, best)) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

double evaluate_accuracy(const DwlModel& model, const Tensor& inputs,
                         const std::vector<int>& labels) {
    if (inputs.rank() != 2 || inputs.rows() == 0) {
        throw ShapeError("evaluate: empty input");
    }
    if (labels.size() != inputs.rows()) {
        throw ShapeError("evaluate: label count mismatch");
    }
    std::vector<int> pred = pseudo_labels(model, inputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double eval_loss_ce(const DwlModel& model, const WeightedBatch& batch) {
    ForwardCtx ctx;
    Tensor feats = ctx.net(model.generator, batch.source_inputs);
    return ce_of(ctx, model.classifier_main, feats, batch.source_labels).item();
}

double eval_loss_da(const DwlModel& model, const WeightedBatch& batch) {
    ForwardCtx ctx;
    return da_of(model, ctx, batch).item();
}

double eval_loss_cd(const DwlModel& model, const WeightedBatch& batch) {
    ForwardCtx ctx;
    return cd_of(model, ctx, batch).item();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_epochs < 1) throw ConfigError("train: warmup_epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (sample_weighting && (!(sample_weighting_a > 0.0) || sample_weighting_a > 1.0)) {
        throw ConfigError("train: sample_weighting_a must lie in (0,1]");
    }
    if (mode == WeightingMode::static_tau && (tau_fixed < 0.0 || tau_fixed > 1.0)) {
        throw ConfigError("train: tau_fixed must lie in [0,1]");
    }
    if (!(scatter_eps > 0.0)) throw ConfigError("train: scatter_eps must be > 0");
    if (!(divergence_threshold > 0.0)) throw ConfigError("train: divergence_threshold must be > 0");
    if (optimizer.learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
}

namespace {

// Fixed per-domain evaluation subsample: deterministic, chosen once per run.
std::vector<std::size_t> pick_subsample(std::size_t n, std::size_t want, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (want == 0 || want >= n) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& idx) {
    const std::size_t d = m.cols();
    std::vector<double> out(idx.size() * d);
    for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < d; ++j) out[k * d + j] = m.at(idx[k], j);
    return Tensor({idx.size(), d}, std::move(out));
}

void guard_loss(const Tensor& loss, SubStep step, double threshold) {
    const double v = loss.item();
    if (!std::isfinite(v) || std::abs(v) > threshold) {
        throw DivergenceError(std::string("sub-step ") + substep_name(step) + ": loss " +
                              format_double(v) + " outside the stable regime (threshold " +
                              format_double(threshold) + ")");
    }
}

} // namespace

Trainer::Trainer(DwlModel& model, const DomainDataset& data, TrainConfig config)
    : model_(model), data_(data), config_(config),
      batcher_(train_view(data), config.batch_size, config.sample_weighting_a,
               config.sample_weighting, derive_seed(config.seed, "shuffle")),
      dropout_rng_(derive_seed(config.seed, "dropout")),
      opt_generator_(config.optimizer, model.generator.parameters()),
      opt_discriminator_(config.optimizer, model.discriminator.parameters()),
      opt_classifier_(config.optimizer, model.classifier_main.parameters()),
      opt_aux1_(config.optimizer, model.classifier_aux1.parameters()),
      opt_aux2_(config.optimizer, model.classifier_aux2.parameters()) {
    config_.validate();
    data_.validate();
    if (model_.input_dim != data_.feature_dim()) {
        throw ConfigError("trainer: model input dim " + std::to_string(model_.input_dim) +
                          " != dataset feature dim " + std::to_string(data_.feature_dim()));
    }
    if (model_.num_classes != data_.num_classes) {
        throw ConfigError("trainer: model classes " + std::to_string(model_.num_classes) +
                          " != dataset classes " + std::to_string(data_.num_classes));
    }

    const SampleWeights w = batcher_.weights();
    eval_source_full_ = scale_inputs(data_.source_features, w.w_source);
    eval_target_full_ = scale_inputs(data_.target_features, w.w_target);

    std::mt19937_64 sub_rng(derive_seed(config_.seed, "eval-subsample"));
    auto src_idx = pick_subsample(data_.n_source(), config_.eval_subsample, sub_rng);
    auto tgt_idx = pick_subsample(data_.n_target(), config_.eval_subsample, sub_rng);
    eval_source_sub_ = gather_rows(eval_source_full_, src_idx);
    eval_target_sub_ = gather_rows(eval_target_full_, tgt_idx);
    eval_source_sub_labels_.reserve(src_idx.size());
    for (std::size_t i : src_idx) eval_source_sub_labels_.push_back(data_.source_labels[i]);
}

double Trainer::current_tau() const {
    if (in_warmup()) return 0.5;
    switch (config_.mode) {
    case WeightingMode::dynamic_tau: return balance_.tau;
    case WeightingMode::static_tau: return config_.tau_fixed;
    case WeightingMode::none_cd: return 1.0;
    case WeightingMode::none_da: return 0.0;
    }
    return 0.5;
}

Trainer::BatchMonitors Trainer::run_batch_warmup(const WeightedBatch& batch) {
    BatchMonitors mon;
    Tape tape;
    ParamBinding bind(tape);
    SubStepGraph g;
    try {
        g = build_substep(model_, bind, batch, SubStep::source_ce, 0.5);
        guard_loss(g.loss, SubStep::source_ce, config_.divergence_threshold);
        tape.backward(g.loss);
    } catch (const DivergenceError&) {
        throw;
    } catch (const NumericError& e) {
        throw DivergenceError(std::string("sub-step ") + substep_name(SubStep::source_ce) + ": " +
                              e.what());
    }
    mon.ce = g.ce.item();
    opt_generator_.step(bind, Direction::minimize);
    opt_classifier_.step(bind, Direction::minimize);
    opt_aux1_.step(bind, Direction::minimize);
    opt_aux2_.step(bind, Direction::minimize);
    // adversarial losses are monitored but not trained during warm-up
    mon.da = eval_loss_da(model_, batch);
    mon.cd = eval_loss_cd(model_, batch);
    return mon;
}

Trainer::BatchMonitors Trainer::run_batch_adaptation(const WeightedBatch& batch, double tau) {
    BatchMonitors mon;

    auto run_step = [&](SubStep step, std::mt19937_64* dropout_rng,
                        std::initializer_list<std::pair<Optimizer*, Direction>> updates) {
        Tape tape;
        ParamBinding bind(tape);
        SubStepGraph g;
        try {
            g = build_substep(model_, bind, batch, step, tau, dropout_rng);
            guard_loss(g.loss, step, config_.divergence_threshold);
            tape.backward(g.loss);
        } catch (const DivergenceError&) {
            throw;
        } catch (const NumericError& e) {
            throw DivergenceError(std::string("sub-step ") + substep_name(step) + ": " + e.what());
        }
        for (auto [opt, dir] : updates) opt->step(bind, dir);
        return g;
    };

    // A: supervised source step for G and all three classifiers
    {
        auto g = run_step(SubStep::source_ce, nullptr,
                          {{&opt_generator_, Direction::minimize},
                           {&opt_classifier_, Direction::minimize},
                           {&opt_aux1_, Direction::minimize},
                           {&opt_aux2_, Direction::minimize}});
        mon.ce = g.ce.item();
    }

    // B + C: the alignment game, skipped outright at tau = 0 so the frozen
    // discriminator sees no optimizer-state drift
    if (tau != 0.0) {
        auto gb = run_step(SubStep::discriminator_max, &dropout_rng_,
                           {{&opt_discriminator_, Direction::maximize}});
        mon.da = gb.da.item();
        run_step(SubStep::generator_align, &dropout_rng_,
                 {{&opt_generator_, Direction::minimize}});
    } else {
        mon.da = eval_loss_da(model_, batch);
    }

    // D + E: the discrepancy game, skipped outright at tau = 1
    if (tau != 1.0) {
        auto gd = run_step(SubStep::aux_classifier_max, nullptr,
                           {{&opt_aux1_, Direction::maximize}, {&opt_aux2_, Direction::maximize}});
        mon.cd = gd.cd.item();
        run_step(SubStep::generator_discrepancy, nullptr,
                 {{&opt_generator_, Direction::minimize},
                  {&opt_classifier_, Direction::minimize}});
    } else {
        mon.cd = eval_loss_cd(model_, batch);
    }
    return mon;
}

void Trainer::compute_epoch_estimators(double& mmd_raw, double& j_raw) const {
    Tensor feat_s = model_.generator.infer(eval_source_sub_);
    Tensor feat_t = model_.generator.infer(eval_target_sub_);
    mmd_raw = mmd(feat_s, feat_t);

    // pooled discriminability: source rows with true labels, target rows with
    // the main classifier's pseudo-labels
    std::vector<int> pooled_labels = eval_source_sub_labels_;
    {
        Tensor probs = model_.classifier_main.infer(feat_t);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < probs.cols(); ++j) {
                if (probs.at(i, j) > probs.at(i, best)) best = j;
            }
            pooled_labels.push_back(static_cast<int>(best));
        }
    }
    const std::size_t d = feat_s.cols();
    std::vector<double> pooled((feat_s.rows() + feat_t.rows()) * d);
    std::copy(feat_s.values().begin(), feat_s.values().end(), pooled.begin());
    std::copy(feat_t.values().begin(), feat_t.values().end(),
              pooled.begin() + static_cast<std::ptrdiff_t>(feat_s.size()));
    Tensor pooled_t({feat_s.rows() + feat_t.rows(), d}, std::move(pooled));
    j_raw = lda_criterion(scatter(pooled_t, pooled_labels, data_.num_classes), config_.scatter_eps);
}

EpochMetrics Trainer::run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warmup = in_warmup();
    const double tau = current_tau();

    auto batches = batcher_.next_epoch();
    BatchMonitors sums;
    for (const WeightedBatch& batch : batches) {
        BatchMonitors m = warmup ? run_batch_warmup(batch) : run_batch_adaptation(batch, tau);
        sums.ce += m.ce;
        sums.da += m.da;
        sums.cd += m.cd;
    }
    const double nb = static_cast<double>(batches.size());

    EpochMetrics row;
    row.epoch = ++epochs_run_;
    row.loss_ce = sums.ce / nb;
    row.loss_da = sums.da / nb;
    row.loss_cd = sums.cd / nb;
    row.tau = tau;

    compute_epoch_estimators(row.mmd_raw, row.j_raw);
    if (!warmup) {
        // refresh tau for the NEXT epoch; warm-up observations stay outside
        // the normalization so adaptation starts from the neutral 0.5
        update_and_balance(balance_, row.mmd_raw, row.j_raw);
        row.mmd_normalized = balance_.mmd_normalized;
        row.j_normalized = balance_.j_normalized;
    }

    row.source_accuracy = evaluate_accuracy(model_, eval_source_full_, data_.source_labels);
    if (data_.target_labels_eval_only) {
        row.target_accuracy =
            evaluate_accuracy(model_, eval_target_full_, *data_.target_labels_eval_only);
    }
    row.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

std::vector<EpochMetrics> Trainer::run_all() {
    std::vector<EpochMetrics> rows;
    rows.reserve(config_.epochs);
    while (epochs_run_ < config_.epochs) rows.push_back(run_epoch());
    return rows;
}

} // namespace dwl
