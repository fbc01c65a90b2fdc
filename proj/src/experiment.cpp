#include "dwl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dwl {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T field_or(const ordered_json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

DatasetSpec parse_dataset(const ordered_json& j) {
    DatasetSpec d;
    const std::string type = field_or<std::string>(j, "type", "two-moons-shift");
    if (type == "two-moons-shift") {
        d.kind = DatasetSpec::Kind::two_moons_shift;
        d.n_source = field_or<std::size_t>(j, "n_source", d.n_source);
        d.n_target = field_or<std::size_t>(j, "n_target", d.n_target);
        d.rotation_degrees = field_or<double>(j, "rotation_degrees", d.rotation_degrees);
        if (j.contains("translation")) {
            const auto& t = j.at("translation");
            if (!t.is_array() || t.size() != 2) {
                throw ConfigError("config: dataset.translation must be [x, y]");
            }
            d.translation_x = t[0].get<double>();
            d.translation_y = t[1].get<double>();
        }
        d.noise_std = field_or<double>(j, "noise_std", d.noise_std);
    } else if (type == "idx") {
        d.kind = DatasetSpec::Kind::idx;
        d.source_images = field_or<std::string>(j, "source_images", "");
        d.source_labels = field_or<std::string>(j, "source_labels", "");
        d.target_images = field_or<std::string>(j, "target_images", "");
        d.target_labels = field_or<std::string>(j, "target_labels", "");
        d.max_count = field_or<std::size_t>(j, "max_count", 0);
        d.num_classes = field_or<std::size_t>(j, "num_classes", 0);
    } else {
        throw ConfigError("config: unknown dataset.type '" + type + "'");
    }
    return d;
}

OptimizerSpec parse_optimizer(const ordered_json& j) {
    OptimizerSpec o;
    const std::string kind = field_or<std::string>(j, "kind", "adam");
    if (kind == "adam") {
        o.kind = OptimizerKind::adam;
    } else if (kind == "sgd-momentum") {
        o.kind = OptimizerKind::sgd_momentum;
    } else {
        throw ConfigError("config: unknown optimizer.kind '" + kind + "'");
    }
    o.learning_rate = field_or<double>(j, "learning_rate", 1e-3);
    o.momentum = field_or<double>(j, "momentum", 0.9);
    o.beta1 = field_or<double>(j, "beta1", 0.9);
    o.beta2 = field_or<double>(j, "beta2", 0.999);
    o.epsilon = field_or<double>(j, "epsilon", 1e-8);
    o.weight_decay = field_or<double>(j, "weight_decay", 5e-4);
    return o;
}

ordered_json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": invalid JSON: " + e.what());
    }
}

void apply_override(ordered_json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like dotted.path=value, got '" + kv + "'");
    }
    std::string path = "/" + kv.substr(0, eq);
    for (auto& c : path) {
        if (c == '.') c = '/';
    }
    const std::string raw = kv.substr(eq + 1);
    ordered_json value;
    try {
        value = ordered_json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw; // unquoted strings pass through verbatim
    }
    try {
        j[ordered_json::json_pointer(path)] = value;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("override '" + kv + "' failed: " + e.what());
    }
}

ExperimentConfig config_from_json(const ordered_json& j) {
    ExperimentConfig c;
    if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.hidden_dim = field_or<std::size_t>(m, "hidden_dim", c.model.hidden_dim);
        c.model.feature_dim = field_or<std::size_t>(m, "feature_dim", c.model.feature_dim);
        c.model.discriminator_dropout =
            field_or<double>(m, "discriminator_dropout", c.model.discriminator_dropout);
    }
    if (j.contains("optimizer")) c.train.optimizer = parse_optimizer(j.at("optimizer"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.epochs = field_or<std::size_t>(t, "epochs", c.train.epochs);
        c.train.warmup_epochs = field_or<std::size_t>(t, "warmup_epochs", c.train.warmup_epochs);
        c.train.batch_size = field_or<std::size_t>(t, "batch_size", c.train.batch_size);
        c.train.sample_weighting_a =
            field_or<double>(t, "sample_weighting_a", c.train.sample_weighting_a);
        c.train.sample_weighting = field_or<bool>(t, "sample_weighting", c.train.sample_weighting);
        c.train.tau_fixed = field_or<double>(t, "tau_fixed", c.train.tau_fixed);
        c.train.eval_subsample = field_or<std::size_t>(t, "eval_subsample", c.train.eval_subsample);
        c.train.scatter_eps = field_or<double>(t, "scatter_eps", c.train.scatter_eps);
        c.train.divergence_threshold =
            field_or<double>(t, "divergence_threshold", c.train.divergence_threshold);
        if (t.contains("weighting_mode")) {
            apply_weighting_mode(c.train, t.at("weighting_mode").get<std::string>());
        }
    }
    c.train.seed = field_or<std::uint64_t>(j, "seed", 0);
    c.output_dir = field_or<std::string>(j, "output_dir", c.output_dir);
    return c;
}

ordered_json config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    ordered_json d;
    if (c.dataset.kind == DatasetSpec::Kind::two_moons_shift) {
        d["type"] = "two-moons-shift";
        d["n_source"] = c.dataset.n_source;
        d["n_target"] = c.dataset.n_target;
        d["rotation_degrees"] = c.dataset.rotation_degrees;
        d["translation"] = {c.dataset.translation_x, c.dataset.translation_y};
        d["noise_std"] = c.dataset.noise_std;
    } else {
        d["type"] = "idx";
        d["source_images"] = c.dataset.source_images;
        d["source_labels"] = c.dataset.source_labels;
        d["target_images"] = c.dataset.target_images;
        d["target_labels"] = c.dataset.target_labels;
        d["max_count"] = c.dataset.max_count;
        d["num_classes"] = c.dataset.num_classes;
    }
    j["dataset"] = d;
    j["model"] = {{"hidden_dim", c.model.hidden_dim},
                  {"feature_dim", c.model.feature_dim},
                  {"discriminator_dropout", c.model.discriminator_dropout}};
    j["optimizer"] = {
        {"kind", c.train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd-momentum"},
        {"learning_rate", c.train.optimizer.learning_rate},
        {"momentum", c.train.optimizer.momentum},
        {"beta1", c.train.optimizer.beta1},
        {"beta2", c.train.optimizer.beta2},
        {"epsilon", c.train.optimizer.epsilon},
        {"weight_decay", c.train.optimizer.weight_decay}};
    const char* mode = "dynamic";
    switch (c.train.mode) {
    case WeightingMode::dynamic_tau: mode = "dynamic"; break;
    case WeightingMode::static_tau: mode = "static"; break;
    case WeightingMode::none_cd: mode = "none-cd"; break;
    case WeightingMode::none_da: mode = "none-da"; break;
    }
    j["train"] = {{"epochs", c.train.epochs},
                  {"warmup_epochs", c.train.warmup_epochs},
                  {"batch_size", c.train.batch_size},
                  {"sample_weighting_a", c.train.sample_weighting_a},
                  {"sample_weighting", c.train.sample_weighting},
                  {"weighting_mode", mode},
                  {"tau_fixed", c.train.tau_fixed},
                  {"eval_subsample", c.train.eval_subsample},
                  {"scatter_eps", c.train.scatter_eps},
                  {"divergence_threshold", c.train.divergence_threshold}};
    j["seed"] = c.train.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

} // namespace

void apply_weighting_mode(TrainConfig& train, const std::string& mode) {
    if (mode == "dynamic") {
        train.mode = WeightingMode::dynamic_tau;
    } else if (mode == "none-cd") {
        train.mode = WeightingMode::none_cd;
    } else if (mode == "none-da") {
        train.mode = WeightingMode::none_da;
    } else if (mode == "static") {
        train.mode = WeightingMode::static_tau;
    } else if (mode.rfind("static:", 0) == 0) {
        train.mode = WeightingMode::static_tau;
        try {
            train.tau_fixed = std::stod(mode.substr(7));
        } catch (const std::exception&) {
            throw ConfigError("config: bad static weighting mode '" + mode + "'");
        }
    } else {
        throw ConfigError("config: unknown weighting_mode '" + mode + "'");
    }
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides) {
    ordered_json j = parse_json_text(text, "config");
    for (const auto& kv : overrides) apply_override(j, kv);
    return config_from_json(j);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), overrides);
}

std::string config_echo_json(const ExperimentConfig& config) {
    return config_to_json(config).dump(2);
}

void ExperimentConfig::validate() const {
    train.validate();
    if (model.hidden_dim < 1 || model.feature_dim < 1) {
        throw ConfigError("config: model dims must be >= 1");
    }
    if (model.discriminator_dropout < 0.0 || model.discriminator_dropout >= 1.0) {
        throw ConfigError("config: discriminator_dropout must lie in [0,1)");
    }
    if (dataset.kind == DatasetSpec::Kind::idx) {
        for (const std::string* p :
             {&dataset.source_images, &dataset.source_labels, &dataset.target_images}) {
            if (p->empty()) throw ConfigError("config: idx dataset needs source/target file paths");
            if (!fs::exists(*p)) throw ConfigError("config: missing dataset file: " + *p);
        }
        if (!dataset.target_labels.empty() && !fs::exists(dataset.target_labels)) {
            throw ConfigError("config: missing dataset file: " + dataset.target_labels);
        }
    } else {
        if (dataset.n_source < 4 || dataset.n_target < 4) {
            throw ConfigError("config: two-moons domains need at least 4 samples");
        }
        if (dataset.noise_std < 0.0) throw ConfigError("config: noise_std must be >= 0");
    }
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

DomainDataset build_dataset(const DatasetSpec& spec, std::uint64_t master_seed) {
    if (spec.kind == DatasetSpec::Kind::two_moons_shift) {
        TwoMoonsSpec m;
        m.n_source = spec.n_source;
        m.n_target = spec.n_target;
        m.rotation_degrees = spec.rotation_degrees;
        m.translation_x = spec.translation_x;
        m.translation_y = spec.translation_y;
        m.noise_std = spec.noise_std;
        m.seed = derive_seed(master_seed, "dataset");
        return make_two_moons_shift(m);
    }

    IdxData src = load_idx(spec.source_images, spec.source_labels, spec.max_count);
    DomainDataset d;
    d.source_features = src.features;
    d.source_labels = src.labels;
    if (!spec.target_labels.empty()) {
        IdxData tgt = load_idx(spec.target_images, spec.target_labels, spec.max_count);
        d.target_features = tgt.features;
        d.target_labels_eval_only = tgt.labels;
    } else {
        d.target_features = load_idx_images(spec.target_images, spec.max_count);
    }
    if (d.source_features.cols() != d.target_features.cols()) {
        throw ConfigError("idx dataset: source width " + std::to_string(d.source_features.cols()) +
                          " != target width " + std::to_string(d.target_features.cols()));
    }
    std::size_t k = spec.num_classes;
    if (k == 0) {
        int max_label = 0;
        for (int y : d.source_labels) max_label = std::max(max_label, y);
        if (d.target_labels_eval_only) {
            for (int y : *d.target_labels_eval_only) max_label = std::max(max_label, y);
        }
        k = static_cast<std::size_t>(max_label) + 1;
    }
    d.num_classes = k;
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

const char* kMetricsCsvHeader =
    "epoch,loss_ce,loss_da,loss_cd,tau,mmd_raw,mmd_normalized,j_raw,j_normalized,"
    "source_accuracy,target_accuracy";

namespace {

std::string format_opt(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

void write_error_record(const std::string& dir, const std::string& kind,
                        const std::string& message) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream out(fs::path(dir) / "error.json", std::ios::binary);
    if (!out) return; // the original error stays the primary failure
    ordered_json j{{"error", kind}, {"message", message}};
    out << j.dump(2) << "\n";
}

} // namespace

std::string format_metrics_row(const EpochMetrics& r) {
    std::string row = std::to_string(r.epoch);
    for (const auto& v :
         {format_double(r.loss_ce), format_double(r.loss_da), format_double(r.loss_cd),
          format_double(r.tau), format_double(r.mmd_raw), format_opt(r.mmd_normalized),
          format_double(r.j_raw), format_opt(r.j_normalized), format_double(r.source_accuracy),
          format_opt(r.target_accuracy)}) {
        row += ",";
        row += v;
    }
    return row;
}

RunResult run_experiment(const ExperimentConfig& config) {
    try {
        config.validate();
    } catch (const Error& e) {
        write_error_record(config.output_dir, "config", e.what());
        throw;
    }
    fs::create_directories(config.output_dir);

    try {
        DomainDataset data = build_dataset(config.dataset, config.train.seed);
        DwlModel model =
            init_model(data.feature_dim(), config.model.feature_dim, config.model.hidden_dim,
                       data.num_classes, derive_seed(config.train.seed, "model"),
                       config.model.discriminator_dropout);
        Trainer trainer(model, data, config.train);

        std::ofstream metrics(fs::path(config.output_dir) / "metrics.csv", std::ios::binary);
        std::ofstream timing(fs::path(config.output_dir) / "timing.csv", std::ios::binary);
        if (!metrics || !timing) throw Error("cannot open output files in " + config.output_dir);
        metrics << kMetricsCsvHeader << "\n";
        timing << "epoch,wall_time_seconds\n";

        RunResult result;
        result.output_dir = config.output_dir;
        result.rows.reserve(config.train.epochs);
        for (std::size_t e = 0; e < config.train.epochs; ++e) {
            EpochMetrics row = trainer.run_epoch();
            metrics << format_metrics_row(row) << "\n";
            timing << row.epoch << "," << format_double(row.wall_time_seconds) << "\n";
            result.total_wall_time_seconds += row.wall_time_seconds;
            if (row.target_accuracy) {
                if (!result.best_target_accuracy ||
                    *row.target_accuracy > *result.best_target_accuracy) {
                    result.best_target_accuracy = row.target_accuracy;
                }
            }
            log_debug("epoch " + std::to_string(row.epoch) + " tau=" + format_double(row.tau) +
                      " ce=" + format_double(row.loss_ce));
            result.rows.push_back(std::move(row));
        }
        result.final_target_accuracy = result.rows.back().target_accuracy;
        result.final_tau = trainer.balance_state().tau;

        save_checkpoint(model, (fs::path(config.output_dir) / "checkpoint.txt").string());

        ordered_json summary;
        summary["final_target_accuracy"] =
            result.final_target_accuracy ? ordered_json(*result.final_target_accuracy)
                                         : ordered_json(nullptr);
        summary["best_target_accuracy"] = result.best_target_accuracy
                                              ? ordered_json(*result.best_target_accuracy)
                                              : ordered_json(nullptr);
        summary["final_tau"] = result.final_tau;
        summary["epochs_run"] = result.rows.size();
        summary["total_wall_time_seconds"] = result.total_wall_time_seconds;
        summary["config"] = config_to_json(config);
        std::ofstream sum(fs::path(config.output_dir) / "summary.json", std::ios::binary);
        sum << summary.dump(2) << "\n";
        if (!sum) throw Error("failed writing summary.json");
        return result;
    } catch (const DivergenceError& e) {
        write_error_record(config.output_dir, "divergence", e.what());
        throw;
    } catch (const Error& e) {
        write_error_record(config.output_dir, "error", e.what());
        throw;
    }
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

AblationGrid load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grid file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    ordered_json j = parse_json_text(buf.str(), "grid");
    AblationGrid g;
    if (!j.contains("weighting_modes") || !j.contains("sample_weighting")) {
        throw ConfigError("grid: needs 'weighting_modes' and 'sample_weighting' arrays");
    }
    g.weighting_modes = j.at("weighting_modes").get<std::vector<std::string>>();
    g.sample_weighting = j.at("sample_weighting").get<std::vector<bool>>();
    if (g.weighting_modes.empty() || g.sample_weighting.empty()) {
        throw ConfigError("grid: axes must be non-empty");
    }
    // fail fast on malformed mode strings
    for (const auto& m : g.weighting_modes) {
        TrainConfig probe;
        apply_weighting_mode(probe, m);
    }
    return g;
}

namespace {

std::string sanitize(const std::string& s) {
    std::string out = s;
    for (auto& c : out) {
        if (c == ':' || c == '/' || c == '.') c = '-';
    }
    return out;
}

} // namespace

std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const AblationGrid& grid,
                                       std::size_t num_seeds, const std::string& output_dir) {
    if (num_seeds < 1) throw ConfigError("ablation: need at least one seed");
    fs::create_directories(output_dir);

    std::vector<AblationCell> cells;
    for (const std::string& mode : grid.weighting_modes) {
        for (bool weighting : grid.sample_weighting) {
            AblationCell cell;
            cell.weighting_mode = mode;
            cell.sample_weighting = weighting;
            cell.seeds = num_seeds;
            std::vector<double> accs;
            for (std::size_t s = 0; s < num_seeds; ++s) {
                ExperimentConfig run_cfg = base;
                apply_weighting_mode(run_cfg.train, mode);
                run_cfg.train.sample_weighting = weighting;
                run_cfg.train.seed = base.train.seed + s;
                run_cfg.output_dir =
                    (fs::path(output_dir) /
                     ("cell_" + sanitize(mode) + (weighting ? "_w-on" : "_w-off")) /
                     ("seed_" + std::to_string(run_cfg.train.seed)))
                        .string();
                try {
                    RunResult r = run_experiment(run_cfg);
                    if (!r.final_target_accuracy) {
                        throw Error("run produced no target accuracy (unlabeled target)");
                    }
                    accs.push_back(*r.final_target_accuracy);
                } catch (const Error& e) {
                    ++cell.failures;
                    log_warn("ablation cell " + mode + (weighting ? "/w-on" : "/w-off") +
                             " seed " + std::to_string(run_cfg.train.seed) + " failed: " +
                             e.what());
                }
            }
            if (!accs.empty()) {
                double mean = 0.0;
                for (double a : accs) mean += a;
                mean /= static_cast<double>(accs.size());
                double var = 0.0;
                for (double a : accs) var += (a - mean) * (a - mean);
                var = accs.size() > 1 ? var / static_cast<double>(accs.size() - 1) : 0.0;
                cell.mean_target_accuracy = mean;
                cell.std_target_accuracy = std::sqrt(var);
            }
            cells.push_back(std::move(cell));
        }
    }

    std::ofstream out(fs::path(output_dir) / "ablation.csv", std::ios::binary);
    if (!out) throw Error("cannot write ablation.csv in " + output_dir);
    out << "weighting_mode,sample_weighting,seeds,mean_target_accuracy,std_target_accuracy,"
           "failures\n";
    for (const auto& c : cells) {
        out << c.weighting_mode << "," << (c.sample_weighting ? "on" : "off") << "," << c.seeds
            << "," << format_double(c.mean_target_accuracy) << ","
            << format_double(c.std_target_accuracy) << "," << c.failures << "\n";
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

void export_embeddings(const std::string& checkpoint_path, const ExperimentConfig& data_config,
                       const std::string& out_path) {
    DwlModel model = load_checkpoint(checkpoint_path);
    DomainDataset data = build_dataset(data_config.dataset, data_config.train.seed);
    if (model.input_dim != data.feature_dim()) {
        throw ConfigError("export: checkpoint input dim " + std::to_string(model.input_dim) +
                          " != dataset feature dim " + std::to_string(data.feature_dim()));
    }

    const SampleWeights w = data_config.train.sample_weighting
                                ? weight_samples(data.n_source(), data.n_target(),
                                                 data_config.train.sample_weighting_a)
                                : SampleWeights{1.0, 1.0};
    Tensor feat_s = model.generator.infer(scale_inputs(data.source_features, w.w_source));
    Tensor feat_t = model.generator.infer(scale_inputs(data.target_features, w.w_target));

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + out_path);
    out << "domain,label";
    for (std::size_t j = 0; j < model.feature_dim; ++j) out << ",feat" << j;
    out << "\n";
    for (std::size_t i = 0; i < feat_s.rows(); ++i) {
        out << "source," << data.source_labels[i];
        for (std::size_t j = 0; j < feat_s.cols(); ++j) out << "," << format_double(feat_s.at(i, j));
        out << "\n";
    }
    for (std::size_t i = 0; i < feat_t.rows(); ++i) {
        out << "target,";
        if (data.target_labels_eval_only) out << (*data.target_labels_eval_only)[i];
        for (std::size_t j = 0; j < feat_t.cols(); ++j) out << "," << format_double(feat_t.at(i, j));
        out << "\n";
    }
    if (!out) throw Error("failed writing " + out_path);
}

} // namespace dwl
