// Command-line front end: single runs, ablation sweeps, and CSV exports.
//
// Exit codes: 0 success, 2 configuration/validation failure, 3 training
// divergence, 1 anything else. Failed runs leave an error.json in their
// output directory. Log verbosity comes from the DWL_LOG environment
// variable (debug|info|warn|error).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dwl/experiment.hpp"

namespace {

int run_command(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::string& seed_override, const std::string& out_override) {
    std::vector<std::string> all = overrides;
    if (!seed_override.empty()) all.push_back("seed=" + seed_override);
    if (!out_override.empty()) all.push_back("output_dir=" + out_override);
    dwl::ExperimentConfig config = dwl::load_config(config_path, all);
    dwl::RunResult result = dwl::run_experiment(config);
    std::printf("run complete: %zu epochs, output in %s\n", result.rows.size(),
                result.output_dir.c_str());
    if (result.final_target_accuracy) {
        std::printf("final target accuracy %.4f (best %.4f), final tau %.4f\n",
                    *result.final_target_accuracy, *result.best_target_accuracy,
                    result.final_tau);
    }
    return 0;
}

int ablate_command(const std::string& config_path, const std::string& grid_path,
                   std::size_t seeds, const std::string& out_override) {
    dwl::ExperimentConfig base = dwl::load_config(config_path);
    dwl::AblationGrid grid = dwl::load_grid(grid_path);
    const std::string out_dir = out_override.empty() ? base.output_dir + "/ablation" : out_override;
    auto cells = dwl::run_ablation(base, grid, seeds, out_dir);
    std::printf("%-16s %-7s %-8s %-8s %s\n", "mode", "weight", "mean", "std", "failures");
    for (const auto& c : cells) {
        std::printf("%-16s %-7s %-8.4f %-8.4f %zu\n", c.weighting_mode.c_str(),
                    c.sample_weighting ? "on" : "off", c.mean_target_accuracy,
                    c.std_target_accuracy, c.failures);
    }
    std::printf("ablation table written to %s/ablation.csv\n", out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic weighted learning for unsupervised domain adaptation"};
    app.require_subcommand(1);

    // run
    std::string run_config, run_seed, run_out;
    std::vector<std::string> run_overrides;
    auto* run = app.add_subcommand("run", "train one configuration");
    run->add_option("--config", run_config, "config JSON file")->required();
    run->add_option("--seed", run_seed, "override the experiment seed");
    run->add_option("--out", run_out, "override the output directory");
    run->add_option("--override", run_overrides, "dotted.path=value config override")
        ->take_all();

    // ablate
    std::string ab_config, ab_grid, ab_out;
    std::size_t ab_seeds = 5;
    auto* ablate = app.add_subcommand("ablate", "sweep weighting modes and sample weighting");
    ablate->add_option("--config", ab_config, "base config JSON file")->required();
    ablate->add_option("--grid", ab_grid, "grid JSON file")->required();
    ablate->add_option("--seeds", ab_seeds, "seeds per cell")->required();
    ablate->add_option("--out", ab_out, "output directory (default <output_dir>/ablation)");

    // export-embeddings
    std::string emb_ckpt, emb_data, emb_out;
    auto* emb = app.add_subcommand("export-embeddings",
                                   "write generator features for a checkpoint as CSV");
    emb->add_option("--checkpoint", emb_ckpt, "checkpoint file")->required();
    emb->add_option("--data", emb_data, "dataset spec (config JSON)")->required();
    emb->add_option("--out", emb_out, "output CSV path")->required();

    // export-dataset
    std::string ds_config, ds_out;
    bool ds_training_view = false;
    auto* ds = app.add_subcommand("export-dataset", "write the dataset as CSV");
    ds->add_option("--config", ds_config, "config JSON file")->required();
    ds->add_option("--out", ds_out, "output CSV path")->required();
    ds->add_flag("--training-view", ds_training_view, "blank out target labels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(run_config, run_overrides, run_seed, run_out);
        if (ablate->parsed()) return ablate_command(ab_config, ab_grid, ab_seeds, ab_out);
        if (emb->parsed()) {
            dwl::ExperimentConfig data_cfg = dwl::load_config(emb_data);
            dwl::export_embeddings(emb_ckpt, data_cfg, emb_out);
            std::printf("embeddings written to %s\n", emb_out.c_str());
            return 0;
        }
        if (ds->parsed()) {
            dwl::ExperimentConfig cfg = dwl::load_config(ds_config);
            dwl::DomainDataset data = dwl::build_dataset(cfg.dataset, cfg.train.seed);
            dwl::export_dataset_csv(data, ds_out, ds_training_view);
            std::printf("dataset written to %s\n", ds_out.c_str());
            return 0;
        }
    } catch (const dwl::DivergenceError& e) {
        dwl::log_error(e.what());
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 3;
    } catch (const dwl::ConfigError& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return 2;
    } catch (const dwl::FormatError& e) {
        std::fprintf(stderr, "malformed input: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
