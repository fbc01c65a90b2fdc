#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dwl/experiment.hpp"

using namespace dwl;
namespace fs = std::filesystem;

namespace {

fs::path temp_root() {
    auto dir = fs::temp_directory_path() / "dwl_experiment_tests";
    fs::create_directories(dir);
    return dir;
}

std::string tiny_config_text(const std::string& out_dir, std::uint64_t seed = 7,
                             std::size_t epochs = 3) {
    std::ostringstream os;
    os << R"({
  "dataset": {"type": "two-moons-shift", "n_source": 40, "n_target": 40,
              "rotation_degrees": 25.0, "noise_std": 0.1},
  "model": {"hidden_dim": 8, "feature_dim": 4},
  "optimizer": {"kind": "adam", "learning_rate": 0.002, "weight_decay": 0.0005},
  "train": {"epochs": )"
       << epochs << R"(, "warmup_epochs": 1, "batch_size": 16,
            "weighting_mode": "dynamic", "eval_subsample": 64},
  "seed": )"
       << seed << R"(,
  "output_dir": ")" << out_dir << R"("
})";
    return os.str();
}

std::string write_config(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    return path.string();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

TEST_CASE("config parsing, defaults, and overrides") {
    auto cfg = parse_config_text(tiny_config_text("runs/x"));
    CHECK(cfg.dataset.kind == DatasetSpec::Kind::two_moons_shift);
    CHECK(cfg.dataset.n_source == 40);
    CHECK(cfg.model.feature_dim == 4);
    CHECK(cfg.train.optimizer.kind == OptimizerKind::adam);
    CHECK(cfg.train.optimizer.weight_decay == 0.0005);
    CHECK(cfg.train.mode == WeightingMode::dynamic_tau);
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.output_dir == "runs/x");

    auto over = parse_config_text(tiny_config_text("runs/x"),
                                  {"train.epochs=9", "seed=123", "output_dir=runs/y",
                                   "train.weighting_mode=static:0.3"});
    CHECK(over.train.epochs == 9);
    CHECK(over.train.seed == 123);
    CHECK(over.output_dir == "runs/y");
    CHECK(over.train.mode == WeightingMode::static_tau);
    CHECK(over.train.tau_fixed == 0.3);

    CHECK_THROWS_AS(parse_config_text("{ not json"), FormatError);
    CHECK_THROWS_AS(parse_config_text("{}", {"badly-formed-override"}), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"train": {"weighting_mode": "what"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"dataset": {"type": "nope"}})"), ConfigError);
}

TEST_CASE("run: row-count contract and output files") {
    auto out = (temp_root() / "single").string();
    fs::remove_all(out);
    auto cfg = parse_config_text(tiny_config_text(out, 7, 1));
    RunResult r = run_experiment(cfg);
    CHECK(r.rows.size() == 1);

    auto rows = parse_csv(slurp(fs::path(out) / "metrics.csv"));
    REQUIRE(rows.size() == 2); // header + exactly one data row
    CHECK(rows[0][0] == "epoch");
    CHECK(rows[1][0] == "1");
    CHECK(fs::exists(fs::path(out) / "checkpoint.txt"));
    CHECK(fs::exists(fs::path(out) / "summary.json"));
    CHECK(fs::exists(fs::path(out) / "timing.csv"));
    CHECK_FALSE(fs::exists(fs::path(out) / "error.json"));
}

TEST_CASE("run: identical config and seed give byte-identical metrics") {
    auto out1 = (temp_root() / "det1").string();
    auto out2 = (temp_root() / "det2").string();
    fs::remove_all(out1);
    fs::remove_all(out2);
    run_experiment(parse_config_text(tiny_config_text(out1, 21, 4)));
    run_experiment(parse_config_text(tiny_config_text(out2, 21, 4)));
    CHECK(slurp(fs::path(out1) / "metrics.csv") == slurp(fs::path(out2) / "metrics.csv"));

    // different seed, different bytes
    auto out3 = (temp_root() / "det3").string();
    fs::remove_all(out3);
    run_experiment(parse_config_text(tiny_config_text(out3, 22, 4)));
    CHECK(slurp(fs::path(out1) / "metrics.csv") != slurp(fs::path(out3) / "metrics.csv"));
}

TEST_CASE("run: metrics schema parses and tau stays inside [0,1]") {
    auto out = (temp_root() / "schema").string();
    fs::remove_all(out);
    run_experiment(parse_config_text(tiny_config_text(out, 3, 6)));
    auto rows = parse_csv(slurp(fs::path(out) / "metrics.csv"));
    REQUIRE(rows.size() == 7);
    REQUIRE(rows[0].size() == 11);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 11);
        CHECK(std::stoul(rows[i][0]) == i);
        const double tau = std::stod(rows[i][4]);
        CHECK(tau >= 0.0);
        CHECK(tau <= 1.0);
        for (std::size_t c : {1u, 2u, 3u, 5u, 7u, 9u, 10u}) {
            if (!rows[i][c].empty()) (void)std::stod(rows[i][c]); // parses as a double
        }
    }
    // warm-up row carries tau = 0.5 and no normalized values
    CHECK(std::stod(rows[1][4]) == 0.5);
    CHECK(rows[1][6].empty());
    CHECK(rows[1][8].empty());
}

TEST_CASE("run: static tau 0.5 matches dynamic on the first adaptation epoch") {
    auto out_dyn = (temp_root() / "dyn").string();
    auto out_sta = (temp_root() / "sta").string();
    fs::remove_all(out_dyn);
    fs::remove_all(out_sta);
    auto dyn = parse_config_text(tiny_config_text(out_dyn, 11, 2)); // warmup 1 + 1 adaptation
    auto sta = parse_config_text(tiny_config_text(out_sta, 11, 2),
                                 {"train.weighting_mode=static:0.5"});
    auto r_dyn = run_experiment(dyn);
    auto r_sta = run_experiment(sta);
    const auto& a = r_dyn.rows[1];
    const auto& b = r_sta.rows[1];
    CHECK(a.tau == 0.5);
    CHECK(b.tau == 0.5);
    CHECK(a.loss_ce == b.loss_ce);
    CHECK(a.loss_da == b.loss_da);
    CHECK(a.loss_cd == b.loss_cd);
    CHECK(a.mmd_raw == b.mmd_raw);
}

TEST_CASE("run: validation failure leaves a machine-readable error record") {
    auto out = (temp_root() / "bad").string();
    fs::remove_all(out);
    auto cfg = parse_config_text(tiny_config_text(out));
    cfg.train.warmup_epochs = 0;
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
    CHECK(fs::exists(fs::path(out) / "error.json"));
    const std::string err = slurp(fs::path(out) / "error.json");
    CHECK(err.find("config") != std::string::npos);
}

TEST_CASE("ablation: grid counting and failure isolation") {
    auto out = (temp_root() / "ablate").string();
    fs::remove_all(out);
    auto base = parse_config_text(tiny_config_text((temp_root() / "ablate_base").string(), 5, 2));
    AblationGrid grid;
    grid.weighting_modes = {"dynamic", "static:0.5"};
    grid.sample_weighting = {true, false};
    auto cells = run_ablation(base, grid, 3, out);
    REQUIRE(cells.size() == 4); // 2 x 2 cells, 12 runs total
    std::size_t run_dirs = 0;
    for (const auto& cell_dir : fs::directory_iterator(out)) {
        if (!cell_dir.is_directory()) continue;
        for (const auto& seed_dir : fs::directory_iterator(cell_dir)) {
            if (seed_dir.is_directory()) ++run_dirs;
        }
    }
    CHECK(run_dirs == 12);
    for (const auto& c : cells) {
        CHECK(c.failures == 0);
        CHECK(c.seeds == 3);
        CHECK(c.mean_target_accuracy >= 0.0);
        CHECK(c.mean_target_accuracy <= 1.0);
    }
    auto table = parse_csv(slurp(fs::path(out) / "ablation.csv"));
    REQUIRE(table.size() == 5); // header + 4 cells

    // degenerate grid: identical cells, identical means
    AblationGrid degen;
    degen.weighting_modes = {"dynamic", "dynamic"};
    degen.sample_weighting = {true};
    auto out2 = (temp_root() / "ablate_degen").string();
    fs::remove_all(out2);
    auto cells2 = run_ablation(base, degen, 2, out2);
    REQUIRE(cells2.size() == 2);
    CHECK(cells2[0].mean_target_accuracy == cells2[1].mean_target_accuracy);

    // a failing cell is recorded while the sweep continues
    AblationGrid failing;
    failing.weighting_modes = {"static:1.5", "dynamic"}; // tau outside [0,1]
    failing.sample_weighting = {true};
    auto out3 = (temp_root() / "ablate_fail").string();
    fs::remove_all(out3);
    auto cells3 = run_ablation(base, failing, 2, out3);
    REQUIRE(cells3.size() == 2);
    CHECK(cells3[0].failures == 2);
    CHECK(cells3[1].failures == 0);
}

TEST_CASE("embedding export: shape contract, constant generator, determinism") {
    auto root = temp_root() / "export";
    fs::remove_all(root);
    fs::create_directories(root);

    // train a checkpoint with feature_dim 16 on 100+100 samples
    std::string cfg_text = R"({
  "dataset": {"type": "two-moons-shift", "n_source": 100, "n_target": 100, "noise_std": 0.1},
  "model": {"hidden_dim": 8, "feature_dim": 16},
  "train": {"epochs": 1, "warmup_epochs": 1, "batch_size": 32},
  "seed": 9,
  "output_dir": ")" + (root / "run").string() + R"("
})";
    auto cfg = parse_config_text(cfg_text);
    run_experiment(cfg);
    const std::string ckpt = (root / "run" / "checkpoint.txt").string();

    auto out_csv = root / "emb.csv";
    export_embeddings(ckpt, cfg, out_csv.string());
    auto rows = parse_csv(slurp(out_csv));
    REQUIRE(rows.size() == 201); // header + 100 source + 100 target
    CHECK(rows[0].size() == 18); // domain,label,feat0..feat15
    CHECK(rows[0][0] == "domain");
    CHECK(rows[0][17] == "feat15");
    CHECK(rows[1][0] == "source");
    CHECK(rows[101][0] == "target");

    // exporting twice gives identical bytes
    auto out_csv2 = root / "emb2.csv";
    export_embeddings(ckpt, cfg, out_csv2.string());
    CHECK(slurp(out_csv) == slurp(out_csv2));

    // a zero-weight generator maps every input to the same embedding
    DwlModel zero = load_checkpoint(ckpt);
    for (Parameter* p : zero.generator.parameters())
        std::fill(p->value.begin(), p->value.end(), 0.5);
    for (auto& layer : zero.generator.layers)
        std::fill(layer.weight.value.begin(), layer.weight.value.end(), 0.0);
    const std::string zero_ckpt = (root / "zero.txt").string();
    save_checkpoint(zero, zero_ckpt);
    auto out_csv3 = root / "emb3.csv";
    export_embeddings(zero_ckpt, cfg, out_csv3.string());
    auto zrows = parse_csv(slurp(out_csv3));
    for (std::size_t i = 2; i < zrows.size(); ++i) {
        for (std::size_t j = 2; j < zrows[i].size(); ++j) CHECK(zrows[i][j] == zrows[1][j]);
    }

    // dimension mismatch is rejected
    auto bad_cfg = cfg;
    bad_cfg.model.feature_dim = 4; // irrelevant: input dim comes from the dataset
    DwlModel other = init_model(5, 4, 4, 2, 1);
    const std::string bad_ckpt = (root / "bad.txt").string();
    save_checkpoint(other, bad_ckpt);
    CHECK_THROWS_AS(export_embeddings(bad_ckpt, cfg, (root / "x.csv").string()), ConfigError);
}

TEST_CASE("cli binary: exit codes and end-to-end run") {
    const std::string cli = DWL_CLI_PATH;
    auto root = temp_root() / "cli";
    fs::remove_all(root);
    fs::create_directories(root);

    auto run_cli = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    };

    // missing config file -> configuration failure (exit 2)
    CHECK(run_cli("run --config /nonexistent/config.json") == 2);

    // invalid config contents -> exit 2
    auto bad = write_config(root / "bad.json", R"({"train": {"warmup_epochs": 0}})");
    CHECK(run_cli("run --config " + bad) == 2);

    // healthy tiny run -> exit 0 and the expected files
    auto good = write_config(root / "good.json",
                             tiny_config_text((root / "out").string(), 2, 2));
    CHECK(run_cli("run --config " + good) == 0);
    CHECK(fs::exists(root / "out" / "metrics.csv"));
    CHECK(fs::exists(root / "out" / "summary.json"));

    // export-dataset round trip
    CHECK(run_cli("export-dataset --config " + good + " --out " + (root / "ds.csv").string() +
                  " --training-view") == 0);
    auto ds_rows = parse_csv(slurp(root / "ds.csv"));
    CHECK(ds_rows.size() == 81); // header + 40 + 40
    CHECK(ds_rows[0][0] == "domain");

    // export-embeddings through the CLI
    CHECK(run_cli("export-embeddings --checkpoint " + (root / "out" / "checkpoint.txt").string() +
                  " --data " + good + " --out " + (root / "emb.csv").string()) == 0);
    CHECK(fs::exists(root / "emb.csv"));
}
