#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dwl/data.hpp"
#include "dwl/metrics.hpp"

using namespace dwl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "dwl_data_tests";
    fs::create_directories(dir);
    return dir;
}

void write_idx_pair(const fs::path& images, const fs::path& labels,
                    const std::vector<std::vector<unsigned char>>& imgs,
                    const std::vector<unsigned char>& labs, std::size_t rows, std::size_t cols,
                    std::uint32_t img_magic = 0x00000803, std::uint32_t lab_magic = 0x00000801) {
    auto be32 = [](std::ofstream& out, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    {
        std::ofstream out(images, std::ios::binary);
        be32(out, img_magic);
        be32(out, static_cast<std::uint32_t>(imgs.size()));
        be32(out, static_cast<std::uint32_t>(rows));
        be32(out, static_cast<std::uint32_t>(cols));
        for (const auto& im : imgs) out.write(reinterpret_cast<const char*>(im.data()), im.size());
    }
    {
        std::ofstream out(labels, std::ios::binary);
        be32(out, lab_magic);
        be32(out, static_cast<std::uint32_t>(labs.size()));
        out.write(reinterpret_cast<const char*>(labs.data()), labs.size());
    }
}

} // namespace

TEST_CASE("two moons: identity shift keeps the domains aligned") {
    TwoMoonsSpec spec;
    spec.n_source = 2000;
    spec.n_target = 2000;
    spec.noise_std = 0.05;
    spec.seed = 21;
    DomainDataset d = make_two_moons_shift(spec);
    CHECK(d.n_source() == 2000);
    CHECK(d.n_target() == 2000);
    CHECK(d.num_classes == 2);
    CHECK(mmd(d.source_features, d.target_features) < 0.01); // sampling noise only
}

TEST_CASE("two moons: rotation and translation act on clean coordinates") {
    TwoMoonsSpec rotated;
    rotated.n_source = 40;
    rotated.n_target = 40;
    rotated.rotation_degrees = 30.0;
    rotated.translation_x = 1.5;
    rotated.translation_y = -0.25;
    rotated.noise_std = 0.0;
    rotated.seed = 3;
    TwoMoonsSpec plain = rotated;
    plain.rotation_degrees = 0.0;
    plain.translation_x = 0.0;
    plain.translation_y = 0.0;

    DomainDataset a = make_two_moons_shift(rotated);
    DomainDataset b = make_two_moons_shift(plain);
    const double c = std::cos(30.0 * M_PI / 180.0), s = std::sin(30.0 * M_PI / 180.0);
    for (std::size_t i = 0; i < a.n_target(); ++i) {
        const double x = b.target_features.at(i, 0), y = b.target_features.at(i, 1);
        CHECK(a.target_features.at(i, 0) == doctest::Approx(c * x - s * y + 1.5).epsilon(1e-12));
        CHECK(a.target_features.at(i, 1) == doctest::Approx(s * x + c * y - 0.25).epsilon(1e-12));
    }
    // the spec example: (1,0) rotates to (cos30, sin30)
    // clean grid point t=0 of the upper moon is exactly (1,0)
    CHECK(b.target_features.at(0, 0) == 1.0);
    CHECK(b.target_features.at(0, 1) == 0.0);
    DomainDataset rot_only = make_two_moons_shift([&] {
        TwoMoonsSpec s2 = rotated;
        s2.translation_x = 0.0;
        s2.translation_y = 0.0;
        return s2;
    }());
    CHECK(rot_only.target_features.at(0, 0) == doctest::Approx(0.8660254).epsilon(1e-6));
    CHECK(rot_only.target_features.at(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("two moons: bookkeeping and determinism") {
    TwoMoonsSpec spec;
    spec.n_source = 200;
    spec.n_target = 800;
    spec.noise_std = 0.1;
    spec.seed = 9;
    DomainDataset a = make_two_moons_shift(spec);
    CHECK(a.n_source() == 200);
    CHECK(a.n_target() == 800);
    DomainDataset b = make_two_moons_shift(spec);
    for (std::size_t i = 0; i < a.source_features.size(); ++i) {
        CHECK(a.source_features.at(i) == b.source_features.at(i));
    }
    CHECK_THROWS_AS(make_two_moons_shift(TwoMoonsSpec{.n_source = 2}), ConfigError);
}

TEST_CASE("idx loader: truncation contract and scaling") {
    auto dir = temp_dir();
    auto img = dir / "im.idx", lab = dir / "lb.idx";
    std::vector<std::vector<unsigned char>> imgs = {
        {0, 0, 0, 0}, {255, 0, 255, 0}, {1, 2, 3, 4}, {9, 9, 9, 9}};
    write_idx_pair(img, lab, imgs, {0, 1, 2, 3}, 2, 2);

    IdxData all = load_idx(img.string(), lab.string());
    CHECK(all.features.rows() == 4);
    CHECK(all.features.cols() == 4);
    CHECK(all.labels == std::vector<int>{0, 1, 2, 3});
    for (std::size_t j = 0; j < 4; ++j) CHECK(all.features.at(0, j) == 0.0); // zero bytes
    CHECK(all.features.at(1, 0) == 1.0);
    CHECK(all.features.at(2, 3) == doctest::Approx(4.0 / 255.0));

    IdxData two = load_idx(img.string(), lab.string(), 2);
    CHECK(two.features.rows() == 2);
    CHECK(two.labels.size() == 2);
}

TEST_CASE("idx loader: format errors") {
    auto dir = temp_dir();
    auto img = dir / "bad_im.idx", lab = dir / "bad_lb.idx";

    // labels file carrying the images magic
    write_idx_pair(img, lab, {{0, 0, 0, 0}}, {7}, 2, 2, 0x00000803, 0x00000803);
    CHECK_THROWS_AS(load_idx(img.string(), lab.string()), FormatError);

    // images with labels magic
    write_idx_pair(img, lab, {{0, 0, 0, 0}}, {7}, 2, 2, 0x00000801, 0x00000801);
    CHECK_THROWS_AS(load_idx(img.string(), lab.string()), FormatError);

    // count mismatch
    write_idx_pair(img, lab, {{0, 0, 0, 0}}, {7, 8}, 2, 2);
    CHECK_THROWS_AS(load_idx(img.string(), lab.string()), FormatError);

    // truncated image payload
    write_idx_pair(img, lab, {{0, 0, 0}}, {7}, 2, 2);
    CHECK_THROWS_AS(load_idx(img.string(), lab.string()), FormatError);

    CHECK_THROWS_AS(load_idx("/nonexistent/x", "/nonexistent/y"), Error);
}

TEST_CASE("sample weighting: formula cases") {
    auto w = weight_samples(100, 100, 0.5);
    CHECK(w.w_source == 1.0);
    CHECK(w.w_target == 1.0);

    w = weight_samples(100, 300, 1.0);
    CHECK(w.w_source == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(w.w_target == doctest::Approx(4.0 / 3.0).epsilon(1e-15));

    w = weight_samples(300, 100, 1.0);
    CHECK(w.w_source == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(w.w_target == doctest::Approx(4.0).epsilon(1e-15));

    CHECK_THROWS_AS(weight_samples(10, 10, 0.0), ConfigError);
    CHECK_THROWS_AS(weight_samples(10, 10, 1.5), ConfigError);
    CHECK_THROWS_AS(weight_samples(10, 10, -0.1), ConfigError);
}

TEST_CASE("sample weighting: weighted mass ratio lands on 1/2") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> size(1, 5000);
    std::uniform_real_distribution<double> adist(0.01, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t ns = size(rng), nt = size(rng);
        const double a = adist(rng);
        auto w = weight_samples(ns, nt, a);
        const double weighted =
            w.w_source * ns / (w.w_source * ns + w.w_target * nt);
        const double unweighted = static_cast<double>(ns) / static_cast<double>(ns + nt);
        CHECK(std::abs(weighted - 0.5) < 1e-12);
        if (ns != nt) {
            CHECK(std::abs(weighted - 0.5) < std::abs(unweighted - 0.5)); // strictly closer
        }
    }
}

TEST_CASE("sample weighting: scaling commutes with input scaling") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-2, 2);
    std::vector<double> vals(20);
    for (auto& v : vals) v = dist(rng);
    Tensor x({5, 4}, vals);
    const double k = 3.7;
    Tensor a = scale_inputs(affine(x, k, 0.0), 2.5);
    Tensor b = affine(scale_inputs(x, 2.5), k, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-14));
    }
}

TEST_CASE("batching: counts, weighting identity, determinism") {
    TwoMoonsSpec spec;
    spec.n_source = 10;
    spec.n_target = 10;
    spec.noise_std = 0.01;
    spec.seed = 5;
    DomainDataset d = make_two_moons_shift(spec);
    TrainView view = train_view(d);

    EpochBatcher batcher(view, 4, 0.5, true, 77);
    CHECK(batcher.batches_per_epoch() == 3);
    auto batches = batcher.next_epoch();
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].source_inputs.rows() == 4);
    CHECK(batches[1].source_inputs.rows() == 4);
    CHECK(batches[2].source_inputs.rows() == 2); // ceil split, smaller tail
    CHECK(batches[2].target_inputs.rows() == 2);

    // balanced domains with a = 0.5: weighting is the identity
    CHECK(batches[0].w_source == 1.0);
    CHECK(batches[0].w_target == 1.0);
    std::multiset<double> raw(d.source_features.values().begin(),
                              d.source_features.values().end());
    std::multiset<double> seen;
    for (const auto& b : batches)
        seen.insert(b.source_inputs.values().begin(), b.source_inputs.values().end());
    CHECK(raw == seen); // inputs equal raw inputs, just reordered

    // same seed, same order
    EpochBatcher b1(view, 4, 0.5, true, 123), b2(view, 4, 0.5, true, 123);
    auto e1 = b1.next_epoch(), e2 = b2.next_epoch();
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1[i].source_labels == e2[i].source_labels);
        for (std::size_t j = 0; j < e1[i].target_inputs.size(); ++j) {
            CHECK(e1[i].target_inputs.at(j) == e2[i].target_inputs.at(j));
        }
    }
    // epochs reshuffle
    auto e1b = b1.next_epoch();
    bool same = true;
    for (std::size_t i = 0; i < e1.size() && same; ++i) {
        for (std::size_t j = 0; j < e1[i].source_inputs.size(); ++j) {
            if (e1[i].source_inputs.at(j) != e1b[i].source_inputs.at(j)) {
                same = false;
                break;
            }
        }
    }
    CHECK_FALSE(same);
}

TEST_CASE("batching: oversize batch yields the full domain") {
    TwoMoonsSpec spec;
    spec.n_source = 6;
    spec.n_target = 20;
    spec.seed = 2;
    DomainDataset d = make_two_moons_shift(spec);
    TrainView view = train_view(d);
    EpochBatcher batcher(view, 8, 1.0, true, 1);
    auto batches = batcher.next_epoch();
    REQUIRE(batches.size() == 3); // ceil(20/8)
    CHECK(batches[0].source_inputs.rows() == 6); // capped at the full domain
    CHECK(batches[0].target_inputs.rows() == 8);
    CHECK(batches[2].target_inputs.rows() == 4);

    CHECK_THROWS_AS(EpochBatcher(view, 1, 0.5, true, 1), ConfigError);
}

TEST_CASE("batching: weighted inputs are scaled raw inputs") {
    TwoMoonsSpec spec;
    spec.n_source = 30;
    spec.n_target = 90;
    spec.seed = 31;
    DomainDataset d = make_two_moons_shift(spec);
    TrainView view = train_view(d);
    EpochBatcher batcher(view, 16, 1.0, true, 8);
    auto w = weight_samples(30, 90, 1.0);
    auto batches = batcher.next_epoch();
    // every weighted value must be w * some raw value of the right domain
    std::multiset<double> raw;
    for (double v : d.target_features.values()) raw.insert(v * w.w_target);
    for (double v : batches[0].target_inputs.values()) {
        bool found = false;
        for (double r : raw) {
            if (std::abs(v - r) < 1e-12) {
                found = true;
                break;
            }
        }
        CHECK(found);
    }
}

template <typename T>
concept ExposesTargetLabels = requires(T v) { v.target_labels_eval_only; };

TEST_CASE("train view exposes no target labels") {
    static_assert(!ExposesTargetLabels<TrainView>);
    static_assert(ExposesTargetLabels<DomainDataset>);
    TwoMoonsSpec spec;
    spec.seed = 1;
    DomainDataset d = make_two_moons_shift(spec);
    REQUIRE(d.target_labels_eval_only.has_value()); // dataset keeps them for scoring
    TrainView v = train_view(d);
    CHECK(v.n_target() == d.n_target());
}

TEST_CASE("dataset csv export") {
    TwoMoonsSpec spec;
    spec.n_source = 5;
    spec.n_target = 4;
    spec.seed = 11;
    DomainDataset d = make_two_moons_shift(spec);
    auto dir = temp_dir();
    auto train_path = dir / "train.csv";
    auto full_path = dir / "full.csv";
    export_dataset_csv(d, train_path.string(), true);
    export_dataset_csv(d, full_path.string(), false);

    std::ifstream in(train_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "domain,label,f0,f1");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    REQUIRE(lines.size() == 9);
    CHECK(lines[0].substr(0, 7) == "source,");
    CHECK(lines[5].substr(0, 8) == "target,,"); // blank label in the training view

    std::ifstream in2(full_path);
    std::getline(in2, header);
    std::vector<std::string> lines2;
    for (std::string line; std::getline(in2, line);) lines2.push_back(line);
    CHECK(lines2[5].substr(0, 8) != "target,,"); // eval labels present in the full view
    CHECK(lines2[5].substr(0, 7) == "target,");
}
