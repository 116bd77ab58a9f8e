#include <torch/torch.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mitodpm/csv.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/png_io.hpp"
#include "mitodpm/random.hpp"
#include "mitodpm/sweep/archive.hpp"
#include "mitodpm/sweep/sweep.hpp"
#include "temp_dir.hpp"

using namespace mitodpm;
using namespace mitodpm::sweep;

namespace {

// Pushes samples toward brightness 2c - 1, so the condition shows up in pixels.
diffusion::EpsilonModel condition_model() {
    return [](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor& c) {
        auto target = (c * 2 - 1).view({-1, 1, 1, 1});
        return (x - target) * 0.5f;
    };
}

// Score = mean brightness mapped to [0, 1].
classifier::ClassifierEnsemble brightness_ensemble(int side) {
    return classifier::ClassifierEnsemble(
        {side, side}, {[](const torch::Tensor& images) { return (images.mean({1, 2, 3}) + 1) / 2; }});
}

std::vector<double> v(std::initializer_list<double> x) { return x; }

std::size_t csv_rows(const std::filesystem::path& p) { return csv::Table::read_file(p.string()).rows(); }

}  // namespace

TEST_CASE("default grid is eleven steps of 0.1") {
    auto g = default_grid();
    REQUIRE(g.size() == 11);
    CHECK(g.front() == 0.0);
    CHECK(g[3] == doctest::Approx(0.3));
    CHECK(g.back() == 1.0);
    CHECK_NOTHROW(check_grid(g));
    CHECK_THROWS_AS(check_grid(v({})), ValidationError);
    CHECK_THROWS_AS(check_grid(v({0.5, 0.2})), ValidationError);
    CHECK_THROWS_AS(check_grid(v({0.0, 1.1})), ValidationError);
}

TEST_CASE("selection clauses are strict") {
    CHECK(select(v({0.05, 0.3, 0.55, 0.8, 0.95})));
    CHECK_FALSE(select(v({0.1, 0.3, 0.55, 0.8, 0.95})));    // start not < 0.1
    CHECK_FALSE(select(v({0.05, 0.3, 0.55, 0.8, 0.9})));    // end not > 0.9
    CHECK_FALSE(select(v({0.0, 0.3, 0.55, 0.8, 0.95})));    // 0.30 step not < 0.30
    CHECK_FALSE(select(v({0.05, 0.95})));                   // one large jump
    CHECK(select(v({0.09, 0.91}), {0.1, 0.9, 0.9}));
    CHECK_THROWS_AS(select(v({})), StateError);
    SweepSeries unscored;
    CHECK_THROWS_AS(select(unscored), StateError);
}

TEST_CASE("curve statistics per condition") {
    std::vector<SweepSeries> s(3);
    std::vector<std::vector<double>> scores{{0.1, 0.5}, {0.2, 0.7}, {0.6, 0.9}};
    for (int i = 0; i < 3; ++i) {
        s[i].conditions = {0.0, 1.0};
        s[i].scores = scores[i];
    }
    auto c = curve_stats(s);
    CHECK(c.n == 3);
    CHECK(c.mean[0] == doctest::Approx(0.3));
    CHECK(c.median[1] == doctest::Approx(0.7));
    // sample stddev of {0.5, 0.7, 0.9} is 0.2
    CHECK(c.standard_error[1] == doctest::Approx(0.2 / std::sqrt(3.0)));

    s[1].conditions = {0.0, 0.5};
    CHECK_THROWS_AS(curve_stats(s), ValidationError);
    s[1].conditions = {0.0, 1.0};
    s[2].scores.clear();
    CHECK_THROWS_AS(curve_stats(s), StateError);
    CHECK_THROWS_AS(curve_stats(std::vector<SweepSeries>{}), ValidationError);
}

TEST_CASE("montage lays tiles out row-major at the cell size") {
    auto dark = ImagePatch::from_tensor(torch::full({3, 4, 4}, -1.0f));
    auto light = ImagePatch::from_tensor(torch::full({3, 4, 4}, 1.0f));
    auto m = montage({{dark, light, dark}, {light, dark, light}}, 8);
    CHECK(m.sizes() == torch::IntArrayRef({3, 16, 24}));
    CHECK(m[0][0][0].item<float>() == -1.0f);
    CHECK(m[0][0][8].item<float>() == 1.0f);
    CHECK(m[0][8][0].item<float>() == 1.0f);
    CHECK(m[0][15][23].item<float>() == 1.0f);
    CHECK_THROWS_AS(montage({{dark}, {dark, light}}, 8), ValidationError);
    CHECK_THROWS_AS(montage(std::vector<std::vector<ImagePatch>>{}, 8), ValidationError);
}

TEST_CASE("sweeps share noise across conditions and batch consistently") {
    auto sched = diffusion::make_schedule(12, 1e-3, 0.2);
    auto grid = default_grid();
    auto one = generate_sweep(condition_model(), sched, 8, 5, grid);
    REQUIRE(one.images.size() == 11);
    CHECK(one.seed == 5);
    CHECK(one.conditions == grid);

    // The condition is the only varying input: a condition-blind model yields identical frames.
    auto blind = [](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) { return x * 0.1f; };
    auto flat = generate_sweep(blind, sched, 8, 5, grid);
    for (const auto& img : flat.images) CHECK(img == flat.images.front());

    std::vector<std::uint64_t> seeds{4, 5, 6};
    auto many = generate_sweeps(condition_model(), sched, 8, seeds, grid);
    REQUIRE(many.size() == 3);
    for (std::size_t c = 0; c < grid.size(); ++c) {
        CHECK(torch::allclose(many[1].images[c].tensor(), one.images[c].tensor(), 1e-5, 1e-6));
    }
    CHECK_FALSE(many[0].images[0] == many[1].images[0]);

    auto again = generate_sweep(condition_model(), sched, 8, 5, grid);
    for (std::size_t c = 0; c < grid.size(); ++c) CHECK(again.images[c] == one.images[c]);
}

TEST_CASE("scored sweeps rise with the condition for a condition-following model") {
    auto sched = diffusion::make_schedule(12, 1e-3, 0.2);
    auto scored = score_series(generate_sweep(condition_model(), sched, 8, 1, default_grid()), brightness_ensemble(8));
    REQUIRE(scored.scores.size() == 11);
    CHECK(scored.scores.back() > scored.scores.front());
    CHECK_THROWS_AS(score_series(SweepSeries{}, brightness_ensemble(8)), ValidationError);
}

TEST_CASE("sweep archive layout and accepted-only montage") {
    TempDir dir;
    std::vector<SweepSeries> series(10);
    for (std::size_t i = 0; i < series.size(); ++i) {
        series[i].seed = i;
        series[i].conditions = default_grid();
        for (std::size_t c = 0; c < 11; ++c) {
            series[i].images.push_back(ImagePatch::zeros(8));
            series[i].scores.push_back(i < 3 ? 0.05 + 0.09 * static_cast<double>(c) : 0.5);
        }
        series[i].accepted = select(series[i]);
    }
    auto curve = curve_stats(series);
    write_sweep_archive(dir.path(), series, curve, {{"note", "test"}}, 16);

    std::size_t pngs = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "images")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 110);
    CHECK(csv_rows(dir / "scores.csv") == 110);
    CHECK(csv_rows(dir / "curve.csv") == 11);
    auto m = read_png((dir / "montage_accepted.png").string());
    CHECK(m.width == 11 * 16);
    CHECK(m.height == 3 * 16);  // only the three accepted series
    std::ifstream in(dir / "manifest.json");
    auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["note"] == "test");
    CHECK(manifest["accepted"] == 3);
    CHECK(manifest["series"] == 10);

    auto table = csv::Table::read_file((dir / "scores.csv").string());
    CHECK(table.cell(0, "condition") == "0.00");
    CHECK(table.cell(0, "accepted") == "1");
    CHECK(table.cell(110 - 1, "accepted") == "0");

    TempDir none;
    for (auto& s : series) s.accepted = false;
    write_sweep_archive(none.path(), series, curve, {}, 16);
    CHECK_FALSE(std::filesystem::exists(none / "montage_accepted.png"));
}

TEST_CASE("transform archive layout") {
    TempDir dir;
    auto sched = diffusion::make_schedule(12, 1e-3, 0.2);
    std::vector<ImagePatch> inputs;
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 6; ++i) {
        auto g = make_generator(i);
        inputs.push_back(ImagePatch::from_tensor(torch::rand({3, 8, 8}, g) * 2 - 1));
        seeds.push_back(i);
    }
    auto stops = diffusion::stop_time_grid(12, 8);
    REQUIRE(stops.size() == 8);
    auto series = diffusion::edit_series_batch(inputs, stops, 1.0, condition_model(), sched, seeds);
    auto ens = brightness_ensemble(8);
    for (std::size_t i = 0; i < series.size(); ++i) {
        series[i].id = "cell" + std::to_string(i);
        score_transformation(series[i], ens);
        CHECK(series[i].outputs.front() == inputs[i]);
    }
    write_transform_archive(dir.path(), series, 0.5, {}, 8);

    std::size_t frames = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "frames")) {
        frames += std::regex_search(e.path().filename().string(), std::regex(R"(_s\d+\.png$)"));
    }
    CHECK(frames == 48);
    CHECK(csv_rows(dir / "scores.csv") == 48);
    CHECK(csv_rows(dir / "thresholds.csv") == 6);
    auto m = read_png((dir / "montage.png").string());
    CHECK(m.width == 8 * 8);
    CHECK(m.height == 6 * 8);
    // Stop time 0 frames are the inputs, byte for byte after quantisation.
    CHECK(read_bytes((dir / "frames" / "cell2_s0.png").string()) == read_bytes((dir / "frames" / "cell2_source.png").string()));

    std::ifstream in(dir / "series" / "cell0.json");
    auto doc = nlohmann::json::parse(in);
    CHECK(doc["frames"].size() == 8);
    CHECK(doc["stop_times"].get<std::vector<int>>() == stops);
}
