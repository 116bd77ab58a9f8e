#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mitodpm/classifier/classifier.hpp"
#include "mitodpm/diffusion/denoiser.hpp"
#include "mitodpm/diffusion/trainer.hpp"
#include "mitodpm/sweep/sweep.hpp"

namespace mitodpm::cli {

namespace fs = std::filesystem;

// Where a command writes. An explicit `out` wins; otherwise a fresh directory
// <runs_root>/<UTC timestamp>-<config hash> is created.
struct RunLocation {
    std::optional<fs::path> out;
    fs::path runs_root = "runs";
    bool force = false;
};

struct MakeToyOptions {
    RunLocation location;
    int n = 2000;
    std::uint64_t seed = 0;
    int side = 32;
    int slides = 4;
};

struct TrainDpmOptions {
    RunLocation location;
    fs::path data;
    std::optional<fs::path> resume;
    int timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    diffusion::DenoiserConfig denoiser;
    diffusion::TrainConfig train;
    bool binary_labels = false;  // condition on label > 0.5 instead of the continuous label
    int log_every = 50;
    int checkpoint_every = 0;  // 0: only at the end
};

struct TrainClfOptions {
    RunLocation location;
    fs::path data;
    std::optional<fs::path> test;
    classifier::ClassifierConfig classifier;
    double threshold = 0.5;
};

struct EvaluateOptions {
    fs::path classifier;
    fs::path data;
    double threshold = 0.5;
    std::string run_id = "eval";
};

struct SweepOptions {
    RunLocation location;
    fs::path dpm;
    fs::path classifier;
    int n_seeds = 100;
    std::uint64_t first_seed = 0;
    std::vector<double> grid = sweep::default_grid();
    sweep::SelectionThresholds thresholds;
    int batch_seeds = 8;  // seeds per batched reverse chain
    int cell_size = 64;
};

struct TransformOptions {
    RunLocation location;
    fs::path dpm;
    fs::path classifier;
    fs::path inputs;  // annotation table; only negatives (label <= max_label) are used
    int count = 6;
    double max_label = 0.5;
    std::vector<int> stop_times;  // empty: n_stops evenly spaced over [0, T]
    int n_stops = 8;
    double condition = 1.0;
    std::uint64_t seed = 0;
    double tau = 0.5;
    int cell_size = 64;
};

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    fs::path data_dir;
    std::vector<fs::path> patches;
    std::vector<fs::path> series;
};

// Each returns the run directory it wrote.
fs::path cmd_make_toy(const MakeToyOptions& options);
fs::path cmd_train_dpm(const TrainDpmOptions& options);
fs::path cmd_train_clf(const TrainClfOptions& options);
classifier::Metrics cmd_evaluate(const EvaluateOptions& options);
fs::path cmd_sweep(const SweepOptions& options);
fs::path cmd_transform(const TransformOptions& options);
// Blocks until SIGINT or SIGTERM, then snapshots the store. Returns the exit code.
int cmd_serve(const ServeOptions& options);

std::string code_version();

}  // namespace mitodpm::cli
