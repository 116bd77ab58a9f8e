#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "mitodpm/classifier/classifier.hpp"
#include "mitodpm/data/image.hpp"
#include "mitodpm/diffusion/diffusion.hpp"

namespace mitodpm::sweep {

// 0.0, 0.1, ..., 1.0
std::vector<double> default_grid();

struct SweepSeries {
    std::uint64_t seed = 0;
    std::vector<double> conditions;
    std::vector<ImagePatch> images;
    std::vector<double> scores;  // empty until scored
    bool accepted = false;

    bool scored() const { return !scores.empty(); }
};

struct CurveStats {
    std::vector<double> conditions;
    std::vector<double> mean;
    std::vector<double> median;
    std::vector<double> standard_error;  // sample stddev / sqrt(n)
    std::size_t n = 0;
};

struct SelectionThresholds {
    double start_max = 0.1;
    double end_min = 0.9;
    double step_max = 0.30;
};

// Throws ValidationError unless the grid is non-empty, ascending and in [0, 1].
void check_grid(std::span<const double> grid);

// One initial noise and one per-step noise stream are drawn from `seed`
// (ReverseNoise::draw with a [1, 3, S, S] shape) and shared by every
// condition, so the condition scalar is the only input that varies.
SweepSeries generate_sweep(const diffusion::EpsilonModel& model, const diffusion::NoiseSchedule& sched, int image_side,
                           std::uint64_t seed, std::span<const double> grid);

// Several seeds in one batched reverse chain; element i equals (up to batched
// kernel reassociation) generate_sweep with seeds[i].
std::vector<SweepSeries> generate_sweeps(const diffusion::EpsilonModel& model, const diffusion::NoiseSchedule& sched,
                                         int image_side, std::span<const std::uint64_t> seeds,
                                         std::span<const double> grid);

// scores[i] = ensemble probability of images[i].
SweepSeries score_series(SweepSeries series, const classifier::ClassifierEnsemble& ensemble);

// Strict: scores[0] < start_max, scores[last] > end_min, every |step| < step_max.
bool select(std::span<const double> scores, const SelectionThresholds& thresholds = {});
bool select(const SweepSeries& series, const SelectionThresholds& thresholds = {});

// Per-condition mean, median and standard error across series sharing a grid.
CurveStats curve_stats(std::span<const SweepSeries> series);

// Rows of tiles composed row-major into one [3, rows * cell, cols * cell]
// image. Tiles are resized to cell x cell (nearest neighbour).
torch::Tensor montage(const std::vector<std::vector<ImagePatch>>& rows, int cell_size);
torch::Tensor montage(std::span<const SweepSeries> series, int cell_size);

// Fills series.scores with the ensemble probability of every frame.
void score_transformation(diffusion::TransformationSeries& series, const classifier::ClassifierEnsemble& ensemble);

}  // namespace mitodpm::sweep
