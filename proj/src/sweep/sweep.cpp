#include "mitodpm/sweep/sweep.hpp"

#include <cmath>

#include "mitodpm/errors.hpp"
#include "mitodpm/random.hpp"
#include "mitodpm/stats.hpp"

namespace mitodpm::sweep {

std::vector<double> default_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    return grid;
}

void check_grid(std::span<const double> grid) {
    if (grid.empty()) throw ValidationError("condition grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw ValidationError("condition grid values must lie in [0, 1]");
        if (i && grid[i] < grid[i - 1]) throw ValidationError("condition grid must be ascending");
    }
}

std::vector<SweepSeries> generate_sweeps(const diffusion::EpsilonModel& model, const diffusion::NoiseSchedule& sched,
                                         int image_side, std::span<const std::uint64_t> seeds,
                                         std::span<const double> grid) {
    check_grid(grid);
    if (seeds.empty()) return {};
    const int T = sched.timesteps();
    const auto columns = static_cast<int64_t>(grid.size());
    const std::vector<int64_t> shape{1, 3, image_side, image_side};

    std::vector<diffusion::ReverseNoise> noises;
    noises.reserve(seeds.size());
    for (auto seed : seeds) {
        auto gen = make_generator(seed);
        noises.push_back(diffusion::ReverseNoise::draw(shape, T, gen));
    }
    auto spread = [&](auto&& pick) {
        std::vector<torch::Tensor> parts;
        parts.reserve(noises.size());
        for (const auto& n : noises) parts.push_back(pick(n).expand({columns, 3, image_side, image_side}));
        return torch::cat(parts, 0);
    };

    const auto grid_tensor = torch::tensor(std::vector<double>(grid.begin(), grid.end()), torch::kFloat32);
    const auto conditions = grid_tensor.repeat({static_cast<int64_t>(seeds.size())});
    const auto x_T = spread([](const diffusion::ReverseNoise& n) -> const torch::Tensor& { return n.initial; });
    const auto out = diffusion::reverse_chain(model, sched, x_T, T, conditions, [&](int t) {
        return spread([t](const diffusion::ReverseNoise& n) -> const torch::Tensor& { return n.at(t); });
    });

    std::vector<SweepSeries> result(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        result[s].seed = seeds[s];
        result[s].conditions.assign(grid.begin(), grid.end());
        for (int64_t c = 0; c < columns; ++c) {
            result[s].images.push_back(ImagePatch::from_tensor(out[static_cast<int64_t>(s) * columns + c]));
        }
    }
    return result;
}

SweepSeries generate_sweep(const diffusion::EpsilonModel& model, const diffusion::NoiseSchedule& sched, int image_side,
                           std::uint64_t seed, std::span<const double> grid) {
    const std::uint64_t seeds[] = {seed};
    return std::move(generate_sweeps(model, sched, image_side, seeds, grid).front());
}

SweepSeries score_series(SweepSeries series, const classifier::ClassifierEnsemble& ensemble) {
    if (series.images.empty()) throw ValidationError("cannot score an empty series");
    const auto probs = ensemble.predict_batch(stack_patches(series.images));
    series.scores.resize(series.images.size());
    for (std::size_t i = 0; i < series.scores.size(); ++i) series.scores[i] = probs[static_cast<int64_t>(i)].item<double>();
    return series;
}

bool select(std::span<const double> scores, const SelectionThresholds& th) {
    if (scores.empty()) throw StateError("selection needs a scored series");
    if (!(scores.front() < th.start_max) || !(scores.back() > th.end_min)) return false;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (!(std::abs(scores[i] - scores[i - 1]) < th.step_max)) return false;
    }
    return true;
}

bool select(const SweepSeries& series, const SelectionThresholds& th) { return select(series.scores, th); }

CurveStats curve_stats(std::span<const SweepSeries> series) {
    if (series.empty()) throw ValidationError("curve statistics need at least one series");
    CurveStats out;
    out.conditions = series.front().conditions;
    out.n = series.size();
    for (const auto& s : series) {
        if (s.conditions != out.conditions) throw ValidationError("curve statistics need every series on one grid");
        if (s.scores.size() != out.conditions.size()) throw StateError("curve statistics need scored series");
    }
    std::vector<double> column(series.size());
    for (std::size_t c = 0; c < out.conditions.size(); ++c) {
        for (std::size_t i = 0; i < series.size(); ++i) column[i] = series[i].scores[c];
        out.mean.push_back(stats::mean(column));
        out.median.push_back(stats::median(column));
        out.standard_error.push_back(stats::sample_stddev(column) / std::sqrt(static_cast<double>(series.size())));
    }
    return out;
}

torch::Tensor montage(const std::vector<std::vector<ImagePatch>>& rows, int cell_size) {
    if (rows.empty() || rows.front().empty()) throw ValidationError("montage needs at least one non-empty row");
    if (cell_size < 1) throw ValidationError("montage cell size must be positive");
    const auto cols = rows.front().size();
    namespace F = torch::nn::functional;
    std::vector<torch::Tensor> row_images;
    for (const auto& row : rows) {
        if (row.size() != cols) throw ValidationError("montage rows must have equal length");
        auto tiles = stack_patches(row);
        if (tiles.size(2) != cell_size) {
            tiles = F::interpolate(tiles, F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{cell_size, cell_size})
                                              .mode(torch::kNearest));
        }
        row_images.push_back(torch::cat(tiles.unbind(0), 2));
    }
    return torch::cat(row_images, 1).contiguous();
}

torch::Tensor montage(std::span<const SweepSeries> series, int cell_size) {
    std::vector<std::vector<ImagePatch>> rows;
    for (const auto& s : series) rows.push_back(s.images);
    return montage(rows, cell_size);
}

void score_transformation(diffusion::TransformationSeries& series, const classifier::ClassifierEnsemble& ensemble) {
    if (series.outputs.empty()) throw ValidationError("cannot score an empty transformation series");
    const auto probs = ensemble.predict_batch(stack_patches(series.outputs));
    series.scores.resize(series.outputs.size());
    for (std::size_t i = 0; i < series.scores.size(); ++i) series.scores[i] = probs[static_cast<int64_t>(i)].item<double>();
}

}  // namespace mitodpm::sweep
