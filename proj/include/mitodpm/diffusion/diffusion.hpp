#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mitodpm/data/image.hpp"
#include "mitodpm/diffusion/denoiser.hpp"
#include "mitodpm/diffusion/schedule.hpp"

namespace mitodpm::diffusion {

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
// Inputs are raw tensors because the noisy state leaves [-1, 1].
torch::Tensor q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& sched);
// Per-item timesteps: x0 and eps [B, ...], t [B] int64.
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);

// One forward step x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
torch::Tensor q_step(const torch::Tensor& x_prev, int t, const torch::Tensor& eps, const NoiseSchedule& sched);

// Epsilon-prediction objective. Draw order from `rng`: t ~ U{1..T} for every
// item, then eps ~ N(0, I) with the batch's shape. Returns the mean squared
// error as a scalar tensor that carries gradients.
torch::Tensor training_loss(const EpsilonModel& model, const torch::Tensor& images, const torch::Tensor& conditions,
                            const NoiseSchedule& sched, torch::Generator& rng);

// Throws ValidationError unless every condition lies in [0, 1].
void check_conditions(const torch::Tensor& conditions);

// Supplies the noise z_t added at reverse step t (t >= 2).
using StepNoise = std::function<torch::Tensor(int t)>;

// Materialised noise for one ancestral sampling run.
struct ReverseNoise {
    torch::Tensor initial;             // x_T
    std::vector<torch::Tensor> steps;  // steps[t - 2] is z_t, t = 2..T

    // Draws initial first, then z_T, z_{T-1}, ..., z_2.
    static ReverseNoise draw(torch::IntArrayRef shape, int timesteps, torch::Generator& rng);
    const torch::Tensor& at(int t) const { return steps.at(static_cast<std::size_t>(t - 2)); }
    StepNoise as_step_noise() const;
};

// Ancestral chain from `start` down to 1:
//   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t) + sqrt(beta_t) z_t
// with z_1 = 0. Only the final output is clamped to [-1, 1]. Noise tensors may
// have batch size 1 and are broadcast over the batch.
torch::Tensor reverse_chain(const EpsilonModel& model, const NoiseSchedule& sched, torch::Tensor x, int start,
                            const torch::Tensor& conditions, const StepNoise& noise);

// Batched generation, one condition per batch row. noise.initial may be
// [1, 3, S, S], in which case every row shares it.
torch::Tensor sample_batch(const EpsilonModel& model, const NoiseSchedule& sched, const torch::Tensor& conditions,
                           const ReverseNoise& noise);

ImagePatch sample(const EpsilonModel& model, const NoiseSchedule& sched, double condition, const ReverseNoise& noise);

// Corrupts x_real to stop time s with q_sample and runs the reverse chain back
// under `condition`. s = 0 returns the input untouched and draws nothing.
// Draw order: eps for q_sample, then z_s, ..., z_2.
ImagePatch partial_edit(const ImagePatch& x_real, int stop_time, double condition, const EpsilonModel& model,
                        const NoiseSchedule& sched, torch::Generator& rng);

struct TransformationSeries {
    std::string id;
    ImagePatch source;
    std::vector<int> stop_times;
    std::vector<ImagePatch> outputs;
    std::vector<double> scores;  // empty until scored
    std::optional<std::size_t> earliest_mark;
    std::optional<std::size_t> convincing_mark;

    bool scored() const { return !scores.empty(); }
    // Checks ordering, lengths and mark consistency against `timesteps`.
    void validate(int timesteps) const;
};

// One partial edit per stop time. The frame at stop time s uses its own
// generator seeded with mix_seed(seed, s), so a frame does not depend on
// which other stop times are in the grid.
TransformationSeries edit_series(const ImagePatch& x_real, std::span<const int> stop_times, double condition,
                                 const EpsilonModel& model, const NoiseSchedule& sched, std::uint64_t seed);

// Same as edit_series for several inputs at once, batching the network calls.
// Input i uses seeds[i] and draws exactly the noise edit_series would; outputs
// agree with edit_series up to floating-point reassociation in batched kernels.
std::vector<TransformationSeries> edit_series_batch(std::span<const ImagePatch> inputs,
                                                    std::span<const int> stop_times, double condition,
                                                    const EpsilonModel& model, const NoiseSchedule& sched,
                                                    std::span<const std::uint64_t> seeds);

// Smallest frame index whose score >= tau, if any. Throws StateError when the
// series has not been scored.
std::optional<std::size_t> resemblance_threshold(const TransformationSeries& series, double tau);

// Evenly spaced stop times 0, T/(n-1), ..., T (rounded, deduplicated).
std::vector<int> stop_time_grid(int timesteps, int count);

}  // namespace mitodpm::diffusion
