#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>

#include "mitodpm/diffusion/denoiser.hpp"
#include "mitodpm/diffusion/schedule.hpp"

namespace mitodpm::diffusion {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 128;
    std::int64_t steps = 1000;  // total optimizer steps (the counter survives resume)
    std::uint64_t seed = 0;
    double ema_decay = 0.0;  // 0 disables weight averaging

    void validate() const;
};

// Read-only bundle used for sampling and editing.
struct DiffusionModel {
    NoiseSchedule schedule;
    DenoiserConfig config;
    UNet net{nullptr};
    int image_side = 0;
    std::uint64_t seed = 0;
    std::int64_t step = 0;

    EpsilonModel epsilon() const { return as_epsilon_model(net); }

    // Prefers the averaged weights when the checkpoint carries them.
    static DiffusionModel load(const std::filesystem::path& checkpoint);
};

// Called after every optimizer step with the 1-based step counter and loss.
using StepCallback = std::function<void(std::int64_t step, double loss)>;

// Single-worker trainer. Minibatch indices and (t, eps) come from two
// separate generators derived from the seed, so changing how batches are
// assembled never perturbs the noise stream.
class DiffusionTrainer {
public:
    DiffusionTrainer(const DenoiserConfig& config, NoiseSchedule schedule, const TrainConfig& train, int image_side);

    // Restores network, optimizer, generators and step counter; `train`
    // supplies the new step budget.
    static DiffusionTrainer resume(const std::filesystem::path& checkpoint, const TrainConfig& train);

    // images [N, 3, S, S] in [-1, 1], conditions [N] in [0, 1]. Runs until the
    // step counter reaches the configured budget. Throws NonFiniteLossError if
    // the loss diverges.
    void fit(const torch::Tensor& images, const torch::Tensor& conditions, const StepCallback& on_step = {});

    // One optimizer step on an explicit batch; returns the loss.
    double step(const torch::Tensor& images, const torch::Tensor& conditions);

    void save(const std::filesystem::path& checkpoint) const;
    DiffusionModel model() const;

    std::int64_t step_count() const { return step_; }
    const UNet& net() const { return net_; }

private:
    DenoiserConfig config_;
    NoiseSchedule schedule_;
    TrainConfig train_;
    int image_side_;
    UNet net_{nullptr};
    UNet ema_{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer_;
    torch::Generator data_rng_;
    torch::Generator noise_rng_;
    std::int64_t step_ = 0;
};

inline constexpr const char* kDiffusionCheckpointFormat = "mitodpm.diffusion.v1";

}  // namespace mitodpm::diffusion
