#pragma once

#include <torch/torch.h>

#include <vector>

namespace mitodpm::diffusion {

// Variance schedule of the forward process. Timesteps are 1-based: t = 1..T.
class NoiseSchedule {
public:
    // beta_t linearly interpolated from beta_start (t = 1) to beta_end (t = T).
    // Requires 0 < beta_start <= beta_end < 1 and T >= 1.
    static NoiseSchedule linear(int timesteps, double beta_start, double beta_end);
    // Arbitrary betas, each in (0, 1).
    static NoiseSchedule from_betas(std::vector<double> betas);

    int timesteps() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const;
    double alpha_bar(int t) const;
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    // Throws IndexError unless 1 <= t <= T.
    void check_timestep(int t) const;

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    explicit NoiseSchedule(std::vector<double> betas);
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end);

}  // namespace mitodpm::diffusion
