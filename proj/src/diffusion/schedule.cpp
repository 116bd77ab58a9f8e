#include "mitodpm/diffusion/schedule.hpp"

#include "mitodpm/errors.hpp"

namespace mitodpm::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ValidationError("noise schedule needs at least one timestep");
    alpha_bars_.reserve(betas_.size());
    double prod = 1.0;
    for (double b : betas_) {
        if (!(b > 0.0 && b < 1.0)) throw ValidationError("every beta must lie in (0, 1)");
        prod *= 1.0 - b;
        alpha_bars_.push_back(prod);
    }
}

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 1) throw ValidationError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ValidationError("schedule needs 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(timesteps));
    for (int i = 0; i < timesteps; ++i) {
        const double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / (timesteps - 1);
        betas[i] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) { return NoiseSchedule(std::move(betas)); }

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > timesteps()) {
        throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
    }
}

double NoiseSchedule::beta(int t) const {
    check_timestep(t);
    return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    check_timestep(t);
    return alpha_bars_[t - 1];
}

NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end) {
    return NoiseSchedule::linear(timesteps, beta_start, beta_end);
}

}  // namespace mitodpm::diffusion
