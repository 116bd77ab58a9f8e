#pragma once

#include <string>

#include "mitodpm/classifier/classifier.hpp"
#include "mitodpm/diffusion/denoiser.hpp"
#include "mitodpm/diffusion/trainer.hpp"

namespace mitodpm {

// Named bundles of defaults. `desk` runs end to end on one CPU core;
// `full` is the large-scale recipe (64 px tiles, T = 1000,
// ResNet-34 classifier at 256 px, 1000 sweep seeds).
struct Profile {
    std::string name;
    int image_side;
    int timesteps;
    double beta_start;
    double beta_end;
    diffusion::DenoiserConfig denoiser;
    diffusion::TrainConfig dpm_train;
    classifier::ClassifierConfig classifier;
    int sweep_seeds;
    int toy_count;
};

Profile desk_profile();
Profile full_profile();
// Throws ValidationError for anything other than "desk" or "full".
Profile profile_by_name(const std::string& name);

}  // namespace mitodpm
