#include "mitodpm/profiles.hpp"

#include "mitodpm/errors.hpp"

namespace mitodpm {

Profile desk_profile() {
    Profile p;
    p.name = "desk";
    p.image_side = 32;
    p.timesteps = 200;
    // The 1e-4..0.02 range scaled by 1000 / T, so x_T is still close to pure
    // noise with only 200 steps (alpha_bar_T ~ 3e-5 instead of ~0.13).
    p.beta_start = 5e-4;
    p.beta_end = 0.1;
    p.denoiser = {.base_channels = 16, .depth = 3, .cond_embed_width = 32, .time_embed_width = 64};
    p.dpm_train = {.learning_rate = 1e-3, .batch_size = 64, .steps = 3000, .seed = 0, .ema_decay = 0.0};
    p.classifier.input_side = 32;
    p.classifier.learning_rate = 1e-3;
    p.classifier.batch_size = 64;
    p.classifier.seeds = {0, 1, 2};
    p.classifier.train_fraction = 0.75;
    p.classifier.patience = 5;
    p.classifier.eval_every = 25;
    p.classifier.max_steps = 600;
    p.classifier.backbone = {16, {1, 1}};
    p.sweep_seeds = 100;
    p.toy_count = 2000;
    return p;
}

Profile full_profile() {
    Profile p;
    p.name = "full";
    p.image_side = 64;
    p.timesteps = 1000;
    p.beta_start = 1e-4;
    p.beta_end = 0.02;
    p.denoiser = {.base_channels = 64, .depth = 4, .cond_embed_width = 128, .time_embed_width = 256};
    p.dpm_train = {.learning_rate = 1e-4, .batch_size = 128, .steps = 100000, .seed = 0, .ema_decay = 0.0};
    p.classifier.input_side = 256;
    p.classifier.learning_rate = 1e-5;
    p.classifier.batch_size = 128;
    p.classifier.seeds = {0, 1, 2};
    p.classifier.train_fraction = 0.75;
    p.classifier.patience = 5;
    p.classifier.eval_every = 500;
    p.classifier.max_steps = 200000;
    p.classifier.backbone = classifier::ResNetConfig::resnet34();
    p.sweep_seeds = 1000;
    p.toy_count = 20000;
    return p;
}

Profile profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "full") return full_profile();
    throw ValidationError("unknown profile '" + name + "' (expected desk or full)");
}

}  // namespace mitodpm
