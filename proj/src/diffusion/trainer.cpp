#include "mitodpm/diffusion/trainer.hpp"

#include <cmath>

#include "mitodpm/checkpoint.hpp"
#include "mitodpm/diffusion/diffusion.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/random.hpp"

namespace mitodpm::diffusion {

namespace {

UNet build_net(const DenoiserConfig& config, std::uint64_t seed) {
    // Parameter initialisation draws from the global generator.
    torch::manual_seed(seed);
    return UNet(config);
}

void copy_parameters(const UNet& from, UNet& to) {
    torch::NoGradGuard no_grad;
    auto src = from->parameters();
    auto dst = to->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
}

void write_config(CheckpointWriter& w, const DenoiserConfig& c) {
    w.put("denoiser.base_channels", std::int64_t{c.base_channels});
    w.put("denoiser.depth", std::int64_t{c.depth});
    w.put("denoiser.cond_embed_width", std::int64_t{c.cond_embed_width});
    w.put("denoiser.time_embed_width", std::int64_t{c.time_embed_width});
}

DenoiserConfig read_config(CheckpointReader& r) {
    DenoiserConfig c;
    c.base_channels = static_cast<int>(r.get_int("denoiser.base_channels"));
    c.depth = static_cast<int>(r.get_int("denoiser.depth"));
    c.cond_embed_width = static_cast<int>(r.get_int("denoiser.cond_embed_width"));
    c.time_embed_width = static_cast<int>(r.get_int("denoiser.time_embed_width"));
    c.validate();
    return c;
}

NoiseSchedule read_schedule(CheckpointReader& r) {
    const auto betas = r.get_tensor("schedule.betas").to(torch::kFloat64).contiguous();
    std::vector<double> values(betas.data_ptr<double>(), betas.data_ptr<double>() + betas.numel());
    auto sched = NoiseSchedule::from_betas(std::move(values));
    if (sched.timesteps() != r.get_int("schedule.T")) throw ValidationError("checkpoint schedule length mismatch");
    return sched;
}

torch::Tensor betas_tensor(const NoiseSchedule& s) {
    return torch::tensor(s.betas(), torch::kFloat64);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
    if (steps < 1) throw ValidationError("step budget must be positive");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ValidationError("EMA decay must lie in [0, 1)");
}

DiffusionModel DiffusionModel::load(const std::filesystem::path& checkpoint) {
    CheckpointReader r(checkpoint, kDiffusionCheckpointFormat);
    DiffusionModel m{read_schedule(r), read_config(r)};
    m.image_side = static_cast<int>(r.get_int("image_side"));
    m.seed = static_cast<std::uint64_t>(r.get_int("train.seed"));
    m.step = r.get_int("train.step");
    m.net = UNet(m.config);
    torch::serialize::InputArchive weights;
    if (!r.get_nested("ema", weights) && !r.get_nested("model", weights)) {
        throw ValidationError(checkpoint.string() + ": no model weights");
    }
    m.net->load(weights);
    m.net->eval();
    return m;
}

DiffusionTrainer::DiffusionTrainer(const DenoiserConfig& config, NoiseSchedule schedule, const TrainConfig& train,
                                   int image_side)
    : config_(config),
      schedule_(std::move(schedule)),
      train_(train),
      image_side_(image_side),
      data_rng_(make_generator(mix_seed(train.seed, 1))),
      noise_rng_(make_generator(mix_seed(train.seed, 2))) {
    train_.validate();
    config_.validate();
    net_ = build_net(config_, train_.seed);
    if (image_side_ < 1 || image_side_ % net_->side_multiple()) {
        throw ValidationError("image side " + std::to_string(image_side_) + " must be a positive multiple of " +
                              std::to_string(net_->side_multiple()));
    }
    if (train_.ema_decay > 0.0) {
        ema_ = UNet(config_);
        copy_parameters(net_, ema_);
        for (auto& p : ema_->parameters()) p.set_requires_grad(false);
    }
    optimizer_ = std::make_unique<torch::optim::Adam>(net_->parameters(), torch::optim::AdamOptions(train_.learning_rate));
}

DiffusionTrainer DiffusionTrainer::resume(const std::filesystem::path& checkpoint, const TrainConfig& train) {
    CheckpointReader r(checkpoint, kDiffusionCheckpointFormat);
    auto config = read_config(r);
    auto schedule = read_schedule(r);
    TrainConfig restored = train;
    restored.seed = static_cast<std::uint64_t>(r.get_int("train.seed"));
    DiffusionTrainer trainer(config, std::move(schedule), restored, static_cast<int>(r.get_int("image_side")));
    torch::serialize::InputArchive weights;
    if (!r.get_nested("model", weights)) throw ValidationError(checkpoint.string() + ": no model weights");
    trainer.net_->load(weights);
    if (trainer.ema_) {
        torch::serialize::InputArchive ema;
        if (r.get_nested("ema", ema)) {
            trainer.ema_->load(ema);
        } else {
            copy_parameters(trainer.net_, trainer.ema_);
        }
    }
    torch::serialize::InputArchive opt;
    if (r.get_nested("optimizer", opt)) trainer.optimizer_->load(opt);
    for (auto& group : trainer.optimizer_->param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(train.learning_rate);
    }
    trainer.data_rng_.set_state(r.get_tensor("rng.data"));
    trainer.noise_rng_.set_state(r.get_tensor("rng.noise"));
    trainer.step_ = r.get_int("train.step");
    return trainer;
}

double DiffusionTrainer::step(const torch::Tensor& images, const torch::Tensor& conditions) {
    net_->train();
    optimizer_->zero_grad();
    auto loss = training_loss(as_epsilon_model(net_), images, conditions, schedule_, noise_rng_);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        throw NonFiniteLossError("diffusion loss became " + std::to_string(value) + " at step " +
                                 std::to_string(step_ + 1) + " (lr " + std::to_string(train_.learning_rate) + ")");
    }
    loss.backward();
    optimizer_->step();
    ++step_;
    if (ema_) {
        torch::NoGradGuard no_grad;
        const auto decay = static_cast<float>(train_.ema_decay);
        auto src = net_->parameters();
        auto dst = ema_->parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].mul_(decay).add_(src[i], 1.0f - decay);
    }
    return value;
}

void DiffusionTrainer::fit(const torch::Tensor& images, const torch::Tensor& conditions, const StepCallback& on_step) {
    if (images.dim() != 4 || images.size(0) < 1) throw ValidationError("training set must be a non-empty [N, 3, S, S] tensor");
    if (images.size(2) != image_side_ || images.size(3) != image_side_) {
        throw ValidationError("training images must be " + std::to_string(image_side_) + " pixels square");
    }
    if (conditions.dim() != 1 || conditions.size(0) != images.size(0)) throw ValidationError("need one condition per image");
    check_conditions(conditions);
    const auto n = images.size(0);
    const auto cond = conditions.to(torch::kFloat32);
    while (step_ < train_.steps) {
        const auto idx = torch::randint(0, n, {train_.batch_size}, data_rng_, torch::kLong);
        const double loss = step(images.index_select(0, idx), cond.index_select(0, idx));
        if (on_step) on_step(step_, loss);
    }
}

void DiffusionTrainer::save(const std::filesystem::path& checkpoint) const {
    CheckpointWriter w(kDiffusionCheckpointFormat);
    w.put("schedule.T", std::int64_t{schedule_.timesteps()});
    w.put("schedule.betas", betas_tensor(schedule_));
    w.put("schedule.alpha_bars", torch::tensor(schedule_.alpha_bars(), torch::kFloat64));
    write_config(w, config_);
    w.put("image_side", std::int64_t{image_side_});
    w.put("train.seed", static_cast<std::int64_t>(train_.seed));
    w.put("train.step", step_);
    w.put("train.learning_rate", train_.learning_rate);
    w.put("train.batch_size", std::int64_t{train_.batch_size});
    w.put("train.ema_decay", train_.ema_decay);
    torch::serialize::OutputArchive weights;
    net_->save(weights);
    w.put("model", weights);
    if (ema_) {
        torch::serialize::OutputArchive ema;
        ema_->save(ema);
        w.put("ema", ema);
    }
    torch::serialize::OutputArchive opt;
    optimizer_->save(opt);
    w.put("optimizer", opt);
    w.put("rng.data", data_rng_.get_state());
    w.put("rng.noise", noise_rng_.get_state());
    w.save(checkpoint);
}

DiffusionModel DiffusionTrainer::model() const {
    DiffusionModel m{schedule_, config_};
    m.net = UNet(config_);
    copy_parameters(ema_ ? ema_ : net_, m.net);
    m.net->eval();
    m.image_side = image_side_;
    m.seed = train_.seed;
    m.step = step_;
    return m;
}

}  // namespace mitodpm::diffusion
