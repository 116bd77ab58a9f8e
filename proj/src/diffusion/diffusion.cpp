#include "mitodpm/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/random.hpp"

namespace mitodpm::diffusion {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) throw ValidationError(std::string(what) + ": shape mismatch");
}

// sqrt(abar_t) and sqrt(1 - abar_t) for t = 1..T as float32, indexed by t - 1.
std::pair<torch::Tensor, torch::Tensor> marginal_coefficients(const NoiseSchedule& sched) {
    const auto n = static_cast<int64_t>(sched.timesteps());
    auto signal = torch::empty({n}, torch::kFloat32);
    auto noise = torch::empty({n}, torch::kFloat32);
    for (int64_t i = 0; i < n; ++i) {
        const double ab = sched.alpha_bars()[static_cast<std::size_t>(i)];
        signal[i] = static_cast<float>(std::sqrt(ab));
        noise[i] = static_cast<float>(std::sqrt(1.0 - ab));
    }
    return {signal, noise};
}

torch::Tensor broadcast_shape(const torch::Tensor& coeff, const torch::Tensor& like) {
    std::vector<int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
    shape[0] = coeff.size(0);
    return coeff.view(shape);
}

}  // namespace

torch::Tensor q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& sched) {
    sched.check_timestep(t);
    check_same_shape(x0, eps, "q_sample");
    const double ab = sched.alpha_bar(t);
    return x0 * static_cast<float>(std::sqrt(ab)) + eps * static_cast<float>(std::sqrt(1.0 - ab));
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "q_sample");
    if (t.dim() != 1 || t.size(0) != x0.size(0)) throw ValidationError("q_sample: need one timestep per item");
    if (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > sched.timesteps()) {
        throw IndexError("q_sample: timestep outside [1, T]");
    }
    const auto [signal, noise] = marginal_coefficients(sched);
    const auto idx = t.to(torch::kLong) - 1;
    return x0 * broadcast_shape(signal.index_select(0, idx), x0) + eps * broadcast_shape(noise.index_select(0, idx), x0);
}

torch::Tensor q_step(const torch::Tensor& x_prev, int t, const torch::Tensor& eps, const NoiseSchedule& sched) {
    check_same_shape(x_prev, eps, "q_step");
    const double beta = sched.beta(t);
    return x_prev * static_cast<float>(std::sqrt(1.0 - beta)) + eps * static_cast<float>(std::sqrt(beta));
}

void check_conditions(const torch::Tensor& conditions) {
    if (conditions.numel() == 0) return;
    const auto c = conditions.to(torch::kFloat64);
    if (!torch::isfinite(c).all().item<bool>() || c.min().item<double>() < 0.0 || c.max().item<double>() > 1.0) {
        throw ValidationError("condition values must lie in [0, 1]");
    }
}

torch::Tensor training_loss(const EpsilonModel& model, const torch::Tensor& images, const torch::Tensor& conditions,
                            const NoiseSchedule& sched, torch::Generator& rng) {
    if (images.dim() != 4 || images.size(0) == 0) throw ValidationError("training batch must be non-empty [B, 3, H, W]");
    if (conditions.dim() != 1 || conditions.size(0) != images.size(0)) {
        throw ValidationError("training batch needs one condition per image");
    }
    check_conditions(conditions);
    const auto batch = images.size(0);
    const auto t = torch::randint(1, sched.timesteps() + 1, {batch}, rng, torch::kLong);
    const auto eps = torch::randn(images.sizes(), rng, images.options());
    const auto x_t = q_sample(images, t, eps, sched);
    const auto predicted = model(x_t, t, conditions.to(torch::kFloat32));
    return torch::mse_loss(predicted, eps);
}

ReverseNoise ReverseNoise::draw(torch::IntArrayRef shape, int timesteps, torch::Generator& rng) {
    ReverseNoise noise;
    noise.initial = torch::randn(shape, rng, torch::kFloat32);
    noise.steps.resize(static_cast<std::size_t>(std::max(0, timesteps - 1)));
    for (int t = timesteps; t >= 2; --t) noise.steps[static_cast<std::size_t>(t - 2)] = torch::randn(shape, rng, torch::kFloat32);
    return noise;
}

StepNoise ReverseNoise::as_step_noise() const {
    return [this](int t) { return at(t); };
}

torch::Tensor reverse_chain(const EpsilonModel& model, const NoiseSchedule& sched, torch::Tensor x, int start,
                            const torch::Tensor& conditions, const StepNoise& noise) {
    sched.check_timestep(start);
    check_conditions(conditions);
    torch::NoGradGuard no_grad;
    const auto batch = x.size(0);
    const auto cond = conditions.to(torch::kFloat32);
    for (int t = start; t >= 1; --t) {
        const double beta = sched.beta(t);
        const double ab = sched.alpha_bar(t);
        const auto tt = torch::full({batch}, t, torch::kLong);
        const auto eps_hat = model(x, tt, cond);
        x = (x - eps_hat * static_cast<float>(beta / std::sqrt(1.0 - ab))) * static_cast<float>(1.0 / std::sqrt(1.0 - beta));
        if (t > 1) x = x + noise(t) * static_cast<float>(std::sqrt(beta));
    }
    return x.clamp(-1.0, 1.0);
}

torch::Tensor sample_batch(const EpsilonModel& model, const NoiseSchedule& sched, const torch::Tensor& conditions,
                           const ReverseNoise& noise) {
    if (conditions.dim() != 1 || conditions.size(0) < 1) throw ValidationError("sample: need a non-empty condition vector");
    if (!noise.initial.defined() || noise.initial.dim() != 4) throw ValidationError("sample: initial noise must be [B, 3, S, S]");
    if (noise.steps.size() != static_cast<std::size_t>(sched.timesteps() - 1)) {
        throw ValidationError("sample: need one noise tensor per timestep t > 1");
    }
    check_conditions(conditions);
    const auto batch = conditions.size(0);
    auto x = noise.initial;
    if (x.size(0) == 1 && batch > 1) x = x.expand({batch, x.size(1), x.size(2), x.size(3)});
    if (x.size(0) != batch) throw ValidationError("sample: initial noise batch does not match conditions");
    return reverse_chain(model, sched, x.contiguous(), sched.timesteps(), conditions, noise.as_step_noise());
}

ImagePatch sample(const EpsilonModel& model, const NoiseSchedule& sched, double condition, const ReverseNoise& noise) {
    auto out = sample_batch(model, sched, torch::tensor({condition}, torch::kFloat32), noise);
    return ImagePatch::from_tensor(out[0]);
}

ImagePatch partial_edit(const ImagePatch& x_real, int stop_time, double condition, const EpsilonModel& model,
                        const NoiseSchedule& sched, torch::Generator& rng) {
    if (stop_time < 0 || stop_time > sched.timesteps()) {
        throw IndexError("stop time " + std::to_string(stop_time) + " outside [0, " + std::to_string(sched.timesteps()) + "]");
    }
    if (x_real.empty()) throw ValidationError("partial_edit: empty input");
    const auto cond = torch::tensor({condition}, torch::kFloat32);
    check_conditions(cond);
    if (stop_time == 0) return x_real;
    const auto x0 = x_real.tensor().unsqueeze(0);
    const auto eps = torch::randn(x0.sizes(), rng, torch::kFloat32);
    const auto x_s = q_sample(x0, stop_time, eps, sched);
    const auto shape = x0.sizes().vec();
    auto out = reverse_chain(model, sched, x_s, stop_time, cond,
                             [&](int) { return torch::randn(shape, rng, torch::kFloat32); });
    return ImagePatch::from_tensor(out[0]);
}

void TransformationSeries::validate(int timesteps) const {
    if (outputs.size() != stop_times.size()) throw ValidationError("series: outputs and stop times differ in length");
    if (!scores.empty() && scores.size() != stop_times.size()) throw ValidationError("series: scores and stop times differ in length");
    for (std::size_t i = 0; i < stop_times.size(); ++i) {
        if (stop_times[i] < 0 || stop_times[i] > timesteps) throw IndexError("series: stop time outside [0, T]");
        if (i && stop_times[i] <= stop_times[i - 1]) throw ValidationError("series: stop times must be strictly ascending");
    }
    for (const auto& mark : {earliest_mark, convincing_mark}) {
        if (mark && *mark >= stop_times.size()) throw IndexError("series: mark index outside the series");
    }
    if (earliest_mark && convincing_mark && *earliest_mark > *convincing_mark) {
        throw ValidationError("series: earliest mark must not come after the convincing mark");
    }
}

std::vector<TransformationSeries> edit_series_batch(std::span<const ImagePatch> inputs,
                                                    std::span<const int> stop_times, double condition,
                                                    const EpsilonModel& model, const NoiseSchedule& sched,
                                                    std::span<const std::uint64_t> seeds) {
    if (stop_times.empty()) throw ValidationError("edit series: stop-time grid is empty");
    if (inputs.empty()) throw ValidationError("edit series: no inputs");
    if (seeds.size() != inputs.size()) throw ValidationError("edit series: need one seed per input");
    for (std::size_t i = 0; i < stop_times.size(); ++i) {
        if (stop_times[i] < 0 || stop_times[i] > sched.timesteps()) {
            throw IndexError("stop time " + std::to_string(stop_times[i]) + " outside [0, " +
                             std::to_string(sched.timesteps()) + "]");
        }
        if (i && stop_times[i] <= stop_times[i - 1]) throw ValidationError("edit series: stop times must be strictly ascending");
    }
    const auto cond_scalar = torch::tensor({condition}, torch::kFloat32);
    check_conditions(cond_scalar);

    std::vector<TransformationSeries> result(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        result[i].source = inputs[i];
        result[i].stop_times.assign(stop_times.begin(), stop_times.end());
    }
    const auto x0 = stack_patches(inputs);
    const auto n = static_cast<int64_t>(inputs.size());
    const auto item_shape = x0[0].unsqueeze(0).sizes().vec();
    const auto conditions = cond_scalar.expand({n}).contiguous();

    for (int s : stop_times) {
        if (s == 0) {
            for (auto& series : result) series.outputs.push_back(series.source);
            continue;
        }
        std::vector<torch::Generator> gens;
        gens.reserve(inputs.size());
        for (auto seed : seeds) gens.push_back(make_generator(mix_seed(seed, static_cast<std::uint64_t>(s))));
        auto draw = [&] {
            std::vector<torch::Tensor> parts;
            parts.reserve(gens.size());
            for (auto& g : gens) parts.push_back(torch::randn(item_shape, g, torch::kFloat32));
            return torch::cat(parts, 0);
        };
        const auto x_s = q_sample(x0, s, draw(), sched);
        const auto out = reverse_chain(model, sched, x_s, s, conditions, [&](int) { return draw(); });
        for (int64_t i = 0; i < n; ++i) result[static_cast<std::size_t>(i)].outputs.push_back(ImagePatch::from_tensor(out[i]));
    }
    return result;
}

TransformationSeries edit_series(const ImagePatch& x_real, std::span<const int> stop_times, double condition,
                                 const EpsilonModel& model, const NoiseSchedule& sched, std::uint64_t seed) {
    const std::uint64_t seeds[] = {seed};
    return std::move(edit_series_batch(std::span(&x_real, 1), stop_times, condition, model, sched, seeds).front());
}

std::optional<std::size_t> resemblance_threshold(const TransformationSeries& series, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("resemblance threshold tau must lie in (0, 1)");
    if (!series.scored()) throw StateError("resemblance threshold needs a scored series");
    for (std::size_t i = 0; i < series.scores.size(); ++i) {
        if (series.scores[i] >= tau) return i;
    }
    return std::nullopt;
}

std::vector<int> stop_time_grid(int timesteps, int count) {
    if (count < 1) throw ValidationError("stop-time grid needs at least one entry");
    if (count == 1) return {timesteps};
    std::vector<int> grid;
    for (int i = 0; i < count; ++i) {
        const int s = static_cast<int>(std::lround(static_cast<double>(i) * timesteps / (count - 1)));
        if (grid.empty() || s > grid.back()) grid.push_back(s);
    }
    return grid;
}

}  // namespace mitodpm::diffusion
