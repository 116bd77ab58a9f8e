#include "mitodpm/diffusion/denoiser.hpp"

#include <cmath>

#include "mitodpm/errors.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace mitodpm::diffusion {

namespace {

int groups_for(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

void DenoiserConfig::validate() const {
    if (base_channels < 1 || depth < 1 || cond_embed_width < 1 || time_embed_width < 1) {
        throw ValidationError("denoiser config fields must all be positive");
    }
    if (time_embed_width % 2) throw ValidationError("time embedding width must be even");
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int embed_width)
    : norm1(register_module("norm1", nn::GroupNorm(groups_for(in_channels), in_channels))),
      norm2(register_module("norm2", nn::GroupNorm(groups_for(out_channels), out_channels))),
      conv1(register_module("conv1", conv3x3(in_channels, out_channels))),
      conv2(register_module("conv2", conv3x3(out_channels, out_channels))),
      emb_proj(register_module("emb_proj", nn::Linear(embed_width, out_channels))) {
    if (in_channels != out_channels) {
        skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1(F::silu(norm1(x)));
    h = h + emb_proj(F::silu(emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(F::silu(norm2(h)));
    return h + (skip ? skip(x) : x);
}

AttentionBlockImpl::AttentionBlockImpl(int channels)
    : norm(register_module("norm", nn::GroupNorm(groups_for(channels), channels))),
      qkv(register_module("qkv", nn::Conv2d(nn::Conv2dOptions(channels, 3 * channels, 1)))),
      proj(register_module("proj", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)))) {}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    auto parts = qkv(norm(x)).reshape({b, 3, c, h * w}).unbind(1);
    auto weights = torch::softmax(torch::bmm(parts[0].transpose(1, 2), parts[1]) / std::sqrt(static_cast<double>(c)), -1);
    auto out = torch::bmm(parts[2], weights.transpose(1, 2)).reshape({b, c, h, w});
    return x + proj(out);
}

torch::Tensor timestep_features(const torch::Tensor& t, int width) {
    const int half = width / 2;
    const auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
    const auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

UNetImpl::UNetImpl(const DenoiserConfig& config) : config_(config) {
    config_.validate();
    const int tw = config_.time_embed_width;
    const int base = config_.base_channels;
    time_fc1 = register_module("time_fc1", nn::Linear(tw, tw));
    time_fc2 = register_module("time_fc2", nn::Linear(tw, tw));
    cond_fc = register_module("cond_fc", nn::Linear(1, config_.cond_embed_width));
    cond_proj = register_module("cond_proj", nn::Linear(config_.cond_embed_width, tw));
    conv_in = register_module("conv_in", conv3x3(3, base));

    std::vector<int> channels;
    for (int level = 0; level < config_.depth; ++level) channels.push_back(base << level);

    int in = base;
    for (int level = 0; level < config_.depth; ++level) {
        down_blocks->push_back(ResBlock(in, channels[level], tw));
        if (level + 1 < config_.depth) downsamples->push_back(conv3x3(channels[level], channels[level], 2));
        in = channels[level];
    }
    mid = register_module("mid", ResBlock(in, in, tw));
    mid_attn = register_module("mid_attn", AttentionBlock(in));
    mid2 = register_module("mid2", ResBlock(in, in, tw));
    for (int level = config_.depth - 1; level >= 0; --level) {
        up_blocks->push_back(ResBlock(2 * channels[level], channels[level], tw));
        if (level > 0) upsamples->push_back(conv3x3(channels[level], channels[level - 1]));
    }
    register_module("down_blocks", down_blocks);
    register_module("downsamples", downsamples);
    register_module("up_blocks", up_blocks);
    register_module("upsamples", upsamples);
    norm_out = register_module("norm_out", nn::GroupNorm(groups_for(base), base));
    conv_out = register_module("conv_out", conv3x3(base, 3));
    skip_affine = register_module("skip_affine", nn::Linear(tw, 6));
    torch::NoGradGuard no_grad;
    skip_affine->weight.zero_();
    skip_affine->bias.zero_();
}

torch::Tensor UNetImpl::embed(const torch::Tensor& t, const torch::Tensor& condition) {
    auto temb = time_fc2(F::silu(time_fc1(timestep_features(t, config_.time_embed_width))));
    auto cemb = cond_proj(F::silu(cond_fc(condition.to(torch::kFloat32).view({-1, 1}))));
    return temb + cemb;
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& condition) {
    if (x.dim() != 4 || x.size(1) != 3) throw ValidationError("denoiser input must be [B, 3, H, W]");
    if (x.size(2) % side_multiple() || x.size(3) % side_multiple()) {
        throw ValidationError("denoiser input side must be divisible by " + std::to_string(side_multiple()));
    }
    const auto emb = embed(t, condition);
    auto h = conv_in(x);
    std::vector<torch::Tensor> skips;
    for (int level = 0; level < config_.depth; ++level) {
        h = down_blocks[level]->as<ResBlock>()->forward(h, emb);
        skips.push_back(h);
        if (level + 1 < config_.depth) h = downsamples[level]->as<nn::Conv2d>()->forward(h);
    }
    h = mid2(mid_attn(mid(h, emb)), emb);
    for (int i = 0; i < config_.depth; ++i) {
        const int level = config_.depth - 1 - i;
        h = up_blocks[i]->as<ResBlock>()->forward(torch::cat({h, skips[level]}, 1), emb);
        if (level > 0) {
            h = F::interpolate(h, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
            h = upsamples[i]->as<nn::Conv2d>()->forward(h);
        }
    }
    const auto affine = skip_affine(F::silu(emb)).view({-1, 2, 3, 1, 1});
    return conv_out(F::silu(norm_out(h))) + affine.select(1, 0) * x + affine.select(1, 1);
}

EpsilonModel as_epsilon_model(UNet net) {
    return [net](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& c) mutable {
        return net->forward(x, t, c);
    };
}

}  // namespace mitodpm::diffusion
