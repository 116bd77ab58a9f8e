#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace mitodpm::diffusion {

struct DenoiserConfig {
    int base_channels = 32;
    int depth = 3;  // resolution levels; channels double per level
    int cond_embed_width = 64;
    int time_embed_width = 128;

    void validate() const;
    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Predicts the noise in x_t given (x_t, t, condition). Shapes:
// x_t [B, 3, H, W] float, t [B] int64 in 1..T, condition [B] float in [0, 1].
using EpsilonModel =
    std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& condition)>;

// GroupNorm -> SiLU -> conv, twice, with the embedding injected as a
// per-channel bias between the convolutions.
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int in_channels, int out_channels, int embed_width);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear emb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

// Single-head self-attention over spatial positions with a residual path.
// Lets every position see the whole image, which convolutions at this depth
// cannot, so global properties such as the background tone are recoverable
// at high noise levels.
struct AttentionBlockImpl : torch::nn::Module {
    explicit AttentionBlockImpl(int channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Encoder-decoder with skip connections and attention at the lowest resolution.
// The output also carries a per-channel affine map of x_t whose scale and
// shift come from the embedding. The output GroupNorm removes each sample's
// mean, so without this path the predicted noise has no global offset and
// sampling lets the image mean drift. The scalar condition goes through
// a fully connected layer and is added to the timestep embedding.
class UNetImpl : public torch::nn::Module {
public:
    explicit UNetImpl(const DenoiserConfig& config);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& condition);

    const DenoiserConfig& config() const { return config_; }
    // Spatial sides must be divisible by this.
    int side_multiple() const { return 1 << (config_.depth - 1); }

private:
    torch::Tensor embed(const torch::Tensor& t, const torch::Tensor& condition);

    DenoiserConfig config_;
    torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
    torch::nn::Linear cond_fc{nullptr}, cond_proj{nullptr};
    torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::Linear skip_affine{nullptr};
    torch::nn::ModuleList down_blocks, downsamples, up_blocks, upsamples;
    ResBlock mid{nullptr}, mid2{nullptr};
    AttentionBlock mid_attn{nullptr};
};
TORCH_MODULE(UNet);

// Sinusoidal features of the (real-valued) timestep, [B] -> [B, width].
torch::Tensor timestep_features(const torch::Tensor& t, int width);

// Wraps the network as an EpsilonModel. The network must outlive the callable.
EpsilonModel as_epsilon_model(UNet net);

}  // namespace mitodpm::diffusion
