#include "mitodpm/data/image.hpp"

#include <cmath>

#include "mitodpm/errors.hpp"

namespace mitodpm {

ImagePatch ImagePatch::from_tensor(torch::Tensor chw) {
    if (!chw.defined() || chw.dim() != 3 || chw.size(0) != 3) {
        throw ValidationError("image patch must have shape [3, S, S]");
    }
    if (chw.size(1) != chw.size(2) || chw.size(1) < 1) throw ValidationError("image patch must be square");
    chw = chw.to(torch::kFloat32).contiguous();
    if (!(chw.min().item<float>() >= -1.0f && chw.max().item<float>() <= 1.0f)) {
        throw ValidationError("image patch values must lie in [-1, 1] and be finite");
    }
    return ImagePatch(std::move(chw));
}

ImagePatch ImagePatch::from_rgb8(const Rgb8Image& image) {
    if (image.width != image.height) throw ValidationError("image patch must be square");
    return ImagePatch(rgb8_to_tensor(image));
}

ImagePatch ImagePatch::zeros(int side) {
    if (side < 1) throw ValidationError("patch side must be positive");
    return ImagePatch(torch::zeros({3, side, side}));
}

Rgb8Image ImagePatch::to_rgb8() const { return tensor_to_rgb8(pixels_); }

bool operator==(const ImagePatch& a, const ImagePatch& b) {
    if (a.empty() || b.empty()) return a.empty() == b.empty();
    return a.pixels_.sizes() == b.pixels_.sizes() && torch::equal(a.pixels_, b.pixels_);
}

std::uint8_t to_byte(float value) {
    const double scaled = std::floor((static_cast<double>(value) + 1.0) * 127.5 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

float from_byte(std::uint8_t byte) { return static_cast<float>(byte / 127.5 - 1.0); }

Rgb8Image tensor_to_rgb8(const torch::Tensor& chw) {
    if (chw.dim() != 3 || chw.size(0) != 3) throw ValidationError("expected a [3, H, W] tensor");
    const auto hwc = chw.to(torch::kFloat32).permute({1, 2, 0}).contiguous();
    Rgb8Image out;
    out.height = static_cast<int>(chw.size(1));
    out.width = static_cast<int>(chw.size(2));
    out.pixels.resize(static_cast<std::size_t>(hwc.numel()));
    const float* src = hwc.data_ptr<float>();
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = to_byte(src[i]);
    return out;
}

torch::Tensor rgb8_to_tensor(const Rgb8Image& image) {
    auto hwc = torch::empty({image.height, image.width, 3}, torch::kFloat32);
    float* dst = hwc.data_ptr<float>();
    for (std::size_t i = 0; i < image.pixels.size(); ++i) dst[i] = from_byte(image.pixels[i]);
    return hwc.permute({2, 0, 1}).contiguous();
}

void write_patch_png(const std::string& path, const ImagePatch& patch) { write_png(path, patch.to_rgb8()); }

ImagePatch read_patch_png(const std::string& path) { return ImagePatch::from_rgb8(read_png(path)); }

torch::Tensor resize_bilinear(const torch::Tensor& images, int side) {
    namespace F = torch::nn::functional;
    const bool single = images.dim() == 3;
    auto batch = single ? images.unsqueeze(0) : images;
    if (batch.size(2) == side && batch.size(3) == side) return images;
    auto out = F::interpolate(batch, F::InterpolateFuncOptions()
                                         .size(std::vector<int64_t>{side, side})
                                         .mode(torch::kBilinear)
                                         .align_corners(false));
    return single ? out.squeeze(0) : out;
}

torch::Tensor stack_patches(std::span<const ImagePatch> patches) {
    if (patches.empty()) throw ValidationError("cannot stack an empty patch list");
    std::vector<torch::Tensor> tensors;
    tensors.reserve(patches.size());
    const int side = patches.front().side();
    for (const auto& p : patches) {
        if (p.side() != side) throw ValidationError("patches in one batch must share their side length");
        tensors.push_back(p.tensor());
    }
    return torch::stack(tensors);
}

}  // namespace mitodpm
