#pragma once

#include <span>
#include <torch/torch.h>

#include "mitodpm/png_io.hpp"

namespace mitodpm {

inline constexpr int kDefaultPatchSide = 64;

// Square RGB patch, CHW float32 with values in [-1, 1].
class ImagePatch {
public:
    ImagePatch() = default;

    // Validates shape [3, S, S] and range; the tensor is stored contiguous.
    static ImagePatch from_tensor(torch::Tensor chw);
    static ImagePatch from_rgb8(const Rgb8Image& image);
    static ImagePatch zeros(int side);

    const torch::Tensor& tensor() const { return pixels_; }
    int side() const { return pixels_.defined() ? static_cast<int>(pixels_.size(1)) : 0; }
    bool empty() const { return !pixels_.defined(); }

    Rgb8Image to_rgb8() const;

    friend bool operator==(const ImagePatch& a, const ImagePatch& b);

private:
    explicit ImagePatch(torch::Tensor pixels) : pixels_(std::move(pixels)) {}
    torch::Tensor pixels_;
};

// Fixed affine map [-1, 1] -> [0, 255], round half up, clamped.
std::uint8_t to_byte(float value);
float from_byte(std::uint8_t byte);

// Any [3, H, W] tensor in [-1, 1] to an 8-bit raster.
Rgb8Image tensor_to_rgb8(const torch::Tensor& chw);
torch::Tensor rgb8_to_tensor(const Rgb8Image& image);

void write_patch_png(const std::string& path, const ImagePatch& patch);
ImagePatch read_patch_png(const std::string& path);

// Bilinear resize of a [B, 3, H, W] (or [3, H, W]) tensor to side x side.
torch::Tensor resize_bilinear(const torch::Tensor& images, int side);

// Stacks patches into a [N, 3, S, S] batch; all sides must agree.
torch::Tensor stack_patches(std::span<const ImagePatch> patches);

}  // namespace mitodpm
