#pragma once

#include "mitodpm/data/image.hpp"

namespace mitodpm::data {

// 1 - mean luma, with luma in [0, 1]. Higher is darker.
double mean_darkness(const ImagePatch& patch);

// Mean squared finite-difference gradient of the luma channel.
double gradient_energy(const ImagePatch& patch);

// Structural similarity of the luma channels (Gaussian window, sigma 1.5).
double ssim(const ImagePatch& a, const ImagePatch& b);

// Pearson correlation over all pixel values.
double pixel_correlation(const ImagePatch& a, const ImagePatch& b);

}  // namespace mitodpm::data
