#include "mitodpm/data/image_stats.hpp"

#include <cmath>

#include "mitodpm/errors.hpp"

namespace mitodpm::data {

namespace {

// [1, 1, H, W] luma in [0, 1].
torch::Tensor luma(const ImagePatch& patch) {
    const auto rgb = (patch.tensor().to(torch::kFloat64) + 1.0) * 0.5;
    auto y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    return y.unsqueeze(0).unsqueeze(0);
}

torch::Tensor gaussian_window(int size, double sigma) {
    auto coords = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
    auto g = torch::exp(-(coords * coords) / (2 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).unsqueeze(0).unsqueeze(0);
}

}  // namespace

double mean_darkness(const ImagePatch& patch) { return 1.0 - luma(patch).mean().item<double>(); }

double gradient_energy(const ImagePatch& patch) {
    const auto y = luma(patch);
    using torch::indexing::Slice;
    const auto dx = y.index({Slice(), Slice(), Slice(), Slice(1, torch::indexing::None)}) -
                    y.index({Slice(), Slice(), Slice(), Slice(torch::indexing::None, -1)});
    const auto dy = y.index({Slice(), Slice(), Slice(1, torch::indexing::None), Slice()}) -
                    y.index({Slice(), Slice(), Slice(torch::indexing::None, -1), Slice()});
    return (dx.pow(2).mean() + dy.pow(2).mean()).item<double>();
}

double ssim(const ImagePatch& a, const ImagePatch& b) {
    if (a.side() != b.side()) throw ValidationError("ssim: patches differ in size");
    namespace F = torch::nn::functional;
    const int size = std::min(7, a.side());
    const auto w = gaussian_window(size, 1.5);
    const auto x = luma(a);
    const auto y = luma(b);
    const auto mx = F::conv2d(x, w);
    const auto my = F::conv2d(y, w);
    const auto sxx = F::conv2d(x * x, w) - mx * mx;
    const auto syy = F::conv2d(y * y, w) - my * my;
    const auto sxy = F::conv2d(x * y, w) - mx * my;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean().item<double>();
}

double pixel_correlation(const ImagePatch& a, const ImagePatch& b) {
    if (a.side() != b.side()) throw ValidationError("correlation: patches differ in size");
    const auto x = a.tensor().to(torch::kFloat64).flatten();
    const auto y = b.tensor().to(torch::kFloat64).flatten();
    const auto xc = x - x.mean();
    const auto yc = y - y.mean();
    const double denom = std::sqrt((xc * xc).sum().item<double>() * (yc * yc).sum().item<double>());
    return denom == 0 ? 0.0 : (xc * yc).sum().item<double>() / denom;
}

}  // namespace mitodpm::data
