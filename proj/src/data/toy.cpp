#include "mitodpm/data/toy.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"

namespace mitodpm::data {

namespace {

using Rgb = std::array<double, 3>;

constexpr Rgb kEosin{0.93, 0.76, 0.84};
constexpr Rgb kPaleNucleus{0.74, 0.58, 0.82};
constexpr Rgb kDenseChromatin{0.16, 0.06, 0.32};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

struct Wave {
    double fx, fy, phase, amp;
};

}  // namespace

ToyAttributes toy_attributes(double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("toy morphology must lie in [0, 1]");
    return {
        .darkness = lerp(0.2, 0.9, m),
        .edge_width = lerp(2.4, 0.5, m),
        .elongation = lerp(1.0, 2.2, m),
    };
}

ImagePatch render_toy(const ToySpec& spec) {
    if (spec.side < 8) throw ValidationError("toy side must be at least 8 pixels");
    const auto attrs = toy_attributes(spec.morphology);
    std::mt19937_64 rng(spec.texture_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double s = spec.side;
    std::array<Wave, 4> waves{};
    for (auto& w : waves) {
        w = {lerp(0.5, 3.0, unit(rng)) / s, lerp(0.5, 3.0, unit(rng)) / s, unit(rng) * 2 * std::numbers::pi,
             0.015 + 0.015 * unit(rng)};
    }
    const double cx = s / 2 + (unit(rng) - 0.5) * 0.12 * s;
    const double cy = s / 2 + (unit(rng) - 0.5) * 0.12 * s;
    const double angle = unit(rng) * std::numbers::pi;
    const double radius = 0.17 * s * (1.0 + 0.08 * (unit(rng) - 0.5));
    const double darkness = std::clamp(attrs.darkness + 0.03 * (unit(rng) - 0.5), 0.0, 1.0);
    const double major = radius * std::sqrt(attrs.elongation);
    const double minor = radius / std::sqrt(attrs.elongation);
    const double ca = std::cos(angle), sa = std::sin(angle);

    Rgb nucleus;
    for (int k = 0; k < 3; ++k) nucleus[k] = lerp(kPaleNucleus[k], kDenseChromatin[k], darkness);

    auto pixels = torch::empty({3, spec.side, spec.side}, torch::kFloat32);
    auto acc = pixels.accessor<float, 3>();
    for (int y = 0; y < spec.side; ++y) {
        for (int x = 0; x < spec.side; ++x) {
            double texture = 0.0;
            for (const auto& w : waves) texture += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double u = (dx * ca + dy * sa) / major;
            const double v = (-dx * sa + dy * ca) / minor;
            const double rho = std::sqrt(u * u + v * v);
            const double signed_dist = (rho - 1.0) * std::sqrt(major * minor);
            const double coverage = 1.0 / (1.0 + std::exp(signed_dist / attrs.edge_width * 1.7));
            const double grain = 0.02 * gauss(rng);
            for (int k = 0; k < 3; ++k) {
                const double bg = kEosin[k] + texture;
                const double fg = nucleus[k] + grain;
                const double value = std::clamp(bg * (1 - coverage) + fg * coverage, 0.0, 1.0);
                // Quantised to 8 bits so an in-memory cell equals its PNG.
                acc[k][y][x] = from_byte(to_byte(static_cast<float>(value * 2.0 - 1.0)));
            }
        }
    }
    return ImagePatch::from_tensor(pixels);
}

std::vector<ToyCell> toy_dataset(int n, std::uint64_t seed, int side) {
    if (n < 1) throw ValidationError("toy dataset size must be at least 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<ToyCell> cells;
    cells.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double m = unit(rng);
        cells.push_back({render_toy({.side = side, .morphology = m, .texture_seed = mix_seed(seed, i)}), m});
    }
    return cells;
}

}  // namespace mitodpm::data
