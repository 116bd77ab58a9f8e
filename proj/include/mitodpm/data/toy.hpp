#pragma once

#include <cstdint>
#include <vector>

#include "mitodpm/data/image.hpp"

namespace mitodpm::data {

// Procedural stand-in for a nucleus-centred histology tile. The morphology
// parameter m in [0, 1] plays the role of the mitosis score: as m grows the
// nucleus gets darker, its boundary sharper and its outline more elongated.
struct ToySpec {
    int side = 32;
    double morphology = 0.0;       // m
    std::uint64_t texture_seed = 0;  // background texture and per-cell jitter
};

// The attributes the renderer derives from m, before per-cell jitter.
struct ToyAttributes {
    double darkness;    // nucleus stain density in [0, 1]
    double edge_width;  // boundary blur in pixels (smaller is sharper)
    double elongation;  // major / minor axis ratio
};

ToyAttributes toy_attributes(double morphology);

// Deterministic given the spec.
ImagePatch render_toy(const ToySpec& spec);

struct ToyCell {
    ImagePatch image;
    double morphology;

    // Binary view used for classifier training.
    bool positive() const { return morphology > 0.5; }
};

// n cells with m ~ U[0, 1]; identical output for identical (n, seed, side).
std::vector<ToyCell> toy_dataset(int n, std::uint64_t seed, int side = 32);

}  // namespace mitodpm::data
