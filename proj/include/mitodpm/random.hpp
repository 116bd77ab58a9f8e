#pragma once

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cstdint>

namespace mitodpm {

// Explicit CPU generator; every random draw in the library goes through one
// of these so results never depend on the global torch seed.
inline torch::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace mitodpm
