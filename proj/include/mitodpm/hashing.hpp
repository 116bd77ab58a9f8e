#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mitodpm {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

// First 12 hex characters of the SHA-256; used for run directory names.
std::string short_hash(std::string_view text);

// SplitMix64 step. Used to derive independent child seeds from a parent seed
// and a stream index without consuming the parent generator.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mitodpm
