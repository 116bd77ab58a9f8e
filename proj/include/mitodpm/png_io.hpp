#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mitodpm {

// Interleaved 8-bit RGB raster, row-major.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3
};

std::vector<std::uint8_t> encode_png(const Rgb8Image& image);
Rgb8Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::string& path, const Rgb8Image& image);
Rgb8Image read_png(const std::string& path);

std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mitodpm
