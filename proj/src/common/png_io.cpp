#include "mitodpm/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "mitodpm/errors.hpp"

namespace mitodpm {

namespace {

void check_shape(const Rgb8Image& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw ValidationError("png: raster size does not match its dimensions");
    }
}

png_image describe(const Rgb8Image& image) {
    png_image desc;
    std::memset(&desc, 0, sizeof desc);
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(image.width);
    desc.height = static_cast<png_uint_32>(image.height);
    desc.format = PNG_FORMAT_RGB;
    return desc;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Rgb8Image& image) {
    check_shape(image);
    png_image desc = describe(image);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png: size query failed: ") + desc.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png: encode failed: ") + desc.message);
    }
    out.resize(size);
    return out;
}

Rgb8Image decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image desc;
    std::memset(&desc, 0, sizeof desc);
    desc.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
        throw ValidationError(std::string("png: ") + desc.message);
    }
    desc.format = PNG_FORMAT_RGB;
    Rgb8Image image;
    image.width = static_cast<int>(desc.width);
    image.height = static_cast<int>(desc.height);
    image.pixels.resize(PNG_IMAGE_SIZE(desc));
    if (!png_image_finish_read(&desc, nullptr, image.pixels.data(), 0, nullptr)) {
        png_image_free(&desc);
        throw ValidationError(std::string("png: ") + desc.message);
    }
    return image;
}

void write_png(const std::string& path, const Rgb8Image& image) { write_bytes(path, encode_png(image)); }

Rgb8Image read_png(const std::string& path) { return decode_png(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace mitodpm
