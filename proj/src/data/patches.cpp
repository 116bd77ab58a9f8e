#include "mitodpm/data/patches.hpp"

#include "mitodpm/errors.hpp"

namespace mitodpm::data {

namespace {

int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

ImagePatch extract_patch(const Rgb8Image& slide, PixelCoord center, int side) {
    if (side <= 0 || side % 2) throw ValidationError("patch side must be positive and even");
    if (slide.width <= 0 || slide.height <= 0) throw ValidationError("slide image is empty");
    if (center.x < 0 || center.y < 0 || center.x >= slide.width || center.y >= slide.height) {
        throw ValidationError("patch centre (" + std::to_string(center.x) + ", " + std::to_string(center.y) +
                              ") lies outside the slide");
    }
    Rgb8Image tile;
    tile.width = tile.height = side;
    tile.pixels.resize(static_cast<std::size_t>(side) * side * 3);
    const int top = center.y - side / 2;
    const int left = center.x - side / 2;
    for (int r = 0; r < side; ++r) {
        const int sy = reflect(top + r, slide.height);
        for (int c = 0; c < side; ++c) {
            const int sx = reflect(left + c, slide.width);
            const auto src = (static_cast<std::size_t>(sy) * slide.width + sx) * 3;
            const auto dst = (static_cast<std::size_t>(r) * side + c) * 3;
            for (int k = 0; k < 3; ++k) tile.pixels[dst + k] = slide.pixels[src + k];
        }
    }
    return ImagePatch::from_rgb8(tile);
}

}  // namespace mitodpm::data
