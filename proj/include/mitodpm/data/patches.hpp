#pragma once

#include "mitodpm/data/image.hpp"
#include "mitodpm/png_io.hpp"

namespace mitodpm::data {

struct PixelCoord {
    int x = 0;
    int y = 0;
};

// Crops a side x side tile centred on `center` (rows center.y - side/2 ..
// center.y + side/2 - 1). Regions past the slide border are mirrored without
// repeating the edge pixel. Throws ValidationError when the centre lies off
// the slide or `side` is odd.
ImagePatch extract_patch(const Rgb8Image& slide, PixelCoord center, int side = kDefaultPatchSide);

}  // namespace mitodpm::data
