#pragma once

#include <span>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mitodpm/data/image.hpp"
#include "mitodpm/data/patches.hpp"
#include "mitodpm/data/votes.hpp"

namespace mitodpm::data {

// An annotated candidate cell.
struct PatchRecord {
    std::string patch_id;
    std::string slide_id;
    PixelCoord center;
    std::optional<int> slide_height;  // needed by the vertical train/validation split
    std::string image_path;           // as written in the table, relative to it
    ImagePatch image;                 // empty when the table carries no image column
    std::vector<VoteRecord> votes;
    double label = 0.0;  // aggregate_votes(votes) when votes exist
};

// Annotation table columns. Required: patch_id, slide_id, x, y. Optional:
// slide_height, image, label, annotator_id, round, value, timestamp.
//
// A row carrying `label` is a label row (one per patch); a row carrying
// `value` is a vote row and a patch may have many. Images are resolved
// relative to the table's directory.
inline constexpr const char* kAnnotationHeader =
    "patch_id,slide_id,x,y,slide_height,image,label,annotator_id,round,value,timestamp";

// Throws ValidationError listing every malformed row by line number.
std::vector<PatchRecord> ingest_annotations(const std::filesystem::path& table);

// Writes `table` (with a header of kAnnotationHeader) and, for records that
// carry an image, PNGs under `<table dir>/patches/`. Records with votes emit
// one vote row per vote; others emit a label row.
void write_annotations(const std::filesystem::path& table, std::span<const PatchRecord> records);

// Toy cells wrapped as records spread over `slides` synthetic slides with
// uniform vertical positions; label = morphology.
std::vector<PatchRecord> toy_records(int n, std::uint64_t seed, int side = 32, int slides = 4);

}  // namespace mitodpm::data
