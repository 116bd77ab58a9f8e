#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mitodpm/diffusion/diffusion.hpp"
#include "mitodpm/sweep/sweep.hpp"

namespace mitodpm::sweep {

// Layout:
//   manifest.json          caller-supplied metadata plus file lists
//   images/seed<S>_c<i>.png
//   scores.csv             seed,condition,score,accepted
//   curve.csv              condition,mean,median,standard_error,n
//   montage_accepted.png   one row per accepted series (absent when none)
void write_sweep_archive(const std::filesystem::path& dir, std::span<const SweepSeries> series,
                         const CurveStats& curve, nlohmann::json manifest, int cell_size);

// Layout:
//   manifest.json
//   frames/<id>_s<stop>.png    one per (input, stop time)
//   strips/<id>.png            one row per input, frames in stop-time order
//   montage.png                all strips stacked
//   scores.csv                 series_id,stop_time,score
//   thresholds.csv             series_id,tau,index,stop_time (empty when never reached)
//   series/<id>.json           frame list and scores, read by the annotation service
void write_transform_archive(const std::filesystem::path& dir, std::span<const diffusion::TransformationSeries> series,
                             double tau, nlohmann::json manifest, int cell_size);

std::string format_decimal(double value, int digits = 6);

}  // namespace mitodpm::sweep
