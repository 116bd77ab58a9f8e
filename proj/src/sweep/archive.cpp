#include "mitodpm/sweep/archive.hpp"

#include <cstdio>
#include <fstream>

#include "mitodpm/csv.hpp"
#include "mitodpm/errors.hpp"

namespace fs = std::filesystem;

namespace mitodpm::sweep {

namespace {

std::ofstream open_text(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_text(path) << j.dump(2) << '\n'; }

}  // namespace

std::string format_decimal(double value, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return buf;
}

void write_sweep_archive(const fs::path& dir, std::span<const SweepSeries> series, const CurveStats& curve,
                         nlohmann::json manifest, int cell_size) {
    fs::create_directories(dir / "images");
    auto scores = open_text(dir / "scores.csv");
    scores << "seed,condition,score,accepted\n";
    std::vector<SweepSeries> accepted;
    nlohmann::json images = nlohmann::json::array();
    for (const auto& s : series) {
        if (!s.scored()) throw StateError("sweep archive needs scored series");
        for (std::size_t c = 0; c < s.images.size(); ++c) {
            char name[64];
            std::snprintf(name, sizeof name, "images/seed%llu_c%02zu.png", static_cast<unsigned long long>(s.seed), c);
            write_patch_png((dir / name).string(), s.images[c]);
            images.push_back(name);
            scores << s.seed << ',' << format_decimal(s.conditions[c], 2) << ',' << format_decimal(s.scores[c]) << ','
                   << (s.accepted ? 1 : 0) << '\n';
        }
        if (s.accepted) accepted.push_back(s);
    }

    auto curve_out = open_text(dir / "curve.csv");
    curve_out << "condition,mean,median,standard_error,n\n";
    for (std::size_t c = 0; c < curve.conditions.size(); ++c) {
        curve_out << format_decimal(curve.conditions[c], 2) << ',' << format_decimal(curve.mean[c]) << ','
                  << format_decimal(curve.median[c]) << ',' << format_decimal(curve.standard_error[c]) << ',' << curve.n
                  << '\n';
    }

    if (!accepted.empty()) {
        write_png((dir / "montage_accepted.png").string(), tensor_to_rgb8(montage(accepted, cell_size)));
        manifest["montage"] = "montage_accepted.png";
    } else {
        manifest["montage"] = nullptr;
    }
    manifest["series"] = series.size();
    manifest["accepted"] = accepted.size();
    manifest["images"] = std::move(images);
    write_json(dir / "manifest.json", manifest);
}

void write_transform_archive(const fs::path& dir, std::span<const diffusion::TransformationSeries> series, double tau,
                             nlohmann::json manifest, int cell_size) {
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "strips");
    fs::create_directories(dir / "series");
    auto scores = open_text(dir / "scores.csv");
    scores << "series_id,stop_time,score\n";
    auto thresholds = open_text(dir / "thresholds.csv");
    thresholds << "series_id,tau,index,stop_time\n";

    std::vector<std::vector<ImagePatch>> rows;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : series) {
        if (!s.scored()) throw StateError("transform archive needs scored series");
        nlohmann::json frames = nlohmann::json::array();
        for (std::size_t i = 0; i < s.outputs.size(); ++i) {
            const auto name = "frames/" + s.id + "_s" + std::to_string(s.stop_times[i]) + ".png";
            write_patch_png((dir / name).string(), s.outputs[i]);
            frames.push_back(name);
            scores << csv::escape(s.id) << ',' << s.stop_times[i] << ',' << format_decimal(s.scores[i]) << '\n';
        }
        const auto source = "frames/" + s.id + "_source.png";
        write_patch_png((dir / source).string(), s.source);
        write_png((dir / "strips" / (s.id + ".png")).string(), tensor_to_rgb8(montage({s.outputs}, cell_size)));
        rows.push_back(s.outputs);

        const auto hit = diffusion::resemblance_threshold(s, tau);
        thresholds << csv::escape(s.id) << ',' << format_decimal(tau, 2) << ','
                   << (hit ? std::to_string(*hit) : "") << ',' << (hit ? std::to_string(s.stop_times[*hit]) : "")
                   << '\n';

        nlohmann::json doc{{"id", s.id},
                           {"source", source},
                           {"stop_times", s.stop_times},
                           {"frames", frames},
                           {"scores", s.scores}};
        write_json(dir / "series" / (s.id + ".json"), doc);
        ids.push_back(s.id);
    }
    if (!rows.empty()) write_png((dir / "montage.png").string(), tensor_to_rgb8(montage(rows, cell_size)));
    manifest["series"] = std::move(ids);
    manifest["tau"] = tau;
    write_json(dir / "manifest.json", manifest);
}

}  // namespace mitodpm::sweep
