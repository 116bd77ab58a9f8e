#include "mitodpm/data/records.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mitodpm/csv.hpp"
#include "mitodpm/data/toy.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"

namespace fs = std::filesystem;

namespace mitodpm::data {

namespace {

std::optional<int> parse_int(const std::string& text) {
    int value = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) return std::nullopt;
    return value;
}

std::optional<double> parse_real(const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::vector<PatchRecord> ingest_annotations(const fs::path& table_path) {
    const auto table = csv::Table::read_file(table_path.string());
    for (const char* required : {"patch_id", "slide_id", "x", "y"}) {
        if (!table.column(required)) {
            throw ValidationError(table_path.string() + ": missing required column '" + required + "'");
        }
    }
    const auto base = table_path.parent_path();

    std::vector<PatchRecord> records;
    std::map<std::string, std::size_t> index;
    std::set<std::string> labelled;
    std::set<std::tuple<std::string, std::string, int>> seen_votes;
    std::vector<std::string> problems;

    for (std::size_t row = 0; row < table.rows(); ++row) {
        const auto line = std::to_string(table.line_of(row));
        auto fail = [&](const std::string& msg) { problems.push_back("line " + line + ": " + msg); };

        const auto& id = table.cell(row, "patch_id");
        const auto& slide = table.cell(row, "slide_id");
        const auto x = parse_int(table.cell(row, "x"));
        const auto y = parse_int(table.cell(row, "y"));
        if (id.empty()) { fail("empty patch_id"); continue; }
        if (slide.empty()) { fail("empty slide_id"); continue; }
        if (!x || !y) { fail("x and y must be integers"); continue; }
        std::optional<int> height;
        if (const auto& h = table.cell(row, "slide_height"); !h.empty()) {
            height = parse_int(h);
            if (!height || *height <= 0) { fail("slide_height must be a positive integer"); continue; }
        }
        const auto& label_text = table.cell(row, "label");
        const auto& value_text = table.cell(row, "value");
        if (label_text.empty() == value_text.empty()) {
            fail("row must carry exactly one of label or value");
            continue;
        }

        auto [it, inserted] = index.try_emplace(id, records.size());
        if (inserted) {
            PatchRecord rec;
            rec.patch_id = id;
            rec.slide_id = slide;
            rec.center = {*x, *y};
            rec.slide_height = height;
            rec.image_path = table.cell(row, "image");
            records.push_back(std::move(rec));
        } else {
            const auto& rec = records[it->second];
            if (rec.slide_id != slide || rec.center.x != *x || rec.center.y != *y) {
                fail("patch_id '" + id + "' reappears with different slide or coordinates");
                continue;
            }
        }
        auto& rec = records[it->second];

        if (!label_text.empty()) {
            if (!labelled.insert(id).second) { fail("duplicate patch_id '" + id + "'"); continue; }
            const auto label = parse_real(label_text);
            if (!label || *label < 0.0 || *label > 1.0) { fail("label must be a real in [0, 1]"); continue; }
            rec.label = *label;
            continue;
        }

        VoteRecord vote;
        vote.annotator_id = table.cell(row, "annotator_id");
        if (vote.annotator_id.empty()) { fail("vote row without annotator_id"); continue; }
        try {
            vote.value = VoteValue::parse(value_text);
        } catch (const ValidationError& e) {
            fail(e.what());
            continue;
        }
        const auto& round_text = table.cell(row, "round");
        const auto round = round_text.empty() ? std::optional<int>(1) : parse_int(round_text);
        if (!round || *round < 1 || *round > kMaxRounds) {
            fail("round must be an integer in [1, " + std::to_string(kMaxRounds) + "]");
            continue;
        }
        vote.round = *round;
        if (!seen_votes.insert({id, vote.annotator_id, vote.round}).second) {
            fail("duplicate vote for patch '" + id + "' by '" + vote.annotator_id + "' in round " + round_text);
            continue;
        }
        if (const auto& ts = table.cell(row, "timestamp"); !ts.empty()) {
            try {
                vote.timestamp = parse_timestamp(ts);
            } catch (const ValidationError& e) {
                fail(e.what());
                continue;
            }
        }
        rec.votes.push_back(std::move(vote));
    }

    if (!problems.empty()) {
        std::string msg = table_path.string() + ": " + std::to_string(problems.size()) + " malformed row(s)";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }

    for (auto& rec : records) {
        if (!rec.votes.empty()) rec.label = aggregate_votes(rec.votes);
        if (!rec.image_path.empty()) rec.image = read_patch_png((base / rec.image_path).string());
    }
    return records;
}

void write_annotations(const fs::path& table, std::span<const PatchRecord> records) {
    const auto base = table.parent_path();
    if (!base.empty()) fs::create_directories(base);
    bool any_images = false;
    for (const auto& rec : records) any_images |= !rec.image.empty();
    if (any_images) fs::create_directories(base / "patches");

    std::ofstream out(table, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + table.string());
    out << kAnnotationHeader << '\n';
    for (const auto& rec : records) {
        std::string image;
        if (!rec.image.empty()) {
            image = "patches/" + rec.patch_id + ".png";
            write_patch_png((base / image).string(), rec.image);
        }
        const std::string height = rec.slide_height ? std::to_string(*rec.slide_height) : "";
        const std::vector<std::string> prefix{rec.patch_id, rec.slide_id, std::to_string(rec.center.x),
                                              std::to_string(rec.center.y), height, image};
        auto emit = [&](std::vector<std::string> tail) {
            auto fields = prefix;
            fields.insert(fields.end(), tail.begin(), tail.end());
            out << csv::join_row(fields) << '\n';
        };
        if (rec.votes.empty()) {
            emit({format_real(rec.label), "", "", "", ""});
        } else {
            for (const auto& v : rec.votes) {
                emit({"", v.annotator_id, std::to_string(v.round), v.value.str(), format_timestamp(v.timestamp)});
            }
        }
    }
}

std::vector<PatchRecord> toy_records(int n, std::uint64_t seed, int side, int slides) {
    if (slides < 1) throw ValidationError("toy records need at least one slide");
    constexpr int kSlideWidth = 8192;
    constexpr int kSlideHeight = 8192;
    const auto cells = toy_dataset(n, seed, side);
    std::mt19937_64 rng(mix_seed(seed, 0xC0FFEE));
    std::uniform_int_distribution<int> coord(0, kSlideHeight - 1);
    std::vector<PatchRecord> records;
    records.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        PatchRecord rec;
        char id[32];
        std::snprintf(id, sizeof id, "toy%06zu", i);
        rec.patch_id = id;
        rec.slide_id = "toy-slide-" + std::to_string(i % static_cast<std::size_t>(slides));
        rec.center = {coord(rng) % kSlideWidth, coord(rng)};
        rec.slide_height = kSlideHeight;
        rec.image = cells[i].image;
        rec.label = cells[i].morphology;
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace mitodpm::data
