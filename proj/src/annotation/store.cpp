#include "mitodpm/annotation/store.hpp"

#include <algorithm>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "httplib.h"
#include "mitodpm/csv.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mitodpm::annotation {

namespace {

json vote_to_json(const LoggedVote& v) {
    return {{"session_id", v.session_id},     {"position", v.position},
            {"patch_id", v.patch_id},         {"annotator_id", v.vote.annotator_id},
            {"round", v.vote.round},          {"value", v.vote.value.value()},
            {"timestamp", data::format_timestamp(v.vote.timestamp)}};
}

LoggedVote vote_from_json(const json& j) {
    LoggedVote v;
    v.session_id = j.at("session_id").get<std::string>();
    v.position = j.at("position").get<std::size_t>();
    v.patch_id = j.at("patch_id").get<std::string>();
    v.vote.annotator_id = j.at("annotator_id").get<std::string>();
    v.vote.round = j.at("round").get<int>();
    v.vote.value = data::VoteValue::parse(j.at("value").get<double>());
    v.vote.timestamp = data::parse_timestamp(j.at("timestamp").get<std::string>());
    return v;
}

json optional_index(const std::optional<std::size_t>& i) { return i ? json(*i) : json(nullptr); }

std::optional<std::size_t> index_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<std::size_t>();
}

json marks_to_json(const std::string& series_id, const SeriesMarks& m) {
    return {{"series_id", series_id},
            {"annotator_id", m.annotator_id},
            {"earliest", optional_index(m.earliest)},
            {"convincing", optional_index(m.convincing)},
            {"timestamp", data::format_timestamp(m.timestamp)}};
}

template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
    std::ifstream in(path);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            // A torn final line (crash mid-append) is tolerated; anything else is corruption.
            if (in.peek() == EOF) break;
            throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

// Cuts an unterminated final line so later appends start on a fresh line.
void drop_torn_tail(const fs::path& path) {
    if (!fs::exists(path)) return;
    const auto size = fs::file_size(path);
    if (size == 0) return;
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.back() == '\n') return;
    const auto last = bytes.rfind('\n');
    in.close();
    fs::resize_file(path, last == std::string::npos ? 0 : last + 1);
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path data_dir) : data_dir_(std::move(data_dir)) {
    if (data_dir_.empty()) return;
    fs::create_directories(data_dir_);
    drop_torn_tail(data_dir_ / "votes.log");
    drop_torn_tail(data_dir_ / "marks.log");
    replay();
    vote_file_.open(data_dir_ / "votes.log", std::ios::app | std::ios::binary);
    marks_file_.open(data_dir_ / "marks.log", std::ios::app | std::ios::binary);
    if (!vote_file_ || !marks_file_) throw std::runtime_error("cannot open logs in " + data_dir_.string());
}

void AnnotationStore::replay() {
    const auto snapshot_path = data_dir_ / "sessions.json";
    if (fs::exists(snapshot_path)) {
        std::ifstream in(snapshot_path);
        const auto doc = json::parse(in);
        session_counter_ = doc.value("counter", std::uint64_t{0});
        for (const auto& s : doc.at("sessions")) {
            Session session;
            session.session_id = s.at("session_id").get<std::string>();
            session.annotator_id = s.at("annotator_id").get<std::string>();
            session.queue = s.at("queue").get<std::vector<std::string>>();
            session.patches = s.at("patches").get<std::size_t>();
            session.repeats = s.at("repeats").get<int>();
            session.seed = s.at("seed").get<std::uint64_t>();
            sessions_[session.session_id] = std::move(session);
        }
    }
    for_each_json_line(data_dir_ / "votes.log", [&](const json& j) { append_vote_locked(vote_from_json(j), false); });
    for_each_json_line(data_dir_ / "marks.log", [&](const json& j) {
        SeriesMarks m;
        m.annotator_id = j.at("annotator_id").get<std::string>();
        m.earliest = index_from_json(j.at("earliest"));
        m.convincing = index_from_json(j.at("convincing"));
        m.timestamp = data::parse_timestamp(j.at("timestamp").get<std::string>());
        marks_[j.at("series_id").get<std::string>()][m.annotator_id] = m;
    });
}

void AnnotationStore::load_patches(const fs::path& table_path) {
    const auto table = csv::Table::read_file(table_path.string());
    if (!table.column("patch_id") || !table.column("image")) {
        throw ValidationError(table_path.string() + ": patch table needs patch_id and image columns");
    }
    for (std::size_t row = 0; row < table.rows(); ++row) {
        const auto& id = table.cell(row, "patch_id");
        const auto& image = table.cell(row, "image");
        if (id.empty() || image.empty()) continue;
        std::unique_lock lock(mutex_);
        if (patches_.count(id)) continue;  // vote rows repeat the patch
        patches_[id] = read_bytes((table_path.parent_path() / image).string());
    }
}

void AnnotationStore::add_patch(const std::string& patch_id, std::vector<std::uint8_t> png) {
    if (patch_id.empty()) throw ValidationError("patch id must not be empty");
    std::unique_lock lock(mutex_);
    patches_[patch_id] = std::move(png);
}

void AnnotationStore::load_series(const fs::path& archive_dir) {
    const auto dir = archive_dir / "series";
    if (!fs::is_directory(dir)) throw ValidationError(archive_dir.string() + " has no series/ directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::unique_lock lock(mutex_);
    for (const auto& file : files) {
        std::ifstream in(file);
        SeriesEntry entry;
        entry.document = json::parse(in);
        entry.id = entry.document.at("id").get<std::string>();
        entry.base = archive_dir;
        entry.frames = entry.document.at("frames").size();
        series_[entry.id] = std::move(entry);
    }
}

std::vector<std::string> AnnotationStore::patch_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : patches_) ids.push_back(id);
    return ids;
}

std::string AnnotationStore::new_session_id_locked() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "session-%06llu", static_cast<unsigned long long>(++session_counter_));
    return buf;
}

Session AnnotationStore::create_session(const std::string& annotator_id, const std::vector<std::string>& patch_ids,
                                        int repeats, std::uint64_t seed) {
    if (annotator_id.empty()) throw ValidationError("annotator id is required");
    if (patch_ids.empty()) throw ValidationError("session needs at least one patch");
    if (repeats < 1 || repeats > data::kMaxRounds) {
        throw ValidationError("repeats must lie in [1, " + std::to_string(data::kMaxRounds) + "]");
    }
    std::set<std::string> distinct(patch_ids.begin(), patch_ids.end());
    if (distinct.size() != patch_ids.size()) throw ValidationError("session patch list contains duplicates");

    std::unique_lock lock(mutex_);
    std::vector<std::string> unknown;
    for (const auto& id : patch_ids) {
        if (!patches_.count(id)) unknown.push_back(id);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown patch id(s):";
        for (const auto& id : unknown) msg += " " + id;
        throw ValidationError(msg);
    }

    Session session;
    session.session_id = new_session_id_locked();
    session.annotator_id = annotator_id;
    session.patches = patch_ids.size();
    session.repeats = repeats;
    session.seed = seed;
    for (int round = 0; round < repeats; ++round) {
        auto order = patch_ids;
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(round)));
        std::shuffle(order.begin(), order.end(), rng);
        session.queue.insert(session.queue.end(), order.begin(), order.end());
    }
    sessions_[session.session_id] = session;
    snapshot_locked();
    return session;
}

Session AnnotationStore::session(const std::string& session_id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("no session '" + session_id + "'");
    return it->second;
}

std::optional<QueueItem> AnnotationStore::next_item(const std::string& session_id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("no session '" + session_id + "'");
    const auto& s = it->second;
    if (s.status == SessionStatus::closed || s.cursor >= s.queue.size()) return std::nullopt;
    QueueItem item;
    item.session_id = s.session_id;
    item.patch_id = s.queue[s.cursor];
    item.position = s.cursor;
    item.round = s.round_at(s.cursor);
    item.total = s.queue.size();
    item.image_png = patches_.at(item.patch_id);
    return item;
}

void AnnotationStore::append_vote_locked(LoggedVote entry, bool persist) {
    if (persist && vote_file_.is_open()) {
        vote_file_ << vote_to_json(entry).dump() << '\n';
        vote_file_.flush();
    }
    auto& agg = aggregates_[entry.patch_id];
    agg.first += entry.vote.value.value();
    agg.second += 1;
    ++histograms_[entry.patch_id][entry.vote.value.level()];
    log_by_patch_[entry.patch_id].push_back(log_.size());
    if (auto it = sessions_.find(entry.session_id); it != sessions_.end()) {
        auto& s = it->second;
        s.cursor = std::max(s.cursor, entry.position + 1);
        if (s.cursor >= s.queue.size()) s.status = SessionStatus::closed;
    }
    log_.push_back(std::move(entry));
}

VoteAck AnnotationStore::submit_vote(const std::string& session_id, const std::string& patch_id, double value,
                                     std::optional<std::size_t> position) {
    const auto vote_value = data::VoteValue::parse(value);
    std::unique_lock lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("no session '" + session_id + "'");
    auto& s = it->second;
    auto ack = [&](bool duplicate) {
        return VoteAck{s.cursor, s.queue.size(), s.cursor >= s.queue.size(), duplicate};
    };
    // Replays are matched against the stored vote for that cursor position.
    auto stored_at = [&](std::size_t pos) -> const LoggedVote* {
        for (auto i = log_.rbegin(); i != log_.rend(); ++i) {
            if (i->session_id == session_id && i->position == pos) return &*i;
        }
        return nullptr;
    };

    const std::size_t target = position.value_or(s.cursor);
    if (target < s.cursor) {
        const auto* prior = stored_at(target);
        if (prior && prior->patch_id == patch_id && prior->vote.value == vote_value) return ack(true);
        throw ConflictError("position " + std::to_string(target) + " was already answered differently");
    }
    if (s.cursor >= s.queue.size()) {
        if (!position && s.cursor > 0) {
            const auto* prior = stored_at(s.cursor - 1);
            if (prior && prior->patch_id == patch_id && prior->vote.value == vote_value) return ack(true);
        }
        throw ConflictError("session '" + session_id + "' is complete");
    }
    if (target > s.cursor) throw ConflictError("position " + std::to_string(target) + " is ahead of the cursor");
    if (s.queue[s.cursor] != patch_id) {
        if (!position && s.cursor > 0) {
            const auto* prior = stored_at(s.cursor - 1);
            if (prior && prior->patch_id == patch_id && prior->vote.value == vote_value) return ack(true);
        }
        throw ConflictError("expected a vote for '" + s.queue[s.cursor] + "', got '" + patch_id + "'");
    }

    LoggedVote entry;
    entry.session_id = session_id;
    entry.position = s.cursor;
    entry.patch_id = patch_id;
    entry.vote.annotator_id = s.annotator_id;
    entry.vote.round = s.round_at(s.cursor);
    entry.vote.value = vote_value;
    entry.vote.timestamp = std::chrono::system_clock::now();
    append_vote_locked(std::move(entry), true);
    return ack(false);
}

LabelSummary AnnotationStore::get_label(const std::string& patch_id) const {
    std::shared_lock lock(mutex_);
    auto it = aggregates_.find(patch_id);
    if (it == aggregates_.end() || it->second.second == 0) throw NotFoundError("no votes for patch '" + patch_id + "'");
    LabelSummary out;
    out.patch_id = patch_id;
    out.label = it->second.first / static_cast<double>(it->second.second);
    out.histogram = histograms_.at(patch_id);
    out.votes = it->second.second;
    return out;
}

LabelSummary AnnotationStore::recompute_label(const std::string& patch_id) const {
    std::shared_lock lock(mutex_);
    std::vector<data::VoteRecord> votes;
    for (const auto& entry : log_) {
        if (entry.patch_id == patch_id) votes.push_back(entry.vote);
    }
    if (votes.empty()) throw NotFoundError("no votes for patch '" + patch_id + "'");
    return {patch_id, data::aggregate_votes(votes), data::histogram(votes), votes.size()};
}

SeriesMarks AnnotationStore::mark_series(const std::string& series_id, const std::string& annotator_id,
                                         std::optional<std::size_t> earliest, std::optional<std::size_t> convincing) {
    if (annotator_id.empty()) throw ValidationError("annotator id is required");
    if (!earliest && !convincing) throw ValidationError("at least one of earliest and convincing must be set");
    if (earliest && convincing && *earliest > *convincing) {
        throw ValidationError("earliest mark must not come after the convincing mark");
    }
    std::unique_lock lock(mutex_);
    auto it = series_.find(series_id);
    if (it == series_.end()) throw NotFoundError("no series '" + series_id + "'");
    for (const auto& mark : {earliest, convincing}) {
        if (mark && *mark >= it->second.frames) {
            throw ValidationError("mark index " + std::to_string(*mark) + " outside the " +
                                  std::to_string(it->second.frames) + "-frame series");
        }
    }
    SeriesMarks marks{annotator_id, earliest, convincing, std::chrono::system_clock::now()};
    if (marks_file_.is_open()) {
        marks_file_ << marks_to_json(series_id, marks).dump() << '\n';
        marks_file_.flush();
    }
    marks_[series_id][annotator_id] = marks;
    return marks;
}

json AnnotationStore::get_series(const std::string& series_id) const {
    std::shared_lock lock(mutex_);
    auto it = series_.find(series_id);
    if (it == series_.end()) throw NotFoundError("no series '" + series_id + "'");
    const auto& entry = it->second;
    json doc = entry.document;
    json frames = json::array();
    for (const auto& rel : entry.document.at("frames")) {
        const auto bytes = read_bytes((entry.base / rel.get<std::string>()).string());
        frames.push_back(httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end())));
    }
    doc["frame_count"] = entry.frames;
    doc["frames_png_base64"] = std::move(frames);
    json marks = json::array();
    if (auto m = marks_.find(series_id); m != marks_.end()) {
        for (const auto& [_, mk] : m->second) marks.push_back(marks_to_json(series_id, mk));
    }
    doc["marks"] = std::move(marks);
    return doc;
}

std::vector<LoggedVote> AnnotationStore::vote_log() const {
    std::shared_lock lock(mutex_);
    return log_;
}

std::string AnnotationStore::export_votes_csv() const {
    std::shared_lock lock(mutex_);
    std::ostringstream out;
    out << "patch_id,annotator_id,round,value,timestamp\n";
    for (const auto& e : log_) {
        out << csv::join_row({e.patch_id, e.vote.annotator_id, std::to_string(e.vote.round), e.vote.value.str(),
                              data::format_timestamp(e.vote.timestamp)})
            << '\n';
    }
    return out.str();
}

void AnnotationStore::snapshot() const {
    std::shared_lock lock(mutex_);
    snapshot_locked();
}

void AnnotationStore::snapshot_locked() const {
    if (data_dir_.empty()) return;
    json sessions = json::array();
    for (const auto& [id, s] : sessions_) {
        sessions.push_back({{"session_id", s.session_id},
                            {"annotator_id", s.annotator_id},
                            {"queue", s.queue},
                            {"patches", s.patches},
                            {"repeats", s.repeats},
                            {"seed", s.seed},
                            {"cursor", s.cursor}});
    }
    const json doc{{"counter", session_counter_}, {"sessions", std::move(sessions)}};
    const auto path = data_dir_ / "sessions.json";
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << doc.dump() << '\n';
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace mitodpm::annotation
