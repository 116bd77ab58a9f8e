#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "mitodpm/data/votes.hpp"

namespace mitodpm::annotation {

enum class SessionStatus { open, closed };

struct Session {
    std::string session_id;
    std::string annotator_id;
    std::vector<std::string> queue;  // `repeats` shuffles of the patch list, concatenated
    std::size_t patches = 0;         // distinct patches per round
    int repeats = 1;
    std::uint64_t seed = 0;
    std::size_t cursor = 0;
    SessionStatus status = SessionStatus::open;

    int round_at(std::size_t position) const { return static_cast<int>(position / patches) + 1; }
};

// Payload of the item under the cursor. Deliberately carries no vote history.
struct QueueItem {
    std::string session_id;
    std::string patch_id;
    std::size_t position = 0;
    int round = 1;
    std::size_t total = 0;
    std::vector<std::uint8_t> image_png;
};

struct VoteAck {
    std::size_t cursor = 0;
    std::size_t total = 0;
    bool complete = false;
    bool duplicate = false;  // replay of an already stored vote
};

struct LabelSummary {
    std::string patch_id;
    double label = 0.0;
    data::VoteHistogram histogram{};
    std::size_t votes = 0;
};

struct LoggedVote {
    std::string session_id;
    std::size_t position = 0;
    std::string patch_id;
    data::VoteRecord vote;
};

struct SeriesMarks {
    std::string annotator_id;
    std::optional<std::size_t> earliest;
    std::optional<std::size_t> convincing;
    data::Timestamp timestamp{};
};

struct SeriesEntry {
    std::string id;
    std::filesystem::path base;  // archive directory the frame paths are relative to
    nlohmann::json document;     // series/<id>.json from a transform archive
    std::size_t frames = 0;
};

// Thread-safe annotation state. Every vote goes to an append-only log (kept
// in memory and, with a data directory, in votes.log as JSON lines); patch
// aggregates are a projection of that log. Writes are serialised, reads may
// run concurrently.
class AnnotationStore {
public:
    // Empty `data_dir` keeps everything in memory. Otherwise sessions.json,
    // votes.log and marks.log there are replayed on construction.
    explicit AnnotationStore(std::filesystem::path data_dir = {});

    // Patch images come from an annotation table (patch_id and image columns).
    void load_patches(const std::filesystem::path& table);
    void add_patch(const std::string& patch_id, std::vector<std::uint8_t> png);
    // Registers every series/<id>.json under a transform archive directory.
    void load_series(const std::filesystem::path& archive_dir);

    std::vector<std::string> patch_ids() const;

    Session create_session(const std::string& annotator_id, const std::vector<std::string>& patch_ids, int repeats,
                           std::uint64_t seed);
    Session session(const std::string& session_id) const;
    // nullopt once the queue is exhausted.
    std::optional<QueueItem> next_item(const std::string& session_id) const;
    // `position`, when given, is the cursor index the client is answering and
    // makes retries idempotent. Without it a repeat of the last accepted vote
    // is acknowledged as a duplicate.
    VoteAck submit_vote(const std::string& session_id, const std::string& patch_id, double value,
                        std::optional<std::size_t> position = std::nullopt);

    LabelSummary get_label(const std::string& patch_id) const;
    // Recomputes from the full log rather than the running projection.
    LabelSummary recompute_label(const std::string& patch_id) const;

    SeriesMarks mark_series(const std::string& series_id, const std::string& annotator_id,
                            std::optional<std::size_t> earliest, std::optional<std::size_t> convincing);
    // Series document with frames inlined as base64 PNG and the stored marks.
    nlohmann::json get_series(const std::string& series_id) const;

    std::vector<LoggedVote> vote_log() const;
    // patch_id,annotator_id,round,value,timestamp
    std::string export_votes_csv() const;

    // Writes sessions.json atomically; no-op without a data directory.
    void snapshot() const;

private:
    void append_vote_locked(LoggedVote entry, bool persist);
    void snapshot_locked() const;
    void replay();
    std::string new_session_id_locked();

    std::filesystem::path data_dir_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::vector<std::uint8_t>> patches_;
    std::map<std::string, Session> sessions_;
    std::uint64_t session_counter_ = 0;
    std::vector<LoggedVote> log_;
    std::map<std::string, std::vector<std::size_t>> log_by_patch_;
    std::map<std::string, std::pair<double, std::size_t>> aggregates_;  // sum, count
    std::map<std::string, data::VoteHistogram> histograms_;
    std::map<std::string, SeriesEntry> series_;
    std::map<std::string, std::map<std::string, SeriesMarks>> marks_;  // series -> annotator -> marks
    std::ofstream vote_file_;
    std::ofstream marks_file_;
};

}  // namespace mitodpm::annotation
