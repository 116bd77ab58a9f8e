#pragma once

#include <array>
#include <chrono>
#include <span>
#include <string>

namespace mitodpm::data {

// One of the three allowed vote levels: 0 (not mitotic), 0.5 (possible), 1 (definite).
class VoteValue {
public:
    static constexpr std::array<double, 3> kLevels{0.0, 0.5, 1.0};

    // Throws ValidationError unless `value` is exactly one of kLevels.
    static VoteValue parse(double value);
    static VoteValue parse(const std::string& text);

    double value() const { return kLevels[level_]; }
    std::size_t level() const { return level_; }
    std::string str() const;

    friend bool operator==(VoteValue, VoteValue) = default;

private:
    explicit VoteValue(std::size_t level) : level_(level) {}
    std::size_t level_;
};

inline constexpr int kMaxRounds = 3;

using Timestamp = std::chrono::system_clock::time_point;

struct VoteRecord {
    std::string annotator_id;
    int round = 1;  // 1..kMaxRounds
    VoteValue value = VoteValue::parse(0.0);
    Timestamp timestamp{};
};

// Per-level vote counts, indexed like VoteValue::kLevels.
using VoteHistogram = std::array<std::size_t, 3>;

// Mean over every annotation instance. Throws ValidationError when empty.
double aggregate_votes(std::span<const VoteRecord> votes);
double aggregate_votes(std::span<const VoteValue> values);

VoteHistogram histogram(std::span<const VoteRecord> votes);

// ISO 8601 UTC with millisecond precision, e.g. 2024-05-01T12:00:00.000Z.
std::string format_timestamp(Timestamp ts);
Timestamp parse_timestamp(const std::string& text);

}  // namespace mitodpm::data
