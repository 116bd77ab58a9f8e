#include "mitodpm/data/votes.hpp"

#include <cstdio>
#include <ctime>

#include "mitodpm/errors.hpp"

namespace mitodpm::data {

VoteValue VoteValue::parse(double value) {
    for (std::size_t i = 0; i < kLevels.size(); ++i) {
        if (value == kLevels[i]) return VoteValue(i);
    }
    throw ValidationError("vote value " + std::to_string(value) + " is not one of {0, 0.5, 1}");
}

VoteValue VoteValue::parse(const std::string& text) {
    std::size_t used = 0;
    double value = 0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ValidationError("vote value '" + text + "' is not a number");
    }
    if (used != text.size()) throw ValidationError("vote value '" + text + "' is not a number");
    return parse(value);
}

std::string VoteValue::str() const {
    static constexpr const char* kText[] = {"0", "0.5", "1"};
    return kText[level_];
}

double aggregate_votes(std::span<const VoteRecord> votes) {
    if (votes.empty()) throw ValidationError("cannot aggregate an empty vote list");
    double sum = 0.0;
    for (const auto& v : votes) sum += v.value.value();
    return sum / static_cast<double>(votes.size());
}

double aggregate_votes(std::span<const VoteValue> values) {
    if (values.empty()) throw ValidationError("cannot aggregate an empty vote list");
    double sum = 0.0;
    for (auto v : values) sum += v.value();
    return sum / static_cast<double>(values.size());
}

VoteHistogram histogram(std::span<const VoteRecord> votes) {
    VoteHistogram counts{};
    for (const auto& v : votes) ++counts[v.value.level()];
    return counts;
}

std::string format_timestamp(Timestamp ts) {
    using namespace std::chrono;
    const auto ms = duration_cast<milliseconds>(ts.time_since_epoch()).count();
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    auto frac = static_cast<int>(ms % 1000);
    if (frac < 0) {
        frac += 1000;
        --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, frac);
    return buf;
}

Timestamp parse_timestamp(const std::string& text) {
    std::tm tm{};
    int ms = 0;
    const int n = std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm.tm_year, &tm.tm_mon, &tm.tm_mday,
                              &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms);
    if (n < 6) throw ValidationError("bad timestamp '" + text + "'");
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    const std::time_t secs = timegm(&tm);
    return Timestamp(std::chrono::seconds(secs)) + std::chrono::milliseconds(ms);
}

}  // namespace mitodpm::data
