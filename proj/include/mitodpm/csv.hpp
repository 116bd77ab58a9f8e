#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mitodpm::csv {

// Minimal RFC 4180 reader: comma separated, double-quote escaping, first row
// is the header.
class Table {
public:
    static Table parse(std::istream& in);
    static Table read_file(const std::string& path);

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    std::optional<std::size_t> column(std::string_view name) const;

    // Cell by row and column name; empty string when the column is absent.
    const std::string& cell(std::size_t row, std::string_view name) const;
    // 1-based line number of the row in the source, for diagnostics.
    std::size_t line_of(std::size_t row) const { return lines_.at(row); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> lines_;
};

std::string escape(std::string_view field);
std::string join_row(const std::vector<std::string>& fields);

}  // namespace mitodpm::csv
