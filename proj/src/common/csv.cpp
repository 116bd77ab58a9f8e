#include "mitodpm/csv.hpp"

#include <fstream>
#include <istream>

#include "mitodpm/errors.hpp"

namespace mitodpm::csv {

namespace {

const std::string kEmpty;

// Splits one logical record; quoted fields may span physical lines.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char ch;
    while (in.get(ch)) {
        any = true;
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
        } else if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            ++line;
            break;
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    if (!any) return false;
    if (in_quotes) throw ValidationError("csv: unterminated quoted field near line " + std::to_string(line));
    fields.push_back(std::move(field));
    return true;
}

bool blank(const std::vector<std::string>& fields) {
    return fields.size() == 1 && fields.front().empty();
}

}  // namespace

Table Table::parse(std::istream& in) {
    Table table;
    std::vector<std::string> fields;
    std::size_t line = 1;
    std::size_t start = line;
    if (!read_record(in, fields, line) || blank(fields)) throw ValidationError("csv: missing header row");
    table.header_ = fields;
    for (;;) {
        start = line;
        if (!read_record(in, fields, line)) break;
        if (blank(fields)) continue;
        if (fields.size() != table.header_.size()) {
            throw ValidationError("csv: line " + std::to_string(start) + " has " + std::to_string(fields.size()) +
                                  " fields, header has " + std::to_string(table.header_.size()));
        }
        table.rows_.push_back(fields);
        table.lines_.push_back(start);
    }
    return table;
}

Table Table::read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("csv: cannot open " + path);
    return parse(in);
}

std::optional<std::size_t> Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) return i;
    }
    return std::nullopt;
}

const std::string& Table::cell(std::size_t row, std::string_view name) const {
    auto col = column(name);
    if (!col) return kEmpty;
    return rows_.at(row).at(*col);
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

std::string join_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += escape(fields[i]);
    }
    return out;
}

}  // namespace mitodpm::csv
