#pragma once

// CSV ingestion. RFC 4180 quoting: fields may be double-quoted; quoted
// fields may contain commas, CR/LF and doubled quotes. Loading is two-pass
// so storage is typed up front: pass one infers a per-column type (numeric
// iff every non-missing cell parses as a finite number), pass two stores
// the values. Empty cells and the sentinel "nan" (any case) are missing.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dataset.hpp"

namespace flowhunter {

enum class ColumnType { Numeric, Categorical };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Categorical;
    std::vector<double> nums;       // filled when type == Numeric
    std::vector<std::string> strs;  // filled when type == Categorical
    std::vector<std::uint8_t> missing;

    std::int64_t rows() const { return static_cast<std::int64_t>(missing.size()); }
};

// Rectangular table with uniquely named, typed columns.
struct RawTable {
    std::vector<Column> cols;
    std::int64_t n_rows = 0;

    std::int64_t n_cols() const { return static_cast<std::int64_t>(cols.size()); }

    int col_index(const std::string& name) const {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (cols[i].name == name) return static_cast<int>(i);
        }
        return -1;
    }

    const Column& col(const std::string& name) const {
        const int i = col_index(name);
        if (i < 0) throw DataError("table: no column named '" + name + "'");
        return cols[static_cast<std::size_t>(i)];
    }

    void validate() const {
        std::unordered_set<std::string> seen;
        for (const auto& c : cols) {
            if (!seen.insert(c.name).second) {
                throw DataError("table: duplicate column name '" + c.name + "'");
            }
            if (c.rows() != n_rows) {
                throw DataError("table: column '" + c.name + "' has " +
                                std::to_string(c.rows()) + " rows, expected " +
                                std::to_string(n_rows));
            }
            const auto n = static_cast<std::size_t>(n_rows);
            if (c.type == ColumnType::Numeric && c.nums.size() != n) {
                throw DataError("table: numeric column '" + c.name + "' storage mismatch");
            }
            if (c.type == ColumnType::Categorical && c.strs.size() != n) {
                throw DataError("table: categorical column '" + c.name + "' storage mismatch");
            }
        }
    }
};

namespace csv {

inline bool cell_missing(const std::string& s) {
    if (s.empty()) return true;
    if (s.size() == 3 && (s[0] == 'n' || s[0] == 'N') && (s[1] == 'a' || s[1] == 'A') &&
        (s[2] == 'n' || s[2] == 'N')) {
        return true;
    }
    return false;
}

// Whole-cell parse; rejects inf/nan so downstream matrices stay finite.
inline bool parse_numeric(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    if (b != e && *b == '+') ++b;  // from_chars rejects a leading plus
    auto res = std::from_chars(b, e, out);
    if (res.ec != std::errc() || res.ptr != e) return false;
    return std::isfinite(out);
}

// Streaming RFC 4180 row reader over a buffered file.
class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("csv: cannot open " + path);
        buf_.resize(1 << 20);
        refill();
    }

    // Reads one record into fields; returns false at end of input.
    // line_number() afterwards gives the 1-based line the record started on.
    bool next_row(std::vector<std::string>& fields) {
        if (done_) return false;
        fields.clear();
        record_line_ = line_;
        std::string cell;
        bool quoted = false;
        bool any = false;
        for (;;) {
            const int ch = get();
            if (ch < 0) {
                if (quoted) {
                    throw DataError("csv: " + path_ + " ends inside a quoted field (line " +
                                    std::to_string(record_line_) + ")");
                }
                done_ = true;
                if (!any && cell.empty() && fields.empty()) return false;
                fields.push_back(std::move(cell));
                return true;
            }
            const char c = static_cast<char>(ch);
            if (quoted) {
                if (c == '"') {
                    if (peek() == '"') {
                        get();
                        cell.push_back('"');
                    } else {
                        quoted = false;
                    }
                } else {
                    if (c == '\n') ++line_;
                    cell.push_back(c);
                }
                continue;
            }
            switch (c) {
                case '"':
                    quoted = true;
                    any = true;
                    break;
                case ',':
                    fields.push_back(std::move(cell));
                    cell.clear();
                    any = true;
                    break;
                case '\r':
                    if (peek() == '\n') get();
                    ++line_;
                    fields.push_back(std::move(cell));
                    return true;
                case '\n':
                    ++line_;
                    fields.push_back(std::move(cell));
                    return true;
                default:
                    cell.push_back(c);
                    any = true;
                    break;
            }
        }
    }

    std::int64_t line_number() const { return record_line_; }

private:
    int get() {
        if (pos_ == len_ && !refill()) return -1;
        return static_cast<unsigned char>(buf_[pos_++]);
    }

    int peek() {
        if (pos_ == len_ && !refill()) return -1;
        return static_cast<unsigned char>(buf_[pos_]);
    }

    bool refill() {
        in_.read(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        len_ = static_cast<std::size_t>(in_.gcount());
        pos_ = 0;
        return len_ > 0;
    }

    std::ifstream in_;
    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::size_t len_ = 0;
    std::int64_t line_ = 1;
    std::int64_t record_line_ = 1;
    bool done_ = false;
};

} // namespace csv

struct LoadOptions {
    // Columns dropped during loading; useful for wide payload columns that
    // would otherwise be parked in memory just to be discarded later.
    std::unordered_set<std::string> skip_columns;
    // Columns that must be present in the header.
    std::vector<std::string> require_columns;
};

inline RawTable load_csv(const std::string& path, const LoadOptions& opt = {}) {
    std::vector<std::string> header;
    {
        csv::Reader reader(path);
        if (!reader.next_row(header)) {
            throw DataError("csv: " + path + " is empty; expected a header row");
        }
    }
    const std::size_t width = header.size();
    std::unordered_map<std::string, int> name_index;
    for (std::size_t i = 0; i < width; ++i) {
        if (header[i].empty()) {
            throw DataError("csv: " + path + " header column " + std::to_string(i + 1) +
                            " is unnamed");
        }
        if (!name_index.emplace(header[i], static_cast<int>(i)).second) {
            throw DataError("csv: " + path + " has duplicate column '" + header[i] + "'");
        }
    }
    for (const auto& need : opt.require_columns) {
        if (!name_index.count(need)) {
            throw DataError("csv: " + path + " is missing required column '" + need + "'");
        }
    }

    std::vector<std::uint8_t> keep(width, 1);
    for (std::size_t i = 0; i < width; ++i) {
        if (opt.skip_columns.count(header[i])) keep[i] = 0;
    }

    // Pass one: row count and per-column numeric inference.
    std::vector<std::uint8_t> numeric(width, 1);
    std::vector<std::uint8_t> observed(width, 0);
    std::int64_t n_rows = 0;
    {
        csv::Reader reader(path);
        std::vector<std::string> row;
        reader.next_row(row);  // header
        while (reader.next_row(row)) {
            if (row.size() != width) {
                throw DataError("csv: " + path + " row at line " +
                                std::to_string(reader.line_number()) + " has " +
                                std::to_string(row.size()) + " fields, expected " +
                                std::to_string(width));
            }
            ++n_rows;
            for (std::size_t i = 0; i < width; ++i) {
                if (!keep[i] || !numeric[i]) continue;
                if (csv::cell_missing(row[i])) continue;
                observed[i] = 1;
                double v;
                if (!csv::parse_numeric(row[i], v)) numeric[i] = 0;
            }
        }
    }

    RawTable t;
    t.n_rows = n_rows;
    for (std::size_t i = 0; i < width; ++i) {
        if (!keep[i]) continue;
        Column c;
        c.name = header[i];
        // A column with no observed values stays categorical (all-missing).
        c.type = (numeric[i] && observed[i]) ? ColumnType::Numeric : ColumnType::Categorical;
        c.missing.reserve(static_cast<std::size_t>(n_rows));
        if (c.type == ColumnType::Numeric) {
            c.nums.reserve(static_cast<std::size_t>(n_rows));
        } else {
            c.strs.reserve(static_cast<std::size_t>(n_rows));
        }
        t.cols.push_back(std::move(c));
    }

    // Pass two: typed storage.
    {
        csv::Reader reader(path);
        std::vector<std::string> row;
        reader.next_row(row);
        while (reader.next_row(row)) {
            std::size_t out = 0;
            for (std::size_t i = 0; i < width; ++i) {
                if (!keep[i]) continue;
                Column& c = t.cols[out++];
                const bool miss = csv::cell_missing(row[i]);
                c.missing.push_back(miss ? 1 : 0);
                if (c.type == ColumnType::Numeric) {
                    double v = 0.0;
                    if (!miss && !csv::parse_numeric(row[i], v)) {
                        throw DataError("csv: " + path + " line " +
                                        std::to_string(reader.line_number()) +
                                        ": column '" + c.name + "' stopped parsing as numeric");
                    }
                    c.nums.push_back(miss ? 0.0 : v);
                } else {
                    c.strs.push_back(miss ? std::string() : std::move(row[i]));
                }
            }
        }
    }
    t.validate();
    return t;
}

} // namespace flowhunter
