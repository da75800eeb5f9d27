#pragma once

// Headered CSV tables and the dataset column schema.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "extval/model.hpp"

namespace extval::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// 1-based source line of each row.
    std::vector<std::size_t> lines;

    std::optional<std::size_t> find(const std::string& name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        return std::nullopt;
    }
    std::size_t require(const std::string& name) const {
        auto j = find(name);
        if (!j) throw InvalidArgument("column '" + name + "' not found in input header");
        return *j;
    }
};

namespace detail {

inline std::vector<std::string> split_record(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"' && field.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else {
            field += ch;
        }
    }
    if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quoted field");
    out.push_back(std::move(field));
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

} // namespace detail

/// Reads a headered table. Blank lines are skipped; every record must have
/// as many fields as the header.
inline Table read_table(std::istream& in) {
    Table t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_record(line, line_no);
        for (auto& f : fields) f = detail::trim(f);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(line_no);
    }
    if (!have_header) throw DataError("input is empty");
    return t;
}

inline double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    if (!s.empty() && *b == '+') ++b;
    auto res = std::from_chars(b, e, v);
    if (s.empty() || res.ec != std::errc() || res.ptr != e)
        throw DataError("line " + std::to_string(line) + ": column '" + column + "' is not a number: '" + s + "'");
    return v;
}

/// Numeric values of one column.
inline std::vector<double> numeric_column(const Table& t, const std::string& name) {
    const std::size_t j = t.require(name);
    std::vector<double> out;
    out.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) out.push_back(parse_number(t.rows[i][j], t.lines[i], name));
    return out;
}

struct ColumnMap {
    std::string y = "y";
    std::string d = "d";
    std::vector<std::string> x;
    std::optional<std::string> z, c, weight;
};

/// Builds a dataset from mapped columns. Missing columns are configuration
/// errors; malformed cells are data errors.
inline Dataset read_dataset(const Table& t, const ColumnMap& map, const SupportBounds& bounds) {
    if (map.x.empty()) throw InvalidArgument("column mapping lists no covariate columns");
    const std::size_t jy = t.require(map.y), jd = t.require(map.d);
    std::vector<std::size_t> jx;
    for (const auto& name : map.x) jx.push_back(t.require(name));
    std::optional<std::size_t> jz, jc, jw;
    if (map.z) jz = t.require(*map.z);
    if (map.c) jc = t.require(*map.c);
    if (map.weight) jw = t.require(*map.weight);
    if (t.rows.empty()) throw DataError("input has a header but no rows");
    bounds.validate();

    std::vector<Observation> obs;
    obs.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const std::size_t ln = t.lines[i];
        auto fail = [&](const std::string& msg) { return DataError("line " + std::to_string(ln) + ": " + msg); };
        Observation o;
        o.y = parse_number(r[jy], ln, map.y);
        if (!std::isfinite(o.y)) throw fail("outcome must be finite");
        if (!bounds.contains(o.y)) throw fail("outcome outside support bounds");
        const double d = parse_number(r[jd], ln, map.d);
        if (d != 0.0 && d != 1.0) throw fail("treatment must be 0 or 1");
        o.d = static_cast<int>(d);
        for (std::size_t k = 0; k < jx.size(); ++k) {
            const double v = parse_number(r[jx[k]], ln, map.x[k]);
            if (!std::isfinite(v)) throw fail("covariates must be finite");
            o.x.push_back(v);
        }
        if (jz) o.z = parse_number(r[*jz], ln, *map.z);
        if (jc) {
            const double c = parse_number(r[*jc], ln, *map.c);
            if (c != std::floor(c) || std::abs(c) > 9.0e15) throw fail("group label must be an integer");
            o.c = static_cast<std::int64_t>(c);
        }
        if (jw) {
            o.w = parse_number(r[*jw], ln, *map.weight);
            if (!(o.w > 0.0) || !std::isfinite(o.w)) throw fail("weight must be positive");
        }
        obs.push_back(std::move(o));
    }
    return Dataset(std::move(obs), bounds);
}

/// Default column names used by write_dataset.
inline ColumnMap default_columns(const Dataset& data) {
    ColumnMap m;
    for (std::size_t k = 0; k < data.dim(); ++k) m.x.push_back("x" + std::to_string(k));
    if (data.has_instrument()) m.z = "z";
    if (data.has_groups()) m.c = "c";
    m.weight = "w";
    return m;
}

struct ExtraColumn {
    std::string name;
    std::vector<double> values;
};

/// Writes the dataset with default column names plus any extra columns,
/// using shortest round-trip number formatting.
inline void write_dataset(std::ostream& out, const Dataset& data, const std::vector<ExtraColumn>& extra = {}) {
    for (const auto& e : extra)
        if (e.values.size() != data.size()) throw DimensionMismatch("extra column " + e.name, data.size(), e.values.size());
    const auto m = default_columns(data);
    out << m.y << ',' << m.d;
    for (const auto& x : m.x) out << ',' << x;
    if (m.z) out << ',' << *m.z;
    if (m.c) out << ',' << *m.c;
    out << ',' << *m.weight;
    for (const auto& e : extra) out << ',' << e.name;
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        out << extval::detail::format_double(o.y) << ',' << o.d;
        for (double v : o.x) out << ',' << extval::detail::format_double(v);
        if (m.z) out << ',' << extval::detail::format_double(*o.z);
        if (m.c) out << ',' << *o.c;
        out << ',' << extval::detail::format_double(o.w);
        for (const auto& e : extra) out << ',' << extval::detail::format_double(e.values[i]);
        out << '\n';
    }
}

} // namespace extval::csv
