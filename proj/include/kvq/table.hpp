// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kvq/common.hpp"
#include "kvq/ledger.hpp"

namespace kvq {

/// Columns of the benchmark-table header contract, after the leading
/// `method` column.
inline const std::vector<std::string>& table_contract_columns() {
    static const std::vector<std::string> cols = {"comp", "peak_vram", "runtime", "img",
                                                  "ssim", "lpips",     "psnr",    "drift"};
    return cols;
}

/// A method-keyed numeric table. Missing cells are NaN; the paper's "inf"
/// PSNR cells parse to +infinity.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::string> methods;
    std::vector<std::vector<double>> rows;

    std::size_t column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == name) return i;
        }
        throw error("table: unknown column: " + name);
    }

    double cell(std::size_t row, const std::string& column) const {
        return rows[row][column_index(column)];
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_cell(const std::string& s) {
    if (s.empty() || s == "--" || s == "na" || s == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    KVQ_REQUIRE(pos == s.size(), "table: malformed numeric cell: " + s);
    return v;
}

}  // namespace detail

inline Table read_table_csv(std::istream& is) {
    Table t;
    std::string line;
    bool header_done = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_csv_line(line);
        if (!header_done) {
            KVQ_REQUIRE(fields.size() >= 2 && fields[0] == "method",
                        "table: header must start with 'method'");
            t.columns.assign(fields.begin() + 1, fields.end());
            header_done = true;
            continue;
        }
        KVQ_REQUIRE(fields.size() == t.columns.size() + 1, "table: ragged row: " + line);
        t.methods.push_back(fields[0]);
        std::vector<double> row;
        row.reserve(t.columns.size());
        for (std::size_t i = 1; i < fields.size(); ++i) {
            row.push_back(detail::parse_cell(fields[i]));
        }
        t.rows.push_back(std::move(row));
    }
    KVQ_REQUIRE(header_done, "table: missing header");
    return t;
}

inline Table read_table_csv(const std::string& path) {
    std::ifstream f(path);
    KVQ_REQUIRE(f.good(), "table: cannot open " + path);
    return read_table_csv(f);
}

inline std::string format_cell(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return format_double(v);
}

inline void write_table_csv(std::ostream& os, const Table& t,
                            const std::string& comment = "") {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "method";
    for (const auto& c : t.columns) os << ',' << c;
    os << '\n';
    for (std::size_t r = 0; r < t.methods.size(); ++r) {
        os << t.methods[r];
        for (double v : t.rows[r]) os << ',' << format_cell(v);
        os << '\n';
    }
}

}  // namespace kvq
