#include "lexee/csv.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "lexee/errors.hpp"

namespace lexee {

namespace {

// One pass over the stream, tracking line/column for diagnostics. Records
// are split on unquoted newlines; CR immediately before LF is consumed.
struct Lexer {
    std::istream& in;
    std::string source;
    long line = 1;
    long column = 0;

    [[nodiscard]] bool read_record(std::vector<std::string>& fields, long& record_line) {
        fields.clear();
        int c = in.get();
        if (c == EOF) return false;
        record_line = line;
        std::string cell;
        bool quoted = false;
        bool any = false;
        column = 1;
        while (true) {
            if (c == EOF) {
                if (quoted)
                    throw ParseError(source, line, column, "unterminated quoted field");
                fields.push_back(std::move(cell));
                return true;
            }
            any = true;
            if (quoted) {
                if (c == '"') {
                    const int next = in.peek();
                    if (next == '"') {
                        in.get();
                        cell.push_back('"');
                        column += 2;
                    } else {
                        quoted = false;
                        ++column;
                    }
                } else {
                    if (c == '\n') {
                        ++line;
                        column = 0;
                    }
                    cell.push_back(static_cast<char>(c));
                    ++column;
                }
            } else if (c == '"') {
                if (!cell.empty())
                    throw ParseError(source, line, column,
                                     "quote may only open a field (stray '\"')");
                quoted = true;
                ++column;
            } else if (c == ',') {
                fields.push_back(std::move(cell));
                cell.clear();
                ++column;
            } else if (c == '\r') {
                if (in.peek() == '\n') in.get();
                fields.push_back(std::move(cell));
                ++line;
                column = 0;
                return true;
            } else if (c == '\n') {
                fields.push_back(std::move(cell));
                ++line;
                column = 0;
                return true;
            } else {
                cell.push_back(static_cast<char>(c));
                ++column;
            }
            c = in.get();
        }
        (void)any;
    }
};

[[nodiscard]] bool needs_quoting(const std::string& cell) {
    return cell.find_first_of(",\"\r\n") != std::string::npos;
}

void write_cell(std::ostream& out, const std::string& cell) {
    if (!needs_quoting(cell)) {
        out << cell;
        return;
    }
    out << '"';
    for (char c : cell) {
        if (c == '"') out << '"';
        out << c;
    }
    out << '"';
}

}  // namespace

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int CsvTable::require_column(const std::string& name) const {
    const int idx = column(name);
    if (idx < 0)
        throw ParseError(source, 1, -1, "required column '" + name + "' not found in header");
    return idx;
}

CsvTable read_csv(std::istream& in, const std::string& source_label) {
    CsvTable table;
    table.source = source_label;
    Lexer lex{in, source_label};
    long record_line = 0;
    if (!lex.read_record(table.header, record_line))
        throw ParseError(source_label, 1, -1, "empty input: a header row is required");
    if (table.header.size() == 1 && table.header[0].empty())
        throw ParseError(source_label, 1, 1, "blank header row");
    std::vector<std::string> fields;
    while (lex.read_record(fields, record_line)) {
        if (fields.size() == 1 && fields[0].empty()) continue;  // ignore blank lines
        if (fields.size() != table.header.size())
            throw ParseError(source_label, record_line, -1,
                             "row has " + std::to_string(fields.size()) + " fields, header has " +
                                 std::to_string(table.header.size()));
        table.rows.push_back(fields);
        table.row_lines.push_back(record_line);
    }
    return table;
}

CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, -1, -1, "cannot open file");
    return read_csv(in, path);
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        write_cell(out, header[i]);
    }
    out << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw BadParam("csv row width " + std::to_string(row.size()) +
                           " does not match header width " + std::to_string(header.size()));
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            write_cell(out, row[i]);
        }
        out << '\n';
    }
}

void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadParam("cannot open '" + path + "' for writing");
    write_csv(out, header, rows);
    if (!out) throw BadParam("failed while writing '" + path + "'");
}

double parse_double_cell(const std::string& cell, const std::string& source, long line,
                         int column) {
    if (cell.empty())
        throw ParseError(source, line, column + 1, "empty cell where a number is required");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw ParseError(source, line, column + 1, "not a number: '" + cell + "'");
    return v;
}

long parse_long_cell(const std::string& cell, const std::string& source, long line, int column) {
    if (cell.empty())
        throw ParseError(source, line, column + 1, "empty cell where an integer is required");
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(cell.c_str(), &end, 10);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw ParseError(source, line, column + 1, "not an integer: '" + cell + "'");
    return v;
}

}  // namespace lexee
