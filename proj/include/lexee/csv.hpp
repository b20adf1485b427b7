#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lexee {

// A parsed delimited table: one header row plus zero or more data rows, every
// row already validated to match the header width. Cells are raw strings;
// emptiness is meaningful to callers (it encodes a missing value).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] int column(const std::string& name) const;       // -1 when absent
    [[nodiscard]] int require_column(const std::string& name) const;  // throws
    // Source label and 1-based line numbers per data row for error messages.
    std::string source;
    std::vector<long> row_lines;
};

// Strict comma-separated reader: quoted fields with doubled-quote escapes,
// embedded newlines inside quotes, LF or CRLF endings, mandatory header row,
// uniform row width. Violations raise ParseError with file:line:column.
[[nodiscard]] CsvTable read_csv(std::istream& in, const std::string& source_label);
[[nodiscard]] CsvTable read_csv_file(const std::string& path);

// Canonical writer: quotes only when a cell needs it, LF line endings.
void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);

// Cell-level conversions with positional error reporting.
[[nodiscard]] double parse_double_cell(const std::string& cell, const std::string& source,
                                       long line, int column);
[[nodiscard]] long parse_long_cell(const std::string& cell, const std::string& source, long line,
                                   int column);

}  // namespace lexee
