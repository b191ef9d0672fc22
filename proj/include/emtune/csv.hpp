#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace emtune::csv {

using Row = std::vector<std::string>;

/// A parsed row plus the 1-based physical line it started on.
struct NumberedRow {
    Row fields;
    std::size_t line = 0;
};

/// RFC 4180: comma separated, double-quote quoting, "" escapes, CRLF or LF line ends,
/// embedded newlines allowed inside quotes. A UTF-8 BOM is skipped.
std::vector<NumberedRow> parse(std::string_view text);

/// Quotes a field only when it contains a comma, quote, CR, LF, or edge whitespace.
std::string escape(std::string_view field);
std::string format_row(const Row& row);

}  // namespace emtune::csv
