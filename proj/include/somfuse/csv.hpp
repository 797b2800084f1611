#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace somfuse::csv {

using Row = std::vector<std::string>;

/// RFC 4180 style: comma separated, double-quoted fields may contain commas,
/// newlines and doubled quotes. CRLF line endings are accepted. Blank lines
/// are skipped.
std::vector<Row> read(std::istream& in);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const Row& row);

/// Shortest text that parses back to the same double.
std::string format_double(double value);
/// Strict parse of a whole field; throws FormatError with `what` in the message.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace somfuse::csv
