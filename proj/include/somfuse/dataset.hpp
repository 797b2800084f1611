#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "somfuse/schema.hpp"

namespace somfuse {

/// Dataset files: a header row with `id`, optional metadata columns (`role`,
/// `disaster_type`) and any subset of the schema names. Locations are written
/// "lat;lon", dates YYYY-MM-DD, absent optionals as empty cells. The JSON
/// mirror uses the same field names with native JSON values.
std::vector<DisasterRecord> read_dataset_csv(std::istream& in);
void write_dataset_csv(std::ostream& out, const std::vector<DisasterRecord>& records,
                       const AttributeSchema& schema = default_schema());

std::vector<DisasterRecord> read_dataset_json(std::string_view text);
std::string write_dataset_json(const std::vector<DisasterRecord>& records,
                               const AttributeSchema& schema = default_schema());

/// Dispatches on the extension (.csv or .json).
std::vector<DisasterRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<DisasterRecord>& records,
                   const AttributeSchema& schema = default_schema());

}  // namespace somfuse
