#include "somfuse/dataset.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"

namespace somfuse {

namespace {

constexpr int kDatasetFormatVersion = 1;

bool is_known_column(std::string_view name) {
  return name == "id" || name == "role" || name == attr::kDisasterType ||
         default_schema().contains(name);
}

LatLon parse_location(std::string_view text, std::string_view what) {
  const auto sep = text.find(';');
  if (sep == std::string_view::npos) {
    throw Error(ErrorCode::FormatError, std::string(what) + ": location must be 'lat;lon'");
  }
  return {csv::parse_double(text.substr(0, sep), what), csv::parse_double(text.substr(sep + 1), what)};
}

std::vector<double> parse_vector(std::string_view text, std::string_view what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    out.push_back(csv::parse_double(text.substr(pos, end - pos), what));
    pos = end;
  }
  return out;
}

void set_field(DisasterRecord& r, std::string_view column, std::string_view value, std::string_view what) {
  if (column == "id") {
    r.id = std::string(value);
  } else if (column == "role") {
    r.role = parse_role(value);
  } else if (column == attr::kDisasterType) {
    r.disaster_type = std::string(value);
  } else if (value.empty()) {
    // absent optional
  } else if (column == attr::kLocation) {
    r.location = parse_location(value, what);
  } else if (column == attr::kTime) {
    r.time = Date::parse(value);
  } else if (column == attr::kClimateTypes) {
    r.climate_types = std::string(value);
  } else if (column == attr::kNaturalResources) {
    r.natural_resources = std::string(value);
  } else if (column == attr::kSatelliteImage) {
    r.satellite_feature = parse_vector(value, what);
  } else if (column == attr::kDeaths) {
    r.deaths = csv::parse_int(value, what);
  } else if (column == attr::kAffected) {
    r.affected = csv::parse_int(value, what);
  } else {
    set_numeric_attribute(r, column, csv::parse_double(value, what));
  }
}

std::string field_text(const DisasterRecord& r, const AttributeEntry& entry) {
  const std::string_view name = entry.name;
  switch (entry.modality) {
    case Modality::LatLon:
      return r.location ? csv::format_double(r.location->latitude) + ";" +
                              csv::format_double(r.location->longitude)
                        : std::string{};
    case Modality::Date:
      return r.time ? r.time->to_string() : std::string{};
    case Modality::Text:
      return text_attribute(r, name).value_or(std::string{});
    case Modality::Image: {
      if (!r.satellite_feature) return {};
      std::string out;
      for (std::size_t i = 0; i < r.satellite_feature->size(); ++i) {
        if (i != 0) out.push_back(' ');
        out += csv::format_double((*r.satellite_feature)[i]);
      }
      return out;
    }
    case Modality::Number: {
      if (name == attr::kDeaths) return r.deaths ? std::to_string(*r.deaths) : std::string{};
      if (name == attr::kAffected) return r.affected ? std::to_string(*r.affected) : std::string{};
      const auto v = numeric_attribute(r, name);
      return v ? csv::format_double(*v) : std::string{};
    }
  }
  return {};
}

void check_unique_ids(const std::vector<DisasterRecord>& records) {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) {
      throw Error(ErrorCode::DuplicateRow, "dataset: duplicate id '" + r.id + "'");
    }
  }
}

}  // namespace

std::vector<DisasterRecord> read_dataset_csv(std::istream& in) {
  const auto rows = csv::read(in);
  if (rows.empty()) throw Error(ErrorCode::FormatError, "dataset: missing header row");
  const auto& header = rows.front();
  bool has_id = false;
  for (const auto& column : header) {
    if (!is_known_column(column)) {
      throw Error(ErrorCode::FormatError, "dataset: unknown column '" + column + "'");
    }
    has_id = has_id || column == "id";
  }
  if (!has_id) throw Error(ErrorCode::FormatError, "dataset: header lacks an 'id' column");

  std::vector<DisasterRecord> records;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != header.size()) {
      throw Error(ErrorCode::FormatError, "dataset: row " + std::to_string(i + 1) + " has " +
                                              std::to_string(row.size()) + " fields, expected " +
                                              std::to_string(header.size()));
    }
    DisasterRecord r;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const std::string what = "row " + std::to_string(i + 1) + " column " + header[c];
      set_field(r, header[c], row[c], what);
    }
    records.push_back(std::move(r));
  }
  check_unique_ids(records);
  return records;
}

void write_dataset_csv(std::ostream& out, const std::vector<DisasterRecord>& records,
                       const AttributeSchema& schema) {
  csv::Row header{"id", "role", std::string(attr::kDisasterType)};
  for (const auto& e : schema.entries()) {
    if (e.name != attr::kDisasterType) header.push_back(e.name);
  }
  csv::write_row(out, header);
  for (const auto& r : records) {
    csv::Row row{r.id, std::string(to_string(r.role)), r.disaster_type};
    for (const auto& e : schema.entries()) {
      if (e.name != attr::kDisasterType) row.push_back(field_text(r, e));
    }
    csv::write_row(out, row);
  }
}

std::vector<DisasterRecord> read_dataset_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("dataset: ") + ex.what());
  }
  const nlohmann::json* list = &doc;
  if (doc.is_object()) {
    if (doc.value("format_version", kDatasetFormatVersion) != kDatasetFormatVersion) {
      throw Error(ErrorCode::FormatError, "dataset: unsupported format_version");
    }
    if (!doc.contains("records")) throw Error(ErrorCode::FormatError, "dataset: missing 'records'");
    list = &doc["records"];
  }
  if (!list->is_array()) throw Error(ErrorCode::FormatError, "dataset: records must be an array");

  std::vector<DisasterRecord> records;
  std::size_t index = 0;
  for (const auto& item : *list) {
    ++index;
    if (!item.is_object()) throw Error(ErrorCode::FormatError, "dataset: record must be an object");
    DisasterRecord r;
    for (const auto& [key, value] : item.items()) {
      const std::string what = "record " + std::to_string(index) + " field " + key;
      if (!is_known_column(key)) throw Error(ErrorCode::FormatError, "dataset: unknown field '" + key + "'");
      if (value.is_null()) continue;
      try {
        if (key == attr::kLocation && value.is_array()) {
          if (value.size() != 2) throw Error(ErrorCode::FormatError, what + ": expected [lat, lon]");
          r.location = LatLon{value[0].get<double>(), value[1].get<double>()};
        } else if (key == attr::kSatelliteImage && value.is_array()) {
          r.satellite_feature = value.get<std::vector<double>>();
        } else if (value.is_number()) {
          if (key == attr::kDeaths) {
            r.deaths = csv::parse_int(value.dump(), what);
          } else if (key == attr::kAffected) {
            r.affected = csv::parse_int(value.dump(), what);
          } else {
            set_numeric_attribute(r, key, value.get<double>());
          }
        } else if (value.is_string()) {
          set_field(r, key, value.get<std::string>(), what);
        } else {
          throw Error(ErrorCode::FormatError, what + ": unsupported value type");
        }
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::FormatError, what + ": " + ex.what());
      }
    }
    records.push_back(std::move(r));
  }
  check_unique_ids(records);
  return records;
}

std::string write_dataset_json(const std::vector<DisasterRecord>& records, const AttributeSchema& schema) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kDatasetFormatVersion;
  doc["records"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json item;
    item["id"] = r.id;
    item["role"] = std::string(to_string(r.role));
    if (!r.disaster_type.empty()) item[std::string(attr::kDisasterType)] = r.disaster_type;
    for (const auto& e : schema.entries()) {
      const std::string_view name = e.name;
      if (name == attr::kDisasterType) continue;
      switch (e.modality) {
        case Modality::LatLon:
          if (r.location) item[e.name] = {r.location->latitude, r.location->longitude};
          break;
        case Modality::Date:
          if (r.time) item[e.name] = r.time->to_string();
          break;
        case Modality::Text:
          if (auto t = text_attribute(r, name)) item[e.name] = *t;
          break;
        case Modality::Image:
          if (r.satellite_feature) item[e.name] = *r.satellite_feature;
          break;
        case Modality::Number:
          if (name == attr::kDeaths) {
            if (r.deaths) item[e.name] = *r.deaths;
          } else if (name == attr::kAffected) {
            if (r.affected) item[e.name] = *r.affected;
          } else if (auto v = numeric_attribute(r, name)) {
            item[e.name] = *v;
          }
          break;
      }
    }
    doc["records"].push_back(std::move(item));
  }
  return doc.dump(2);
}

std::vector<DisasterRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset '" + path.string() + "'");
  if (path.extension() == ".json") {
    std::stringstream buffer;
    buffer << in.rdbuf();
    return read_dataset_json(buffer.str());
  }
  return read_dataset_csv(in);
}

void write_dataset(const std::filesystem::path& path, const std::vector<DisasterRecord>& records,
                   const AttributeSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write dataset '" + path.string() + "'");
  if (path.extension() == ".json") {
    out << write_dataset_json(records, schema) << '\n';
  } else {
    write_dataset_csv(out, records, schema);
  }
}

}  // namespace somfuse
