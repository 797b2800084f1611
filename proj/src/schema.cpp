#include "somfuse/schema.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <set>

#include <json.hpp>

namespace somfuse {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

constexpr int kSchemaFormatVersion = 1;

}  // namespace

std::string_view to_string(Modality modality) noexcept {
  switch (modality) {
    case Modality::Number: return "number";
    case Modality::Text: return "text";
    case Modality::Image: return "image";
    case Modality::Date: return "date";
    case Modality::LatLon: return "latlon";
  }
  return "number";
}

Modality parse_modality(std::string_view text) {
  const std::string key = lower(text);
  if (key == "number") return Modality::Number;
  if (key == "text") return Modality::Text;
  if (key == "image") return Modality::Image;
  if (key == "date") return Modality::Date;
  if (key == "latlon") return Modality::LatLon;
  throw Error(ErrorCode::FormatError, "unknown modality '" + std::string(text) + "'");
}

AttributeSchema::AttributeSchema(std::vector<AttributeEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw Error(ErrorCode::InvalidValue, "empty attribute name");
    if (!seen.insert(e.name).second) {
      throw Error(ErrorCode::InvalidValue, "duplicate attribute name '" + e.name + "'");
    }
  }
}

std::optional<std::size_t> AttributeSchema::index_of(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::string AttributeSchema::to_json() const {
  nlohmann::json doc;
  doc["format_version"] = kSchemaFormatVersion;
  doc["entries"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    doc["entries"].push_back(
        {{"name", e.name}, {"modality", std::string(to_string(e.modality))}, {"source", e.source}});
  }
  return doc.dump(2);
}

AttributeSchema AttributeSchema::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("schema: ") + ex.what());
  }
  if (!doc.is_object() || doc.value("format_version", 0) != kSchemaFormatVersion) {
    throw Error(ErrorCode::FormatError, "schema: missing or unsupported format_version");
  }
  std::vector<AttributeEntry> entries;
  try {
    for (const auto& e : doc.at("entries")) {
      entries.push_back({e.at("name").get<std::string>(),
                         parse_modality(e.at("modality").get<std::string>()),
                         e.value("source", std::string{})});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("schema: ") + ex.what());
  }
  return AttributeSchema(std::move(entries));
}

const AttributeSchema& default_schema() {
  static const AttributeSchema schema({
      {std::string(attr::kLocation), Modality::LatLon, "EM-DAT"},
      {std::string(attr::kTime), Modality::Date, "EM-DAT"},
      {std::string(attr::kMagnitude), Modality::Number, "EM-DAT"},
      {std::string(attr::kDeaths), Modality::Number, "EM-DAT"},
      {std::string(attr::kAffected), Modality::Number, "EM-DAT"},
      {std::string(attr::kDamages), Modality::Number, "EM-DAT"},
      {std::string(attr::kUrbanRiskEconomy), Modality::Number, "World Bank"},
      {std::string(attr::kUrbanRiskMortality), Modality::Number, "World Bank"},
      {std::string(attr::kInformIndex), Modality::Number, "European Commission"},
      {std::string(attr::kElevation), Modality::Number, "UN Stats"},
      {std::string(attr::kClimateTypes), Modality::Text, "UN Stats"},
      {std::string(attr::kNaturalResources), Modality::Text, "UN Stats"},
      {std::string(attr::kEmploymentRatio), Modality::Number, "UN Stats"},
      {std::string(attr::kConstructionValueAdded), Modality::Number, "UN Stats"},
      {std::string(attr::kRenewableElectricity), Modality::Number, "UN Stats"},
      {std::string(attr::kArea), Modality::Number, "UN Stats"},
      {std::string(attr::kPopulation), Modality::Number, "UN Stats"},
      {std::string(attr::kSeaSurfaceTemperature), Modality::Number, "UN Stats"},
      {std::string(attr::kSatelliteImage), Modality::Image, "Google Earth"},
  });
  return schema;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Target target) noexcept {
  switch (target) {
    case Target::Deaths: return "deaths";
    case Target::Affected: return "affected";
    case Target::Damages: return "damages";
  }
  return "deaths";
}

std::string_view attribute_name(Target target) noexcept { return to_string(target); }

Target parse_target(std::string_view text) {
  const std::string key = lower(text);
  if (key == "deaths" || key == "total deaths") return Target::Deaths;
  if (key == "affected" || key == "total affected" || key == "no affected") return Target::Affected;
  if (key == "damages" || key == "total damages") return Target::Damages;
  throw Error(ErrorCode::FormatError, "unknown target '" + std::string(text) + "'");
}

std::string_view to_string(SeverityDegree degree) noexcept {
  switch (degree) {
    case SeverityDegree::Low: return "low";
    case SeverityDegree::Mid: return "mid";
    case SeverityDegree::High: return "high";
  }
  return "low";
}

SeverityDegree parse_degree(std::string_view text) {
  const std::string key = lower(text);
  if (key == "low") return SeverityDegree::Low;
  if (key == "mid" || key == "medium") return SeverityDegree::Mid;
  if (key == "high") return SeverityDegree::High;
  throw Error(ErrorCode::FormatError, "unknown severity degree '" + std::string(text) + "'");
}

SeverityBand severity_band(Target target) noexcept {
  switch (target) {
    case Target::Deaths: return {50.0, 5'000.0, 30'000.0};
    case Target::Affected: return {10'000.0, 5'000'000.0, 30'000'000.0};
    case Target::Damages: return {100'000.0, 5'000'000.0, 60'000'000.0};
  }
  return {};
}

SeverityDegree classify_severity(double value, Target target) {
  if (!std::isfinite(value) || value < 0.0) {
    throw Error(ErrorCode::InvalidValue,
                "severity value must be finite and non-negative, got " + std::to_string(value));
  }
  const SeverityBand band = severity_band(target);
  if (value <= band.low_max) return SeverityDegree::Low;
  if (value <= band.mid_max) return SeverityDegree::Mid;
  return SeverityDegree::High;
}

// ---------------------------------------------------------------------------

bool Date::valid() const noexcept {
  using namespace std::chrono;
  return year_month_day{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}}.ok();
}

std::string Date::to_string() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year, month, day);
  return buf;
}

Date Date::parse(std::string_view text) {
  auto fail = [&] { return Error(ErrorCode::InvalidValue, "invalid date '" + std::string(text) + "'"); };
  // Optional leading minus for proleptic years, then YYYY-MM-DD.
  const std::size_t first_dash = text.find('-', text.starts_with('-') ? 1 : 0);
  const std::size_t second_dash = first_dash == std::string_view::npos ? first_dash : text.find('-', first_dash + 1);
  if (first_dash == std::string_view::npos || second_dash == std::string_view::npos) throw fail();
  Date d;
  auto parse_part = [&](std::string_view part, auto& out) {
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, out);
    if (ec != std::errc{} || ptr != end || part.empty()) throw fail();
  };
  parse_part(text.substr(0, first_dash), d.year);
  parse_part(text.substr(first_dash + 1, second_dash - first_dash - 1), d.month);
  parse_part(text.substr(second_dash + 1), d.day);
  if (!d.valid()) throw fail();
  return d;
}

std::string_view to_string(RecordRole role) noexcept {
  return role == RecordRole::Query ? "query" : "training";
}

RecordRole parse_role(std::string_view text) {
  const std::string key = lower(text);
  if (key.empty() || key == "training" || key == "train") return RecordRole::Training;
  if (key == "query" || key == "validation") return RecordRole::Query;
  throw Error(ErrorCode::FormatError, "unknown record role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

namespace {

using RealField = std::optional<double> DisasterRecord::*;

struct RealFieldEntry {
  std::string_view name;
  RealField field;
};

constexpr std::array<RealFieldEntry, 12> kRealFields{{
    {attr::kMagnitude, &DisasterRecord::magnitude},
    {attr::kDamages, &DisasterRecord::damages},
    {attr::kUrbanRiskEconomy, &DisasterRecord::urban_risk_economy},
    {attr::kUrbanRiskMortality, &DisasterRecord::urban_risk_mortality},
    {attr::kInformIndex, &DisasterRecord::inform_index},
    {attr::kElevation, &DisasterRecord::elevation},
    {attr::kEmploymentRatio, &DisasterRecord::employment_ratio},
    {attr::kConstructionValueAdded, &DisasterRecord::construction_value_added},
    {attr::kRenewableElectricity, &DisasterRecord::renewable_electricity},
    {attr::kArea, &DisasterRecord::area},
    {attr::kPopulation, &DisasterRecord::population},
    {attr::kSeaSurfaceTemperature, &DisasterRecord::sea_surface_temperature},
}};

RealField find_real_field(std::string_view name) {
  for (const auto& e : kRealFields) {
    if (e.name == name) return e.field;
  }
  return nullptr;
}

}  // namespace

std::optional<double> numeric_attribute(const DisasterRecord& record, std::string_view name) {
  if (name == attr::kDeaths) {
    return record.deaths ? std::optional<double>(static_cast<double>(*record.deaths)) : std::nullopt;
  }
  if (name == attr::kAffected) {
    return record.affected ? std::optional<double>(static_cast<double>(*record.affected)) : std::nullopt;
  }
  if (RealField f = find_real_field(name)) return record.*f;
  throw Error(ErrorCode::InvalidValue, "'" + std::string(name) + "' is not a numeric attribute");
}

void set_numeric_attribute(DisasterRecord& record, std::string_view name, double value) {
  if (name == attr::kDeaths) {
    record.deaths = static_cast<std::int64_t>(std::llround(value));
  } else if (name == attr::kAffected) {
    record.affected = static_cast<std::int64_t>(std::llround(value));
  } else if (RealField f = find_real_field(name)) {
    record.*f = value;
  } else {
    throw Error(ErrorCode::InvalidValue, "'" + std::string(name) + "' is not a numeric attribute");
  }
}

std::optional<std::string> text_attribute(const DisasterRecord& record, std::string_view name) {
  if (name == attr::kClimateTypes) return record.climate_types;
  if (name == attr::kNaturalResources) return record.natural_resources;
  if (name == attr::kDisasterType) {
    return record.disaster_type.empty() ? std::nullopt : std::optional<std::string>(record.disaster_type);
  }
  throw Error(ErrorCode::InvalidValue, "'" + std::string(name) + "' is not a text attribute");
}

std::optional<double> target_value(const DisasterRecord& record, Target target) {
  return numeric_attribute(record, attribute_name(target));
}

std::vector<Violation> validate_record(const DisasterRecord& record, const AttributeSchema& schema) {
  std::vector<Violation> out;
  auto add = [&](std::string_view field, std::string message) {
    out.push_back({std::string(field), std::move(message)});
  };

  if (record.id.empty()) add("id", "missing id");

  for (const auto& entry : schema.entries()) {
    const std::string_view name = entry.name;
    const bool is_target = name == attr::kDeaths || name == attr::kAffected || name == attr::kDamages;
    switch (entry.modality) {
      case Modality::LatLon:
        if (!record.location) {
          add(name, "missing location");
        } else {
          if (!(std::abs(record.location->latitude) <= 90.0)) add(name, "out-of-range latitude");
          if (!(std::abs(record.location->longitude) <= 180.0)) add(name, "out-of-range longitude");
        }
        break;
      case Modality::Date:
        if (!record.time) {
          add(name, "missing date");
        } else if (!record.time->valid()) {
          add(name, "invalid date");
        }
        break;
      case Modality::Text:
        if (!text_attribute(record, name)) add(name, "missing text");
        break;
      case Modality::Image:
        if (record.satellite_feature) {
          for (double v : *record.satellite_feature) {
            if (!std::isfinite(v)) {
              add(name, "non-finite satellite feature");
              break;
            }
          }
        }
        break;
      case Modality::Number: {
        const auto value = numeric_attribute(record, name);
        if (!value) {
          if (is_target) {
            if (record.role == RecordRole::Training) add(name, "missing target on training record");
          } else {
            add(name, "missing value");
          }
        } else if (!std::isfinite(*value)) {
          add(name, "non-finite value");
        } else if (is_target && *value < 0.0) {
          add(name, "negative target");
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace somfuse
