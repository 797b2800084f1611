#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "somfuse/error.hpp"

namespace somfuse {

// ---------------------------------------------------------------------------
// Attribute schema

enum class Modality { Number, Text, Image, Date, LatLon };

std::string_view to_string(Modality modality) noexcept;
Modality parse_modality(std::string_view text);

struct AttributeEntry {
  std::string name;    ///< identifier used in files, e.g. "urban_risk_economy"
  Modality modality;
  std::string source;  ///< provenance tag, e.g. "EM-DAT"

  bool operator==(const AttributeEntry&) const = default;
};

class AttributeSchema {
 public:
  AttributeSchema() = default;
  /// Throws InvalidValue on duplicate names.
  explicit AttributeSchema(std::vector<AttributeEntry> entries);

  const std::vector<AttributeEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const AttributeEntry& operator[](std::size_t i) const { return entries_.at(i); }

  std::optional<std::size_t> index_of(std::string_view name) const noexcept;
  bool contains(std::string_view name) const noexcept { return index_of(name).has_value(); }

  std::string to_json() const;
  static AttributeSchema from_json(std::string_view text);

  bool operator==(const AttributeSchema&) const = default;

 private:
  std::vector<AttributeEntry> entries_;
};

/// The 19 attribute classes, in canonical order.
const AttributeSchema& default_schema();

namespace attr {
inline constexpr std::string_view kLocation = "location";
inline constexpr std::string_view kTime = "time";
inline constexpr std::string_view kMagnitude = "magnitude";
inline constexpr std::string_view kDeaths = "deaths";
inline constexpr std::string_view kAffected = "affected";
inline constexpr std::string_view kDamages = "damages";
inline constexpr std::string_view kUrbanRiskEconomy = "urban_risk_economy";
inline constexpr std::string_view kUrbanRiskMortality = "urban_risk_mortality";
inline constexpr std::string_view kInformIndex = "inform_index";
inline constexpr std::string_view kElevation = "elevation";
inline constexpr std::string_view kClimateTypes = "climate_types";
inline constexpr std::string_view kNaturalResources = "natural_resources";
inline constexpr std::string_view kEmploymentRatio = "employment_ratio";
inline constexpr std::string_view kConstructionValueAdded = "construction_value_added";
inline constexpr std::string_view kRenewableElectricity = "renewable_electricity";
inline constexpr std::string_view kArea = "area";
inline constexpr std::string_view kPopulation = "population";
inline constexpr std::string_view kSeaSurfaceTemperature = "sea_surface_temperature";
inline constexpr std::string_view kSatelliteImage = "satellite_image";
/// Metadata; only fused when a schema explicitly lists it.
inline constexpr std::string_view kDisasterType = "disaster_type";
}  // namespace attr

// ---------------------------------------------------------------------------
// Severity

enum class Target { Deaths, Affected, Damages };

inline constexpr Target kTargets[] = {Target::Deaths, Target::Affected, Target::Damages};

std::string_view to_string(Target target) noexcept;
std::string_view attribute_name(Target target) noexcept;
Target parse_target(std::string_view text);

enum class SeverityDegree : std::uint8_t { Low = 0, Mid = 1, High = 2 };

std::string_view to_string(SeverityDegree degree) noexcept;
/// Accepts "low", "mid"/"medium", "high" in any case.
SeverityDegree parse_degree(std::string_view text);

struct SeverityBand {
  double low_max;  ///< upper end of the Low band (inclusive)
  double mid_max;  ///< upper end of the Mid band (inclusive)
  double high_max; ///< published cap of the High band; larger values still map to High
};

/// Assessment bands per target. Damages are compared in the stored unit
/// (thousands of US$), see README.
SeverityBand severity_band(Target target) noexcept;

/// Values below the Low band clamp to Low and above the High band to High.
/// Throws InvalidValue for negative or non-finite input.
SeverityDegree classify_severity(double value, Target target);

// ---------------------------------------------------------------------------
// Records

struct Date {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  bool valid() const noexcept;
  std::string to_string() const;
  /// Parses YYYY-MM-DD; throws InvalidValue.
  static Date parse(std::string_view text);

  auto operator<=>(const Date&) const = default;
};

struct LatLon {
  double latitude = 0.0;
  double longitude = 0.0;
  bool operator==(const LatLon&) const = default;
};

enum class RecordRole { Training, Query };

std::string_view to_string(RecordRole role) noexcept;
RecordRole parse_role(std::string_view text);

struct DisasterRecord {
  std::string id;
  RecordRole role = RecordRole::Training;
  std::string disaster_type;

  std::optional<LatLon> location;
  std::optional<Date> time;
  std::optional<double> magnitude;
  std::optional<std::int64_t> deaths;
  std::optional<std::int64_t> affected;
  std::optional<double> damages;  ///< thousands of US$
  std::optional<double> urban_risk_economy;
  std::optional<double> urban_risk_mortality;
  std::optional<double> inform_index;
  std::optional<double> elevation;
  std::optional<std::string> climate_types;
  std::optional<std::string> natural_resources;
  std::optional<double> employment_ratio;
  std::optional<double> construction_value_added;
  std::optional<double> renewable_electricity;
  std::optional<double> area;
  std::optional<double> population;
  std::optional<double> sea_surface_temperature;
  std::optional<std::vector<double>> satellite_feature;

  bool operator==(const DisasterRecord&) const = default;
};

/// Value of a number-modality attribute (targets included), if populated.
std::optional<double> numeric_attribute(const DisasterRecord& record, std::string_view name);
void set_numeric_attribute(DisasterRecord& record, std::string_view name, double value);
/// Text attributes: climate_types, natural_resources, disaster_type.
std::optional<std::string> text_attribute(const DisasterRecord& record, std::string_view name);
std::optional<double> target_value(const DisasterRecord& record, Target target);

struct Violation {
  std::string field;
  std::string message;
  bool operator==(const Violation&) const = default;
};

/// Empty iff the record satisfies every invariant and every required schema
/// field is populated. Targets are required on training records only.
std::vector<Violation> validate_record(const DisasterRecord& record,
                                       const AttributeSchema& schema = default_schema());

}  // namespace somfuse
