#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "somfuse/image.hpp"
#include "somfuse/schema.hpp"

namespace somfuse::geo {

inline constexpr double kEarthRadiusMeters = 6'378'137.0;
inline constexpr double kMetersPerDegree = 111'320.0;
inline constexpr int kMaxZoom = 23;
inline constexpr double kMaxGridLatitude = 85.0;

/// 2 * pi * equatorial radius.
double earth_circumference() noexcept;

/// 256 * 2^zoom pixels. Throws InvalidValue outside [0, 23].
double map_width(int zoom);

/// Web-Mercator metres per pixel at a latitude (degrees).
double ground_resolution(double latitude, int zoom);

struct TileGrid {
  LatLon epicenter;
  int zoom = 18;
  double spacing = 200.0;
  double extent = 10'000.0;
  std::size_t side = 0;         ///< centers per row/column
  std::vector<LatLon> centers;  ///< row-major, north row first, west to east
};

/// Square lattice of (extent/spacing)^2 centres around the epicentre.
/// Throws InvalidValue when spacing does not divide extent or |lat| >= 85.
TileGrid build_grid(const LatLon& epicenter, double extent = 10'000.0, double spacing = 200.0, int zoom = 18);

// ---------------------------------------------------------------------------
// Tile acquisition

struct TileRequest {
  LatLon center;
  int zoom = 18;
};

struct TileResponse {
  bool ok = false;
  std::string bytes;  ///< PNG payload when ok
  std::string error;
};

class TileClient {
 public:
  virtual ~TileClient() = default;
  virtual TileResponse fetch(const TileRequest& request) = 0;
  /// Pixel width of the tiles this client returns.
  virtual std::size_t tile_pixels() const = 0;
  /// Stub clients synthesize images instead of fetching them.
  virtual bool is_stub() const { return false; }
};

/// Offline client: deterministic images seeded by (centre, zoom, seed).
class StubTileClient final : public TileClient {
 public:
  explicit StubTileClient(std::uint64_t seed = 0, std::size_t pixels = 224) : seed_(seed), pixels_(pixels) {}
  TileResponse fetch(const TileRequest& request) override;
  std::size_t tile_pixels() const override { return pixels_; }
  bool is_stub() const override { return true; }

  Image synthesize(const TileRequest& request) const;

 private:
  std::uint64_t seed_;
  std::size_t pixels_;
};

struct HttpTileClientConfig {
  /// e.g. "https://tiles.example.com/static?center={lat},{lon}&zoom={zoom}&size={size}&key={key}"
  std::string endpoint_template;
  std::string api_key;
  std::size_t tile_pixels = 256;
  std::chrono::milliseconds timeout{10'000};
  double max_requests_per_second = 0.0;  ///< 0 disables rate limiting
};

class HttpTileClient final : public TileClient {
 public:
  explicit HttpTileClient(HttpTileClientConfig config);
  TileResponse fetch(const TileRequest& request) override;
  std::size_t tile_pixels() const override { return config_.tile_pixels; }

  /// Placeholder substitution only; exposed for tests.
  std::string expand_url(const TileRequest& request) const;

 private:
  void throttle();

  HttpTileClientConfig config_;
  std::mutex throttle_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// Reads the API key from SOMFUSE_TILE_API_KEY when the config leaves it empty.
std::string api_key_from_env();

/// On-disk layout: {root}/{zoom}/{lat:.5f}_{lon:.5f}.png
class TileCache {
 public:
  explicit TileCache(std::filesystem::path root) : root_(std::move(root)) {}
  std::filesystem::path path_for(const TileRequest& request) const;
  bool contains(const TileRequest& request) const;
  /// Writes to a temporary file and renames it into place.
  void store(const TileRequest& request, std::string_view bytes) const;
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

enum class TileStatus { Pending, Fetched, Failed, Stubbed };

std::string_view to_string(TileStatus status) noexcept;
TileStatus parse_tile_status(std::string_view text);

struct ManifestEntry {
  std::size_t patch_index = 0;
  LatLon center;
  int zoom = 18;
  std::size_t pixel_size = 0;
  double terrain_resolution = 0.0;  ///< metres per pixel
  std::filesystem::path path;
  TileStatus status = TileStatus::Pending;
  std::size_t attempts = 0;
  std::string error;

  bool operator==(const ManifestEntry&) const = default;
};

struct TileManifest {
  std::vector<ManifestEntry> entries;
  std::size_t requests = 0;  ///< client calls issued, retries included
  std::size_t count(TileStatus status) const noexcept;
};

struct FetchOptions {
  std::size_t retries = 2;  ///< attempts after the first failure
  std::size_t parallelism = 1;
  std::chrono::milliseconds backoff{0};
};

/// One manifest entry per grid centre. Cached tiles are never re-requested;
/// failures are recorded per tile and never abort the batch.
TileManifest fetch_tiles(const TileGrid& grid, TileClient& client, const TileCache& cache,
                         const FetchOptions& options = {});

void write_manifest_csv(const std::filesystem::path& path, const TileManifest& manifest);
TileManifest read_manifest_csv(const std::filesystem::path& path);

}  // namespace somfuse::geo
