#include "somfuse/geo.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <thread>

#include <httplib.h>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"

namespace somfuse::geo {

double earth_circumference() noexcept { return 2.0 * std::numbers::pi * kEarthRadiusMeters; }

double map_width(int zoom) {
  if (zoom < 0 || zoom > kMaxZoom) {
    throw Error(ErrorCode::InvalidValue, "zoom " + std::to_string(zoom) + " outside [0, 23]");
  }
  return std::ldexp(256.0, zoom);
}

double ground_resolution(double latitude, int zoom) {
  if (!(std::abs(latitude) <= 90.0)) {
    throw Error(ErrorCode::InvalidValue, "latitude " + std::to_string(latitude) + " outside [-90, 90]");
  }
  return std::cos(latitude * std::numbers::pi / 180.0) * earth_circumference() / map_width(zoom);
}

TileGrid build_grid(const LatLon& epicenter, double extent, double spacing, int zoom) {
  map_width(zoom);  // validates zoom
  if (!(spacing > 0.0) || !(extent >= spacing)) {
    throw Error(ErrorCode::InvalidValue, "grid needs 0 < spacing <= extent");
  }
  const double ratio = extent / spacing;
  const double side_real = std::round(ratio);
  if (std::abs(ratio - side_real) > 1e-9 * ratio) {
    throw Error(ErrorCode::InvalidValue, "grid spacing must divide the extent");
  }
  if (!(std::abs(epicenter.latitude) < kMaxGridLatitude)) {
    throw Error(ErrorCode::InvalidValue, "epicentre latitude outside the usable Mercator band");
  }
  if (!(std::abs(epicenter.longitude) <= 180.0)) {
    throw Error(ErrorCode::InvalidValue, "epicentre longitude outside [-180, 180]");
  }

  TileGrid grid;
  grid.epicenter = epicenter;
  grid.zoom = zoom;
  grid.spacing = spacing;
  grid.extent = extent;
  grid.side = static_cast<std::size_t>(side_real);
  grid.centers.reserve(grid.side * grid.side);

  const double half = (static_cast<double>(grid.side) - 1.0) / 2.0;
  const double lon_scale = kMetersPerDegree * std::cos(epicenter.latitude * std::numbers::pi / 180.0);
  for (std::size_t row = 0; row < grid.side; ++row) {
    const double north = (half - static_cast<double>(row)) * spacing;
    for (std::size_t col = 0; col < grid.side; ++col) {
      const double east = (static_cast<double>(col) - half) * spacing;
      grid.centers.push_back({epicenter.latitude + north / kMetersPerDegree, epicenter.longitude + east / lon_scale});
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t quantize(double degrees) {
  return static_cast<std::uint64_t>(std::llround(degrees * 1e5));
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

std::string percent_encode(std::string_view text) {
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

Image StubTileClient::synthesize(const TileRequest& request) const {
  // Tiles in the same 5-degree cell share a palette, so nearby disasters look alike.
  const auto cell_lat = static_cast<std::uint64_t>(std::floor(request.center.latitude / 5.0) + 1000.0);
  const auto cell_lon = static_cast<std::uint64_t>(std::floor(request.center.longitude / 5.0) + 1000.0);
  const std::uint64_t palette = splitmix(splitmix(seed_ ^ (cell_lat << 20) ^ cell_lon));
  const std::uint64_t local = splitmix(palette ^ splitmix(quantize(request.center.latitude)) ^
                                       splitmix(quantize(request.center.longitude) + 17) ^
                                       static_cast<std::uint64_t>(request.zoom));
  std::mt19937_64 rng(local);
  std::uniform_int_distribution<int> noise(-18, 18);

  const int base[3] = {static_cast<int>(palette & 0xFF) / 2 + 40, static_cast<int>((palette >> 8) & 0xFF) / 2 + 40,
                       static_cast<int>((palette >> 16) & 0xFF) / 2 + 40};
  const double stripe_freq = 0.02 + static_cast<double>((palette >> 24) & 0xFF) / 255.0 * 0.1;
  const double phase = std::uniform_real_distribution<double>(0.0, 6.283)(rng);
  const std::size_t road_row = std::uniform_int_distribution<std::size_t>(0, pixels_ - 1)(rng);
  const std::size_t road_col = std::uniform_int_distribution<std::size_t>(0, pixels_ - 1)(rng);

  Image image(pixels_, pixels_, 3);
  for (std::size_t y = 0; y < pixels_; ++y) {
    for (std::size_t x = 0; x < pixels_; ++x) {
      const double wave = 30.0 * std::sin(stripe_freq * static_cast<double>(x + y) + phase);
      const bool road = (y >= road_row && y < road_row + 3) || (x >= road_col && x < road_col + 3);
      for (std::size_t c = 0; c < 3; ++c) {
        int v = road ? 200 : base[c] + static_cast<int>(wave) + noise(rng);
        image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return image;
}

TileResponse StubTileClient::fetch(const TileRequest& request) {
  return {true, encode_png(synthesize(request)), {}};
}

HttpTileClient::HttpTileClient(HttpTileClientConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty()) config_.api_key = api_key_from_env();
  const auto& url = config_.endpoint_template;
  if (!(url.starts_with("http://") || url.starts_with("https://"))) {
    throw Error(ErrorCode::InvalidValue, "tile endpoint must start with http:// or https://");
  }
}

std::string HttpTileClient::expand_url(const TileRequest& request) const {
  std::string url = config_.endpoint_template;
  replace_all(url, "{lat}", format_fixed(request.center.latitude, 6));
  replace_all(url, "{lon}", format_fixed(request.center.longitude, 6));
  replace_all(url, "{zoom}", std::to_string(request.zoom));
  replace_all(url, "{size}", std::to_string(config_.tile_pixels));
  replace_all(url, "{key}", percent_encode(config_.api_key));
  return url;
}

void HttpTileClient::throttle() {
  if (config_.max_requests_per_second <= 0.0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.max_requests_per_second));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(throttle_mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

TileResponse HttpTileClient::fetch(const TileRequest& request) {
  throttle();
  const std::string url = expand_url(request);
  const std::size_t scheme = url.find("://");
  const std::size_t scheme_end = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t path_start = url.find('/', scheme_end);
  const std::string origin = url.substr(0, path_start);
  const std::string target = path_start == std::string::npos ? "/" : url.substr(path_start);

  TileResponse response;
  try {
    httplib::Client client(origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_follow_location(true);
    auto result = client.Get(target);
    if (!result) {
      response.error = "transport error: " + httplib::to_string(result.error());
    } else if (result->status != 200) {
      response.error = "HTTP " + std::to_string(result->status);
    } else {
      response.ok = true;
      response.bytes = std::move(result->body);
    }
  } catch (const std::exception& ex) {
    response.error = ex.what();
  }
  return response;
}

std::string api_key_from_env() {
  const char* key = std::getenv("SOMFUSE_TILE_API_KEY");
  return key != nullptr ? key : "";
}

// ---------------------------------------------------------------------------

std::filesystem::path TileCache::path_for(const TileRequest& request) const {
  return root_ / std::to_string(request.zoom) /
         (format_fixed(request.center.latitude, 5) + "_" + format_fixed(request.center.longitude, 5) + ".png");
}

bool TileCache::contains(const TileRequest& request) const {
  std::error_code ec;
  return std::filesystem::is_regular_file(path_for(request), ec);
}

void TileCache::store(const TileRequest& request, std::string_view bytes) const {
  const auto path = path_for(request);
  std::filesystem::create_directories(path.parent_path());
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write tile '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write for tile '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string_view to_string(TileStatus status) noexcept {
  switch (status) {
    case TileStatus::Pending: return "pending";
    case TileStatus::Fetched: return "fetched";
    case TileStatus::Failed: return "failed";
    case TileStatus::Stubbed: return "stubbed";
  }
  return "pending";
}

TileStatus parse_tile_status(std::string_view text) {
  if (text == "pending") return TileStatus::Pending;
  if (text == "fetched") return TileStatus::Fetched;
  if (text == "failed") return TileStatus::Failed;
  if (text == "stubbed") return TileStatus::Stubbed;
  throw Error(ErrorCode::FormatError, "unknown tile status '" + std::string(text) + "'");
}

std::size_t TileManifest::count(TileStatus status) const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.status == status ? 1 : 0;
  return n;
}

TileManifest fetch_tiles(const TileGrid& grid, TileClient& client, const TileCache& cache,
                         const FetchOptions& options) {
  TileManifest manifest;
  manifest.entries.resize(grid.centers.size());
  const TileStatus success = client.is_stub() ? TileStatus::Stubbed : TileStatus::Fetched;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> requests{0};

  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < grid.centers.size(); i = next.fetch_add(1)) {
      ManifestEntry& entry = manifest.entries[i];
      const TileRequest request{grid.centers[i], grid.zoom};
      entry.patch_index = i;
      entry.center = request.center;
      entry.zoom = request.zoom;
      entry.pixel_size = client.tile_pixels();
      entry.terrain_resolution = ground_resolution(request.center.latitude, request.zoom);
      entry.path = cache.path_for(request);
      if (cache.contains(request)) {
        entry.status = success;
        continue;
      }
      for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
        if (attempt > 0 && options.backoff.count() > 0) std::this_thread::sleep_for(options.backoff * attempt);
        ++entry.attempts;
        requests.fetch_add(1);
        TileResponse response;
        try {
          response = client.fetch(request);
        } catch (const std::exception& ex) {
          response.error = ex.what();
        }
        if (response.ok) {
          try {
            cache.store(request, response.bytes);
            entry.status = success;
            entry.error.clear();
            break;
          } catch (const std::exception& ex) {
            response.error = ex.what();
          }
        }
        entry.status = TileStatus::Failed;
        entry.error = response.error;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallelism, grid.centers.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  manifest.requests = requests.load();
  return manifest;
}

void write_manifest_csv(const std::filesystem::path& path, const TileManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest '" + path.string() + "'");
  csv::write_row(out, {"patch_index", "latitude", "longitude", "zoom", "pixel_size", "terrain_resolution", "path",
                       "status", "attempts", "error"});
  for (const auto& e : manifest.entries) {
    csv::write_row(out, {std::to_string(e.patch_index), csv::format_double(e.center.latitude),
                         csv::format_double(e.center.longitude), std::to_string(e.zoom), std::to_string(e.pixel_size),
                         csv::format_double(e.terrain_resolution), e.path.generic_string(),
                         std::string(to_string(e.status)), std::to_string(e.attempts), e.error});
  }
}

TileManifest read_manifest_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest '" + path.string() + "'");
  const auto rows = csv::read(in);
  if (rows.empty() || rows.front().size() != 10 || rows.front()[0] != "patch_index") {
    throw Error(ErrorCode::FormatError, "manifest: unexpected header in " + path.string());
  }
  TileManifest manifest;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 10) throw Error(ErrorCode::FormatError, "manifest: bad row " + std::to_string(i + 1));
    ManifestEntry e;
    e.patch_index = static_cast<std::size_t>(csv::parse_int(r[0], "patch_index"));
    e.center = {csv::parse_double(r[1], "latitude"), csv::parse_double(r[2], "longitude")};
    e.zoom = static_cast<int>(csv::parse_int(r[3], "zoom"));
    e.pixel_size = static_cast<std::size_t>(csv::parse_int(r[4], "pixel_size"));
    e.terrain_resolution = csv::parse_double(r[5], "terrain_resolution");
    e.path = r[6];
    e.status = parse_tile_status(r[7]);
    e.attempts = static_cast<std::size_t>(csv::parse_int(r[8], "attempts"));
    e.error = r[9];
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace somfuse::geo
