#ifndef CHLOROLAB_RASTER_HPP
#define CHLOROLAB_RASTER_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "chlorolab/core.hpp"

namespace chlorolab {

enum class Band { Blue = 0, Green, Red, RedEdge, NearIR };
inline constexpr std::size_t kBandCount = 5;

/// File stem used for each band inside a capture directory.
const char* band_file_stem(Band b);

/// One timestamped 5-band reflectance raster of a field. Planes are H rows by
/// W columns; every value is finite and within [0, 1].
class MultispectralCapture {
 public:
  MultispectralCapture(std::string field_id, Date timestamp, std::array<Plane, kBandCount> bands,
                       double gsd_cm = 2.73);

  const std::string& field_id() const { return field_id_; }
  const Date& timestamp() const { return timestamp_; }
  const Plane& band(Band b) const { return bands_[static_cast<std::size_t>(b)]; }
  double gsd_cm() const { return gsd_cm_; }
  Eigen::Index width() const { return bands_[0].cols(); }
  Eigen::Index height() const { return bands_[0].rows(); }
  std::string id() const { return field_id_ + "@" + timestamp_.iso(); }

 private:
  std::string field_id_;
  Date timestamp_;
  std::array<Plane, kBandCount> bands_;
  double gsd_cm_;
};

struct NdviImage {
  Plane values;
  std::string field_id;
  Date date;
  std::string source_capture_id;
};

struct TileOrigin {
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  friend auto operator<=>(const TileOrigin&, const TileOrigin&) = default;
};

struct Tile {
  std::string field_id;
  int timestep_index = 0;
  Date date;
  TileOrigin origin;
  Eigen::Index size = 0;
  Plane ndvi_patch;
  double vegetation_fraction = 0.0;
};

struct TileSeries {
  std::vector<Tile> tiles;
  std::vector<Date> dates;
};

struct TilingConfig {
  Eigen::Index size = 128;
  double veg_threshold = 0.3;
  double min_fraction = 0.85;
};

// 16-bit binary PGM (P5) I/O. Samples are big-endian as the format requires.
struct RawImage {
  Eigen::Index width = 0;
  Eigen::Index height = 0;
  unsigned maxval = 65535;
  std::vector<std::uint16_t> samples;  // row-major
};
RawImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const RawImage& img);

/// Quantizes reflectance in [0, 1] to 16-bit samples (raw = round(v * 65535)).
RawImage quantize_reflectance(const Plane& plane);

/// Reads the five band rasters plus capture.json from a capture directory.
MultispectralCapture load_capture(const std::filesystem::path& dir);

/// Writes a capture in the layout load_capture expects.
void save_capture(const MultispectralCapture& capture, const std::filesystem::path& dir);

/// Per-pixel (NearIR - Red) / (NearIR + Red); pixels with NearIR + Red == 0 map to 0.
NdviImage compute_ndvi(const MultispectralCapture& capture);

/// Every full S x S cell of the grid anchored at (0, 0), without filtering.
std::vector<Tile> tile_grid(const NdviImage& ndvi, Eigen::Index size, double veg_threshold,
                            int timestep_index = 0);

/// Grid tiles whose vegetation fraction (share of pixels with NDVI >= veg_threshold)
/// reaches min_fraction.
std::vector<Tile> tile_and_filter(const NdviImage& ndvi, Eigen::Index size, double veg_threshold,
                                  double min_fraction, int timestep_index = 0);

struct TileSeriesResult {
  std::vector<TileSeries> series;
  bool insufficient_length = false;
};

/// Sliding windows of length L over time-ordered captures of one field. An
/// origin contributes a window only if its tile passes the vegetation filter at
/// every timestep of that window. Windows are ordered by start, then origin.
TileSeriesResult build_tile_series(const std::vector<MultispectralCapture>& captures, int length,
                                   const TilingConfig& tiling);

double mean_ndvi(const Tile& tile);

}  // namespace chlorolab

#endif
