#include "chlorolab/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace chlorolab {

namespace fs = std::filesystem;

const char* band_file_stem(Band b) {
  switch (b) {
    case Band::Blue: return "blue";
    case Band::Green: return "green";
    case Band::Red: return "red";
    case Band::RedEdge: return "rededge";
    case Band::NearIR: return "nearir";
  }
  return "";
}

MultispectralCapture::MultispectralCapture(std::string field_id, Date timestamp,
                                           std::array<Plane, kBandCount> bands, double gsd_cm)
    : field_id_(std::move(field_id)), timestamp_(timestamp), bands_(std::move(bands)),
      gsd_cm_(gsd_cm) {
  if (!(gsd_cm_ > 0.0)) throw InvalidInput("ground sample distance must be positive");
  const auto rows = bands_[0].rows();
  const auto cols = bands_[0].cols();
  if (rows == 0 || cols == 0) throw InvalidInput("missing band: empty raster");
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const Plane& p = bands_[b];
    if (p.rows() != rows || p.cols() != cols) {
      throw InvalidInput(std::string("band dimension mismatch: ") +
                         band_file_stem(static_cast<Band>(b)));
    }
    if (!p.allFinite() || p.minCoeff() < 0.0 || p.maxCoeff() > 1.0) {
      throw InvalidInput(std::string("reflectance outside [0, 1] in band ") +
                         band_file_stem(static_cast<Band>(b)));
    }
  }
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

long parse_header_int(std::istream& in, const fs::path& path) {
  const std::string tok = next_token(in);
  try {
    std::size_t used = 0;
    long v = std::stol(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw InvalidInput("malformed PGM header in " + path.string());
}

}  // namespace

RawImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("missing band file: " + path.string());
  if (next_token(in) != "P5") throw InvalidInput("not a binary PGM (P5): " + path.string());
  RawImage img;
  img.width = parse_header_int(in, path);
  img.height = parse_header_int(in, path);
  const long maxval = parse_header_int(in, path);
  if (maxval > 65535) throw InvalidInput("PGM maxval above 65535: " + path.string());
  img.maxval = static_cast<unsigned>(maxval);
  const std::size_t n = static_cast<std::size_t>(img.width * img.height);
  img.samples.resize(n);
  if (img.maxval < 256) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw InvalidInput("truncated PGM: " + path.string());
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = buf[i];
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (static_cast<std::size_t>(in.gcount()) != 2 * n) {
      throw InvalidInput("truncated PGM: " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      img.samples[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
  }
  return img;
}

void write_pgm(const fs::path& path, const RawImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  std::vector<unsigned char> buf;
  if (img.maxval < 256) {
    buf.assign(img.samples.begin(), img.samples.end());
  } else {
    buf.resize(2 * img.samples.size());
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
      buf[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xFF);
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing " + path.string());
}

RawImage quantize_reflectance(const Plane& plane) {
  RawImage img;
  img.width = plane.cols();
  img.height = plane.rows();
  img.samples.resize(static_cast<std::size_t>(plane.size()));
  for (Eigen::Index r = 0; r < plane.rows(); ++r) {
    for (Eigen::Index c = 0; c < plane.cols(); ++c) {
      const double v = std::clamp(plane(r, c), 0.0, 1.0);
      img.samples[static_cast<std::size_t>(r * plane.cols() + c)] =
          static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
  }
  return img;
}

MultispectralCapture load_capture(const fs::path& dir) {
  const fs::path sidecar = dir / "capture.json";
  std::ifstream meta_in(sidecar);
  if (!meta_in) throw InvalidInput("malformed sidecar: missing " + sidecar.string());
  std::string field_id;
  Date timestamp;
  double gsd = 2.73;
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    field_id = meta.at("field_id").get<std::string>();
    timestamp = Date::parse(meta.at("timestamp").get<std::string>());
    if (meta.contains("gsd_cm")) gsd = meta.at("gsd_cm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("malformed sidecar " + sidecar.string() + ": " + e.what());
  }

  std::array<Plane, kBandCount> bands;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const fs::path file = dir / (std::string(band_file_stem(static_cast<Band>(b))) + ".pgm");
    if (!fs::exists(file)) throw InvalidInput("missing band: " + file.string());
    const RawImage raw = read_pgm(file);
    Plane p(raw.height, raw.width);
    for (Eigen::Index r = 0; r < raw.height; ++r) {
      for (Eigen::Index c = 0; c < raw.width; ++c) {
        // raw / 65535 for the canonical 16-bit layout
        p(r, c) = raw.samples[static_cast<std::size_t>(r * raw.width + c)] / double(raw.maxval);
      }
    }
    bands[b] = std::move(p);
  }
  return MultispectralCapture(std::move(field_id), timestamp, std::move(bands), gsd);
}

void save_capture(const MultispectralCapture& capture, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const Band band = static_cast<Band>(b);
    write_pgm(dir / (std::string(band_file_stem(band)) + ".pgm"),
              quantize_reflectance(capture.band(band)));
  }
  nlohmann::ordered_json meta;
  meta["field_id"] = capture.field_id();
  meta["timestamp"] = capture.timestamp().iso();
  meta["gsd_cm"] = capture.gsd_cm();
  std::ofstream out(dir / "capture.json");
  out << meta.dump(2) << '\n';
}

NdviImage compute_ndvi(const MultispectralCapture& capture) {
  const Plane& nir = capture.band(Band::NearIR);
  const Plane& red = capture.band(Band::Red);
  const Plane sum = nir + red;
  NdviImage out;
  out.values = (sum > 0.0).select((nir - red) / sum, 0.0);
  out.field_id = capture.field_id();
  out.date = capture.timestamp();
  out.source_capture_id = capture.id();
  return out;
}

std::vector<Tile> tile_grid(const NdviImage& ndvi, Eigen::Index size, double veg_threshold,
                            int timestep_index) {
  if (size < 1) throw InvalidInput("tile size must be at least 1");
  std::vector<Tile> tiles;
  const Eigen::Index rows = ndvi.values.rows() / size;
  const Eigen::Index cols = ndvi.values.cols() / size;
  tiles.reserve(static_cast<std::size_t>(rows * cols));
  for (Eigen::Index tr = 0; tr < rows; ++tr) {
    for (Eigen::Index tc = 0; tc < cols; ++tc) {
      Tile t;
      t.field_id = ndvi.field_id;
      t.timestep_index = timestep_index;
      t.date = ndvi.date;
      t.origin = {tr * size, tc * size};
      t.size = size;
      t.ndvi_patch = ndvi.values.block(t.origin.row, t.origin.col, size, size);
      t.vegetation_fraction =
          static_cast<double>((t.ndvi_patch >= veg_threshold).count()) / double(size * size);
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

std::vector<Tile> tile_and_filter(const NdviImage& ndvi, Eigen::Index size, double veg_threshold,
                                  double min_fraction, int timestep_index) {
  if (min_fraction < 0.0 || min_fraction > 1.0) {
    throw InvalidInput("min_fraction must lie in [0, 1]");
  }
  std::vector<Tile> kept;
  for (Tile& t : tile_grid(ndvi, size, veg_threshold, timestep_index)) {
    if (t.vegetation_fraction >= min_fraction) kept.push_back(std::move(t));
  }
  return kept;
}

TileSeriesResult build_tile_series(const std::vector<MultispectralCapture>& captures, int length,
                                   const TilingConfig& tiling) {
  if (length < 1) throw InvalidInput("series length must be at least 1");
  TileSeriesResult result;
  const auto T = static_cast<int>(captures.size());
  if (T < length) {
    result.insufficient_length = true;
    return result;
  }
  for (int t = 1; t < T; ++t) {
    const auto& a = captures[static_cast<std::size_t>(t - 1)];
    const auto& b = captures[static_cast<std::size_t>(t)];
    if (a.field_id() != b.field_id()) throw InvalidInput("captures span several fields");
    if (a.width() != b.width() || a.height() != b.height()) {
      throw InvalidInput("captures are not aligned (dimension mismatch)");
    }
    if (!(a.timestamp() < b.timestamp())) throw InvalidInput("captures not strictly increasing in date");
  }

  // grid[t][i]: every grid cell at timestep t, identical origin order across t
  std::vector<std::vector<Tile>> grid;
  grid.reserve(captures.size());
  for (int t = 0; t < T; ++t) {
    grid.push_back(tile_grid(compute_ndvi(captures[static_cast<std::size_t>(t)]), tiling.size,
                             tiling.veg_threshold, t));
  }
  const std::size_t cells = grid.front().size();
  for (int start = 0; start + length <= T; ++start) {
    for (std::size_t i = 0; i < cells; ++i) {
      bool keep = true;
      for (int t = start; t < start + length && keep; ++t) {
        keep = grid[static_cast<std::size_t>(t)][i].vegetation_fraction >= tiling.min_fraction;
      }
      if (!keep) continue;
      TileSeries s;
      for (int t = start; t < start + length; ++t) {
        s.tiles.push_back(grid[static_cast<std::size_t>(t)][i]);
        s.dates.push_back(captures[static_cast<std::size_t>(t)].timestamp());
      }
      result.series.push_back(std::move(s));
    }
  }
  return result;
}

double mean_ndvi(const Tile& tile) { return tile.ndvi_patch.mean(); }

}  // namespace chlorolab
