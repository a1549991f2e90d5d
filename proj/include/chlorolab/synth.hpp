#ifndef CHLOROLAB_SYNTH_HPP
#define CHLOROLAB_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chlorolab/raster.hpp"
#include "chlorolab/stats.hpp"
#include "json.hpp"

namespace chlorolab {

/// Synthetic fields with a known CF/NDVI relationship.
///
/// Each zone follows a logistic CF decline over days t since `start`:
///   cf_true(t) = 1 / (1 + exp(s (t - t0_zone)))
/// Pixel NDVI is a * cf_true + b plus spatially smoothed Gaussian noise.
/// Ground-truth CF is cf_true plus N(0, sigma_cf^2) measurement noise,
/// clamped to [0, 1] and reported in picoamperes as
/// cf_offset_pA + cf01 * cf_span_pA.
struct SynthSpec {
  int fields = 2;
  int timesteps = 6;
  Eigen::Index height = 256;
  Eigen::Index width = 256;
  int zones = 4;  // a square number; zones tile the raster as a grid
  Date start{2020, 7, 1};
  int cadence_days = 7;
  double t0 = 17.0;               // mean logistic midpoint, days
  double field_t0_spread = 4.0;   // midpoints of the fields span this range
  double zone_t0_spread = 6.0;    // midpoints of zones within a field span this range
  double steepness = 0.15;        // s, per day
  double link_slope = 0.5;        // a
  double link_intercept = 0.35;   // b
  double sigma_cf = 0.02;
  double sigma_ndvi = 0.02;
  int noise_radius = 4;           // box-blur radius of the NDVI noise
  double cf_offset_pA = 500.0;
  double cf_span_pA = 4000.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const SynthSpec& spec);
/// Missing keys keep their defaults.
SynthSpec synth_spec_from_json(const nlohmann::json& j);
void validate(const SynthSpec& spec);

struct ZoneRect {
  std::string id;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  Eigen::Index height = 0;
  Eigen::Index width = 0;

  bool contains(Eigen::Index r, Eigen::Index c) const {
    return r >= row && r < row + height && c >= col && c < col + width;
  }
};

std::vector<ZoneRect> zone_layout(const SynthSpec& spec);
nlohmann::ordered_json to_json(const std::vector<ZoneRect>& zones);
std::vector<ZoneRect> read_zones_json(const std::filesystem::path& path);

struct SynthField {
  std::string id;
  double t0 = 0.0;
  std::vector<double> zone_t0;
  std::vector<MultispectralCapture> captures;  // one per timestep
  std::vector<Plane> ndvi;                     // generator NDVI per timestep
  Eigen::MatrixXd cf_true;                     // zones x timesteps
  Eigen::MatrixXd cf_measured;                 // zones x timesteps, clamped
};

struct SynthBundle {
  SynthSpec spec;
  std::vector<ZoneRect> zones;
  std::vector<SynthField> fields;
  std::vector<GroundTruthSample> ground_truth;
};

class InfeasibleSpec : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

std::string synth_field_id(int index);

/// Throws InfeasibleSpec ("spec infeasible") when more than half of the
/// pixels fall outside [-1, 1] before clamping.
SynthBundle generate(const SynthSpec& spec);

/// Reflectance bands whose NDVI equals v: NearIR = (1 + v) / 2, Red = (1 - v) / 2.
MultispectralCapture synthesize_capture(const Plane& ndvi, const std::string& field, Date date);

/// E[cf01 | ndvi] under the generator: the link inverse (ndvi - b) / a,
/// blurred by the measurement noise and clamped to [0, 1].
double true_conditional_mean(const SynthSpec& spec, double ndvi);

/// Writes captures/<field>/<tt>/, ground_truth.csv, truth.json, zones.json.
void write_bundle(const SynthBundle& bundle, const std::filesystem::path& dir);

/// Loads every capture under root/<field>/<timestep>/, grouped by field and
/// sorted by date.
std::map<std::string, std::vector<MultispectralCapture>> load_capture_tree(const std::filesystem::path& root);

}  // namespace chlorolab

#endif
