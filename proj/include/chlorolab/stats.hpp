#ifndef CHLOROLAB_STATS_HPP
#define CHLOROLAB_STATS_HPP

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chlorolab/core.hpp"
#include "json.hpp"

namespace chlorolab {

inline constexpr double kCfMaxPicoAmps = 10000.0;

struct GroundTruthSample {
  std::string field_id;
  std::string zone_id;
  Date date;
  double ndvi_mean = 0.0;
  double cf_pA = 0.0;
};

/// Throws InvalidInput if ndvi_mean is outside [-1, 1] or cf_pA outside [0, 10000].
void validate(const GroundTruthSample& s);

// Ground-truth CSV: header field_id,zone_id,date,ndvi_mean,cf_pA (RFC 4180).
std::vector<GroundTruthSample> read_ground_truth_csv(const std::filesystem::path& path);
void write_ground_truth_csv(const std::filesystem::path& path,
                            const std::vector<GroundTruthSample>& samples);

/// Splits one RFC 4180 record into fields (quoted fields may hold commas and "").
std::vector<std::string> split_csv_record(const std::string& line);

/// Raw (date, ndvi, cf_pA) rows with date as days since date_origin (an epoch day number).
SampleMatrix raw_triples(const std::vector<GroundTruthSample>& samples, long date_origin);

enum class CorrelationMethod { Pearson, Spearman };

double correlation(std::span<const double> xs, std::span<const double> ys,
                   CorrelationMethod method);

/// Average ranks (1-based); tied values share the mean of their positions.
VectorX average_ranks(std::span<const double> values);

/// 3x3 correlation matrix over rows of (date, ndvi, cf). Entry order of the
/// result is (NDVI, CF, Date).
Matrix3 correlation_matrix(const SampleMatrix& date_ndvi_cf, CorrelationMethod method);

/// Per-dimension min/max for (date, ndvi, cf). Raw dates are counted in days
/// since date_origin, the earliest training observation.
struct ScaleParams {
  long date_origin = 0;
  Vector3 min = Vector3::Zero();
  Vector3 max = Vector3::Ones();
};

/// Fits on raw rows whose date column is already relative (date_origin = 0).
ScaleParams fit_scale(const SampleMatrix& raw);
/// Fits on ground truth, anchoring dates at the earliest sample.
ScaleParams fit_scale(const std::vector<GroundTruthSample>& samples);
/// Raw (days since origin, ndvi, cf) for one observation.
Vector3 raw_triple(const Date& date, double ndvi, double cf_pA, const ScaleParams& p);
/// Maps raw rows into [0, 1]^3, clamping values outside the fitted range.
Vector3 apply_scale(const Vector3& raw, const ScaleParams& p);
SampleMatrix apply_scale(const SampleMatrix& raw, const ScaleParams& p);
/// Linear map without clamping; used for truth values at evaluation time.
double scale_unclamped(double raw, int dim, const ScaleParams& p);
Vector3 invert_scale(const Vector3& scaled, const ScaleParams& p);

nlohmann::json to_json(const ScaleParams& p);
ScaleParams scale_from_json(const nlohmann::json& j);

// Scaled dimension indices.
inline constexpr int kDateDim = 0;
inline constexpr int kNdviDim = 1;
inline constexpr int kCfDim = 2;

/// Samples grouped by field id, fields in ascending order.
std::map<std::string, std::vector<GroundTruthSample>> group_by_field(
    const std::vector<GroundTruthSample>& samples);

}  // namespace chlorolab

#endif
