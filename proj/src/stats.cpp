#include "chlorolab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace chlorolab {

void validate(const GroundTruthSample& s) {
  if (!(s.ndvi_mean >= -1.0 && s.ndvi_mean <= 1.0)) {
    throw InvalidInput("ndvi_mean outside [-1, 1] for " + s.field_id + "/" + s.zone_id);
  }
  if (!(s.cf_pA >= 0.0 && s.cf_pA <= kCfMaxPicoAmps)) {
    throw InvalidInput("cf_pA outside [0, 10000] for " + s.field_id + "/" + s.zone_id);
  }
}

std::vector<std::string> split_csv_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw InvalidInput("unterminated quoted CSV field");
  fields.push_back(std::move(cur));
  return fields;
}

namespace {

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidInput("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

std::vector<GroundTruthSample> read_ground_truth_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open ground-truth CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty ground-truth CSV: " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::vector<std::string> expected{"field_id", "zone_id", "date", "ndvi_mean", "cf_pA"};
  if (split_csv_record(line) != expected) {
    throw InvalidInput("unexpected ground-truth CSV header: " + line);
  }
  std::vector<GroundTruthSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_record(line);
    if (f.size() != 5) {
      throw InvalidInput("line " + std::to_string(line_no) + ": expected 5 fields");
    }
    GroundTruthSample s{f[0], f[1], Date::parse(f[2]), parse_double(f[3], line_no),
                        parse_double(f[4], line_no)};
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

void write_ground_truth_csv(const std::filesystem::path& path,
                            const std::vector<GroundTruthSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "field_id,zone_id,date,ndvi_mean,cf_pA\r\n";
  char buf[64];
  for (const auto& s : samples) {
    out << csv_escape(s.field_id) << ',' << csv_escape(s.zone_id) << ',' << s.date.iso() << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", s.ndvi_mean, s.cf_pA);
    out << buf << "\r\n";
  }
}

SampleMatrix raw_triples(const std::vector<GroundTruthSample>& samples, long date_origin) {
  SampleMatrix m(static_cast<Eigen::Index>(samples.size()), 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    m(r, 0) = static_cast<double>(samples[i].date.day_number() - date_origin);
    m(r, 1) = samples[i].ndvi_mean;
    m(r, 2) = samples[i].cf_pA;
  }
  return m;
}

VectorX average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  VectorX ranks(static_cast<Eigen::Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(order[k])) = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const Eigen::Ref<const VectorX>& x, const Eigen::Ref<const VectorX>& y) {
  const VectorX dx = x.array() - x.mean();
  const VectorX dy = y.array() - y.mean();
  const double sxx = dx.squaredNorm();
  const double syy = dy.squaredNorm();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw InvalidInput("degenerate series: zero variance");
  return std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

double correlation(std::span<const double> xs, std::span<const double> ys,
                   CorrelationMethod method) {
  if (xs.size() != ys.size()) throw InvalidInput("correlation: length mismatch");
  if (xs.size() < 2) throw InvalidInput("correlation: need at least two points");
  if (method == CorrelationMethod::Spearman) {
    return pearson(average_ranks(xs), average_ranks(ys));
  }
  const Eigen::Map<const VectorX> x(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const Eigen::Map<const VectorX> y(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return pearson(x, y);
}

Matrix3 correlation_matrix(const SampleMatrix& date_ndvi_cf, CorrelationMethod method) {
  if (date_ndvi_cf.rows() < 2) throw InvalidInput("correlation_matrix: need at least two samples");
  // output order (NDVI, CF, Date) -> input columns (1, 2, 0)
  const int cols[3] = {1, 2, 0};
  std::array<VectorX, 3> series;
  for (int i = 0; i < 3; ++i) series[static_cast<std::size_t>(i)] = date_ndvi_cf.col(cols[i]);
  Matrix3 m = Matrix3::Identity();
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const auto& a = series[static_cast<std::size_t>(i)];
      const auto& b = series[static_cast<std::size_t>(j)];
      m(i, j) = m(j, i) = correlation({a.data(), static_cast<std::size_t>(a.size())},
                                      {b.data(), static_cast<std::size_t>(b.size())}, method);
    }
  }
  return m;
}

ScaleParams fit_scale(const SampleMatrix& raw) {
  if (raw.rows() < 2) throw InvalidInput("fit_scale: need at least two samples");
  ScaleParams p;
  p.min = raw.colwise().minCoeff().transpose();
  p.max = raw.colwise().maxCoeff().transpose();
  for (int d = 0; d < 3; ++d) {
    if (!(p.max(d) > p.min(d))) {
      throw InvalidInput("fit_scale: constant dimension " + std::to_string(d));
    }
  }
  return p;
}

ScaleParams fit_scale(const std::vector<GroundTruthSample>& samples) {
  if (samples.empty()) throw InvalidInput("fit_scale: no samples");
  long origin = samples.front().date.day_number();
  for (const auto& s : samples) origin = std::min(origin, s.date.day_number());
  ScaleParams p = fit_scale(raw_triples(samples, origin));
  p.date_origin = origin;
  return p;
}

Vector3 raw_triple(const Date& date, double ndvi, double cf_pA, const ScaleParams& p) {
  return {static_cast<double>(date.day_number() - p.date_origin), ndvi, cf_pA};
}

Vector3 apply_scale(const Vector3& raw, const ScaleParams& p) {
  return ((raw - p.min).array() / (p.max - p.min).array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

SampleMatrix apply_scale(const SampleMatrix& raw, const ScaleParams& p) {
  SampleMatrix out(raw.rows(), 3);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    out.row(i) = apply_scale(Vector3(raw.row(i).transpose()), p).transpose();
  }
  return out;
}

double scale_unclamped(double raw, int dim, const ScaleParams& p) {
  return (raw - p.min(dim)) / (p.max(dim) - p.min(dim));
}

Vector3 invert_scale(const Vector3& scaled, const ScaleParams& p) {
  return p.min + scaled.cwiseProduct(p.max - p.min);
}

nlohmann::json to_json(const ScaleParams& p) {
  return {{"date_origin", Date(std::chrono::sys_days(std::chrono::days(p.date_origin))).iso()},
          {"min", {p.min(0), p.min(1), p.min(2)}},
          {"max", {p.max(0), p.max(1), p.max(2)}}};
}

ScaleParams scale_from_json(const nlohmann::json& j) {
  ScaleParams p;
  p.date_origin = Date::parse(j.at("date_origin").get<std::string>()).day_number();
  for (int d = 0; d < 3; ++d) {
    p.min(d) = j.at("min").at(static_cast<std::size_t>(d)).get<double>();
    p.max(d) = j.at("max").at(static_cast<std::size_t>(d)).get<double>();
  }
  return p;
}

std::map<std::string, std::vector<GroundTruthSample>> group_by_field(
    const std::vector<GroundTruthSample>& samples) {
  std::map<std::string, std::vector<GroundTruthSample>> out;
  for (const auto& s : samples) out[s.field_id].push_back(s);
  return out;
}

}  // namespace chlorolab
