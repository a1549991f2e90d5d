#include "chlorolab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace chlorolab {

namespace {

int grid_side(int zones) {
  const int g = static_cast<int>(std::lround(std::sqrt(double(zones))));
  return g * g == zones ? g : -1;
}

// Unit-variance white noise smoothed by a (2r+1)^2 box filter.
Plane smoothed_noise(Eigen::Index h, Eigen::Index w, int r, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const Eigen::Index ph = h + 2 * r, pw = w + 2 * r;
  Eigen::MatrixXd integral = Eigen::MatrixXd::Zero(ph + 1, pw + 1);
  for (Eigen::Index i = 0; i < ph; ++i)
    for (Eigen::Index j = 0; j < pw; ++j)
      integral(i + 1, j + 1) = z(rng) + integral(i, j + 1) + integral(i + 1, j) - integral(i, j);
  const Eigen::Index k = 2 * r + 1;
  Plane out(h, w);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      const double sum = integral(i + k, j + k) - integral(i, j + k) - integral(i + k, j) + integral(i, j);
      out(i, j) = sum / double(k);  // mean of k^2 unit normals, rescaled to unit variance
    }
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["fields"] = s.fields;
  j["timesteps"] = s.timesteps;
  j["height"] = s.height;
  j["width"] = s.width;
  j["zones"] = s.zones;
  j["start"] = s.start.iso();
  j["cadence_days"] = s.cadence_days;
  j["t0"] = s.t0;
  j["field_t0_spread"] = s.field_t0_spread;
  j["zone_t0_spread"] = s.zone_t0_spread;
  j["steepness"] = s.steepness;
  j["link_slope"] = s.link_slope;
  j["link_intercept"] = s.link_intercept;
  j["sigma_cf"] = s.sigma_cf;
  j["sigma_ndvi"] = s.sigma_ndvi;
  j["noise_radius"] = s.noise_radius;
  j["cf_offset_pA"] = s.cf_offset_pA;
  j["cf_span_pA"] = s.cf_span_pA;
  j["seed"] = s.seed;
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.fields = j.value("fields", s.fields);
  s.timesteps = j.value("timesteps", s.timesteps);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.zones = j.value("zones", s.zones);
  if (j.contains("start")) s.start = Date::parse(j.at("start").get<std::string>());
  s.cadence_days = j.value("cadence_days", s.cadence_days);
  s.t0 = j.value("t0", s.t0);
  s.field_t0_spread = j.value("field_t0_spread", s.field_t0_spread);
  s.zone_t0_spread = j.value("zone_t0_spread", s.zone_t0_spread);
  s.steepness = j.value("steepness", s.steepness);
  s.link_slope = j.value("link_slope", s.link_slope);
  s.link_intercept = j.value("link_intercept", s.link_intercept);
  s.sigma_cf = j.value("sigma_cf", s.sigma_cf);
  s.sigma_ndvi = j.value("sigma_ndvi", s.sigma_ndvi);
  s.noise_radius = j.value("noise_radius", s.noise_radius);
  s.cf_offset_pA = j.value("cf_offset_pA", s.cf_offset_pA);
  s.cf_span_pA = j.value("cf_span_pA", s.cf_span_pA);
  s.seed = j.value("seed", s.seed);
  return s;
}

void validate(const SynthSpec& s) {
  if (s.fields < 1) throw InvalidInput("synthetic spec needs at least one field");
  if (s.timesteps < 4) throw InvalidInput("synthetic spec needs at least 4 timesteps");
  if (s.height < 1 || s.width < 1) throw InvalidInput("synthetic raster must be non-empty");
  const int g = grid_side(s.zones);
  if (g < 1) throw InvalidInput("zone count must be a square number");
  if (s.height % g != 0 || s.width % g != 0) throw InvalidInput("zone grid must divide the raster");
  if (s.cadence_days < 1) throw InvalidInput("cadence must be at least one day");
  if (!(s.steepness > 0.0)) throw InvalidInput("steepness must be positive");
  if (!(s.sigma_cf >= 0.0 && s.sigma_ndvi >= 0.0)) throw InvalidInput("noise levels must be non-negative");
  if (s.noise_radius < 0) throw InvalidInput("noise radius must be non-negative");
  if (!(s.link_slope != 0.0)) throw InvalidInput("link slope must be non-zero");
  if (!(s.cf_span_pA > 0.0) || s.cf_offset_pA < 0.0 || s.cf_offset_pA + s.cf_span_pA > kCfMaxPicoAmps) {
    throw InvalidInput("CF range must lie within [0, " + std::to_string(int(kCfMaxPicoAmps)) + "] pA");
  }
}

std::vector<ZoneRect> zone_layout(const SynthSpec& spec) {
  validate(spec);
  const int g = grid_side(spec.zones);
  const Eigen::Index zh = spec.height / g, zw = spec.width / g;
  std::vector<ZoneRect> out;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c)
      out.push_back({"z" + std::to_string(r * g + c + 1), r * zh, c * zw, zh, zw});
  return out;
}

std::string synth_field_id(int index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return "F" + std::to_string(index);
}

MultispectralCapture synthesize_capture(const Plane& ndvi, const std::string& field, Date date) {
  const auto h = ndvi.rows(), w = ndvi.cols();
  std::array<Plane, kBandCount> bands;
  bands[static_cast<std::size_t>(Band::NearIR)] = (1.0 + ndvi) / 2.0;
  bands[static_cast<std::size_t>(Band::Red)] = (1.0 - ndvi) / 2.0;
  bands[static_cast<std::size_t>(Band::Blue)] = Plane::Constant(h, w, 0.04);
  bands[static_cast<std::size_t>(Band::Green)] = Plane::Constant(h, w, 0.08);
  bands[static_cast<std::size_t>(Band::RedEdge)] = 0.5 * bands[static_cast<std::size_t>(Band::NearIR)];
  return MultispectralCapture(field, date, std::move(bands));
}

double true_conditional_mean(const SynthSpec& spec, double ndvi) {
  const double mu = (ndvi - spec.link_intercept) / spec.link_slope;
  const double sd = spec.sigma_cf;
  if (sd == 0.0) return std::clamp(mu, 0.0, 1.0);
  // E[clamp(X, 0, 1)] = E[max(X, 0)] - E[max(X - 1, 0)] for X ~ N(mu, sd^2)
  auto positive_part = [sd](double m) { return m * normal_cdf(m / sd) + sd * normal_pdf(m / sd); };
  return positive_part(mu) - positive_part(mu - 1.0);
}

SynthBundle generate(const SynthSpec& spec) {
  validate(spec);
  SynthBundle bundle;
  bundle.spec = spec;
  bundle.zones = zone_layout(spec);
  const auto nz = static_cast<Eigen::Index>(bundle.zones.size());
  const int g = grid_side(spec.zones);
  const Eigen::Index zh = spec.height / g, zw = spec.width / g;

  bundle.fields.resize(static_cast<std::size_t>(spec.fields));
  std::vector<long> outside(static_cast<std::size_t>(spec.fields), 0);
  parallel_for(bundle.fields.size(), [&](std::size_t fi) {
    SynthField& f = bundle.fields[fi];
    f.id = synth_field_id(static_cast<int>(fi));
    std::mt19937_64 rng(mix64(spec.seed ^ fnv1a64(f.id)));
    const double field_pos = spec.fields > 1 ? double(fi) / double(spec.fields - 1) - 0.5 : 0.0;
    f.t0 = spec.t0 + spec.field_t0_spread * field_pos;
    for (Eigen::Index z = 0; z < nz; ++z) {
      const double zone_pos = nz > 1 ? double(z) / double(nz - 1) - 0.5 : 0.0;
      f.zone_t0.push_back(f.t0 + spec.zone_t0_spread * zone_pos);
    }
    f.cf_true.resize(nz, spec.timesteps);
    f.cf_measured.resize(nz, spec.timesteps);
    std::normal_distribution<double> eps(0.0, 1.0);
    for (int t = 0; t < spec.timesteps; ++t) {
      const double day = double(t) * spec.cadence_days;
      for (Eigen::Index z = 0; z < nz; ++z) {
        const double cf = 1.0 / (1.0 + std::exp(spec.steepness * (day - f.zone_t0[static_cast<std::size_t>(z)])));
        f.cf_true(z, t) = cf;
        f.cf_measured(z, t) = std::clamp(cf + spec.sigma_cf * eps(rng), 0.0, 1.0);
      }
    }
    for (int t = 0; t < spec.timesteps; ++t) {
      Plane v(spec.height, spec.width);
      for (Eigen::Index z = 0; z < nz; ++z) {
        const auto& rect = bundle.zones[static_cast<std::size_t>(z)];
        v.block(rect.row, rect.col, zh, zw).setConstant(spec.link_slope * f.cf_true(z, t) + spec.link_intercept);
      }
      if (spec.sigma_ndvi > 0.0) v += spec.sigma_ndvi * smoothed_noise(spec.height, spec.width, spec.noise_radius, rng);
      outside[fi] += (v.abs() > 1.0).count();
      v = v.cwiseMax(-1.0).cwiseMin(1.0);
      const Date date = spec.start.plus_days(long(t) * spec.cadence_days);
      f.captures.push_back(synthesize_capture(v, f.id, date));
      f.ndvi.push_back(std::move(v));
    }
  });

  long total_outside = 0;
  for (long o : outside) total_outside += o;
  const double pixels = double(spec.fields) * spec.timesteps * double(spec.height * spec.width);
  if (double(total_outside) > 0.5 * pixels) {
    throw InfeasibleSpec("spec infeasible: " + std::to_string(total_outside) + " of " +
                         std::to_string(static_cast<long>(pixels)) + " NDVI values fall outside [-1, 1]");
  }

  for (const auto& f : bundle.fields) {
    for (int t = 0; t < spec.timesteps; ++t) {
      for (Eigen::Index z = 0; z < nz; ++z) {
        const auto& rect = bundle.zones[static_cast<std::size_t>(z)];
        GroundTruthSample s;
        s.field_id = f.id;
        s.zone_id = rect.id;
        s.date = spec.start.plus_days(long(t) * spec.cadence_days);
        s.ndvi_mean = f.ndvi[static_cast<std::size_t>(t)].block(rect.row, rect.col, rect.height, rect.width).mean();
        s.cf_pA = spec.cf_offset_pA + spec.cf_span_pA * f.cf_measured(z, t);
        bundle.ground_truth.push_back(s);
      }
    }
  }
  return bundle;
}

void write_bundle(const SynthBundle& bundle, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& f : bundle.fields) {
    for (std::size_t t = 0; t < f.captures.size(); ++t) {
      char name[16];
      std::snprintf(name, sizeof name, "%02zu", t);
      save_capture(f.captures[t], dir / "captures" / f.id / name);
    }
  }
  write_ground_truth_csv(dir / "ground_truth.csv", bundle.ground_truth);

  nlohmann::ordered_json truth;
  truth["spec"] = to_json(bundle.spec);
  truth["cf_model"] = "cf_true = 1 / (1 + exp(steepness * (day - t0_zone))); cf01 = clamp(cf_true + N(0, sigma_cf^2))";
  truth["ndvi_model"] = "ndvi = link_slope * cf_true + link_intercept + sigma_ndvi * smoothed unit noise";
  truth["conditional_mean"] = "E[cf01 | ndvi] = E[clamp(X, 0, 1)], X ~ N((ndvi - link_intercept) / link_slope, sigma_cf^2)";
  auto fields = nlohmann::ordered_json::array();
  for (const auto& f : bundle.fields) {
    nlohmann::ordered_json fj;
    fj["id"] = f.id;
    fj["t0"] = f.t0;
    fj["zone_t0"] = f.zone_t0;
    auto rows = [](const Eigen::MatrixXd& m) {
      std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()),
                                           std::vector<double>(static_cast<std::size_t>(m.cols())));
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
      return out;
    };
    fj["cf_true"] = rows(f.cf_true);
    fj["cf_measured"] = rows(f.cf_measured);
    fields.push_back(fj);
  }
  truth["fields"] = fields;
  std::ofstream(dir / "truth.json", std::ios::binary) << truth.dump(2) << '\n';

  std::ofstream(dir / "zones.json", std::ios::binary) << to_json(bundle.zones).dump(2) << '\n';
}

nlohmann::ordered_json to_json(const std::vector<ZoneRect>& zones) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& z : zones) {
    out.push_back({{"id", z.id}, {"row", z.row}, {"col", z.col}, {"height", z.height}, {"width", z.width}});
  }
  return out;
}

std::vector<ZoneRect> read_zones_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path.string());
  try {
    std::vector<ZoneRect> out;
    for (const auto& z : nlohmann::json::parse(in)) {
      out.push_back({z.at("id").get<std::string>(), z.at("row").get<Eigen::Index>(), z.at("col").get<Eigen::Index>(),
                     z.at("height").get<Eigen::Index>(), z.at("width").get<Eigen::Index>()});
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("zones file " + path.string() + ": " + e.what());
  }
}

std::map<std::string, std::vector<MultispectralCapture>> load_capture_tree(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InvalidInput("capture directory not found: " + root.string());
  std::vector<fs::path> field_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) field_dirs.push_back(e.path());
  std::sort(field_dirs.begin(), field_dirs.end());
  std::map<std::string, std::vector<MultispectralCapture>> out;
  for (const auto& fd : field_dirs) {
    std::vector<fs::path> steps;
    for (const auto& e : fs::directory_iterator(fd))
      if (e.is_directory()) steps.push_back(e.path());
    std::sort(steps.begin(), steps.end());
    for (const auto& s : steps) {
      MultispectralCapture c = load_capture(s);
      out[c.field_id()].push_back(std::move(c));
    }
  }
  for (auto& [field, caps] : out) {
    std::sort(caps.begin(), caps.end(),
              [](const MultispectralCapture& a, const MultispectralCapture& b) { return a.timestamp() < b.timestamp(); });
  }
  return out;
}

}  // namespace chlorolab
