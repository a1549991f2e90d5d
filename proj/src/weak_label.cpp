#include "chlorolab/weak_label.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <random>

namespace chlorolab {

const char* model_name(ModelTag tag) {
  switch (tag) {
    case ModelTag::Gmm: return "gmm";
    case ModelTag::Knn: return "knn";
    case ModelTag::Kde: return "kde";
  }
  return "?";
}

ModelTag parse_model(const std::string& name) {
  if (name == "gmm") return ModelTag::Gmm;
  if (name == "knn") return ModelTag::Knn;
  if (name == "kde") return ModelTag::Kde;
  throw InvalidInput("unknown model '" + name + "' (expected gmm, knn or kde)");
}

ModelTag tag_of(const GenerativeModel& model) {
  return static_cast<ModelTag>(model.index());
}

const ScaleParams& scale_of(const GenerativeModel& model) {
  return std::visit([](const auto& m) -> const ScaleParams& { return m.scale; }, model);
}

const std::vector<std::string>& train_fields_of(const GenerativeModel& model) {
  return std::visit([](const auto& m) -> const std::vector<std::string>& { return m.train_fields; }, model);
}

Histogram1D conditional_histogram(const GenerativeModel& model, double date01, double ndvi01,
                                  const VectorX& cf_grid) {
  switch (tag_of(model)) {
    case ModelTag::Gmm: return gmm_conditional(std::get<GmmModel>(model), date01, ndvi01, cf_grid);
    case ModelTag::Knn: return knn_histogram(std::get<KnnModel>(model), date01, ndvi01);
    case ModelTag::Kde: return kde_conditional(std::get<KdeModel>(model), date01, ndvi01, cf_grid);
  }
  throw Error("unreachable");
}

double point_prediction(const GenerativeModel& model, double date01, double ndvi01,
                        const VectorX& cf_grid) {
  if (const auto* knn = std::get_if<KnnModel>(&model)) return knn_predict(*knn, date01, ndvi01);
  return conditional_histogram(model, date01, ndvi01, cf_grid).mean();
}

nlohmann::json to_json(const GenerativeModel& model) {
  nlohmann::json j = std::visit([](const auto& m) { return to_json(m); }, model);
  j["model"] = model_name(tag_of(model));
  return j;
}

GenerativeModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("model")) throw InvalidInput("model file lacks a 'model' tag");
  switch (parse_model(j.at("model").get<std::string>())) {
    case ModelTag::Gmm: return gmm_from_json(j);
    case ModelTag::Knn: return knn_from_json(j);
    case ModelTag::Kde: return kde_from_json(j);
  }
  throw Error("unreachable");
}

double sample_weak_label(const Histogram1D& hist, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const VectorX& m = hist.masses();
  std::discrete_distribution<Eigen::Index> pick(m.data(), m.data() + m.size());
  double value = hist.centers()(pick(rng));
  const double sd = std::sqrt(hist.variance());
  if (sd > 0.0) value += std::normal_distribution<double>(0.0, sd)(rng);
  return std::clamp(value, 0.0, 1.0);
}

std::uint64_t tile_seed(std::uint64_t base_seed, const std::string& field, int timestep,
                        TileOrigin origin) {
  const std::string key = field + '\x1f' + std::to_string(timestep) + '\x1f' +
                          std::to_string(origin.row) + '\x1f' + std::to_string(origin.col);
  return base_seed ^ mix64(fnv1a64(key));
}

LabelSet label_dataset(const GenerativeModel& model, const std::vector<Tile>& tiles,
                       std::uint64_t base_seed, const VectorX& cf_grid) {
  const auto& trained_on = train_fields_of(model);
  for (const auto& t : tiles) {
    if (std::find(trained_on.begin(), trained_on.end(), t.field_id) != trained_on.end()) {
      throw InvalidInput("cannot label field '" + t.field_id + "': the model was fitted on it");
    }
  }
  const ScaleParams& scale = scale_of(model);
  const ModelTag tag = tag_of(model);

  std::vector<std::optional<WeakLabel>> labels(tiles.size());
  std::vector<std::string> failures(tiles.size());
  parallel_for(tiles.size(), [&](std::size_t i) {
    const Tile& t = tiles[i];
    const double ndvi = mean_ndvi(t);
    const Vector3 x = apply_scale(raw_triple(t.date, ndvi, scale.min(kCfDim), scale), scale);
    try {
      const Histogram1D hist = conditional_histogram(model, x(kDateDim), x(kNdviDim), cf_grid);
      WeakLabel label;
      label.field = t.field_id;
      label.timestep = t.timestep_index;
      label.origin = t.origin;
      label.tile_size = t.size;
      label.date = t.date;
      label.ndvi_mean = ndvi;
      label.model = tag;
      label.seed = tile_seed(base_seed, t.field_id, t.timestep_index, t.origin);
      label.cf01 = sample_weak_label(hist, label.seed);
      label.cf_pA = invert_scale(Vector3(0.0, 0.0, label.cf01), scale)(kCfDim);
      labels[i] = label;
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });

  LabelSet out;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (labels[i]) {
      out.labels.push_back(*labels[i]);
    } else {
      out.skipped.push_back({tiles[i].field_id, tiles[i].timestep_index, tiles[i].origin, failures[i]});
    }
  }
  return out;
}

void write_labels_jsonl(const std::filesystem::path& path, const std::vector<WeakLabel>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : labels) {
    nlohmann::ordered_json j;
    j["field"] = l.field;
    j["timestep"] = l.timestep;
    j["origin"] = {l.origin.row, l.origin.col};
    j["tile_size"] = l.tile_size;
    j["date"] = l.date.iso();
    j["ndvi_mean"] = l.ndvi_mean;
    j["cf01"] = l.cf01;
    j["cf_pA"] = l.cf_pA;
    j["model"] = model_name(l.model);
    j["seed"] = l.seed;
    out << j.dump() << '\n';
  }
}

std::vector<WeakLabel> read_labels_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path.string());
  std::vector<WeakLabel> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      WeakLabel l;
      l.field = j.at("field").get<std::string>();
      l.timestep = j.at("timestep").get<int>();
      l.origin = {j.at("origin").at(0).get<Eigen::Index>(), j.at("origin").at(1).get<Eigen::Index>()};
      l.tile_size = j.value("tile_size", Eigen::Index{0});
      l.date = Date::parse(j.at("date").get<std::string>());
      l.ndvi_mean = j.at("ndvi_mean").get<double>();
      l.cf01 = j.at("cf01").get<double>();
      l.cf_pA = j.value("cf_pA", 0.0);
      l.model = parse_model(j.at("model").get<std::string>());
      l.seed = j.at("seed").get<std::uint64_t>();
      if (!(l.cf01 >= 0.0 && l.cf01 <= 1.0)) throw InvalidInput("cf01 outside [0, 1]");
      out.push_back(std::move(l));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_skips_csv(const std::filesystem::path& path, const std::vector<SkippedTile>& skipped) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "field,timestep,origin_row,origin_col,reason\r\n";
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + '"';
  };
  for (const auto& s : skipped) {
    out << quote(s.field) << ',' << s.timestep << ',' << s.origin.row << ',' << s.origin.col << ','
        << quote(s.reason) << "\r\n";
  }
}

std::vector<FoldSpec> leave_one_field_out(const std::map<std::string, std::size_t>& field_counts) {
  if (field_counts.size() < 2) {
    throw InvalidInput("leave-one-field-out needs at least 2 fields, got " +
                       std::to_string(field_counts.size()));
  }
  std::size_t total = 0;
  for (const auto& [field, count] : field_counts) total += count;
  std::vector<FoldSpec> folds;
  for (const auto& [field, count] : field_counts) {
    FoldSpec f;
    f.test_field = field;
    f.test_count = count;
    f.train_count = total - count;
    for (const auto& [other, unused] : field_counts) {
      if (other != field) f.train_fields.push_back(other);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace chlorolab
