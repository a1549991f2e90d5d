#include "chlorolab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace chlorolab {

namespace {

std::string fixed(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> fields_of(const std::vector<GroundTruthSample>& samples) {
  std::set<std::string> s;
  for (const auto& g : samples) s.insert(g.field_id);
  return {s.begin(), s.end()};
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

template <typename Model>
void stamp(Model& m, const ScaleParams& scale, const std::vector<std::string>& fields) {
  m.scale = scale;
  m.train_fields = fields;
}

nlohmann::json without_table(nlohmann::json selection) {
  selection.erase("table");
  return selection;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) throw Error("cannot write " + path.string());
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InvalidInput("rmse: length mismatch");
  if (pred.empty()) throw InvalidInput("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(sum / static_cast<double>(pred.size()));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) { return mix64(base ^ fnv1a64(label)); }

nlohmann::json to_json(const GenerativeConfig& c) {
  return {{"gmm_components", c.gmm_components},
          {"gmm", {{"max_iter", c.gmm.max_iter}, {"tol", c.gmm.tol}, {"reg", c.gmm.reg}}},
          {"knn_k_max", c.knn_k_max},
          {"knn_folds", c.knn_folds},
          {"kde_grid", {{"lo", c.kde_grid.lo}, {"hi", c.kde_grid.hi}, {"step", c.kde_grid.step}}},
          {"kde_folds", c.kde_folds},
          {"kde_kernel", kernel_name(c.kde_kernel)},
          {"cf_bins", c.cf_bins}};
}

GenerativeConfig generative_config_from_json(const nlohmann::json& j) {
  GenerativeConfig c;
  try {
    c.gmm_components = j.value("gmm_components", c.gmm_components);
    if (j.contains("gmm")) {
      const auto& g = j.at("gmm");
      c.gmm.max_iter = g.value("max_iter", c.gmm.max_iter);
      c.gmm.tol = g.value("tol", c.gmm.tol);
      c.gmm.reg = g.value("reg", c.gmm.reg);
    }
    c.knn_k_max = j.value("knn_k_max", c.knn_k_max);
    c.knn_folds = j.value("knn_folds", c.knn_folds);
    if (j.contains("kde_grid")) {
      const auto& g = j.at("kde_grid");
      c.kde_grid.lo = g.value("lo", c.kde_grid.lo);
      c.kde_grid.hi = g.value("hi", c.kde_grid.hi);
      c.kde_grid.step = g.value("step", c.kde_grid.step);
    }
    c.kde_folds = j.value("kde_folds", c.kde_folds);
    if (j.contains("kde_kernel")) c.kde_kernel = parse_kernel(j.at("kde_kernel").get<std::string>());
    c.cf_bins = j.value("cf_bins", c.cf_bins);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("generative config: " + std::string(e.what()));
  }
  if (c.gmm_components.empty() || c.knn_k_max < 1 || c.cf_bins < 2) {
    throw InvalidInput("generative config: empty hyperparameter grid");
  }
  return c;
}

GenerativeFit fit_generative(ModelTag tag, const std::vector<GroundTruthSample>& train,
                             const GenerativeConfig& config, std::uint64_t seed) {
  if (train.empty()) throw InvalidInput("no training samples");
  const ScaleParams scale = fit_scale(train);
  const SampleMatrix scaled = apply_scale(raw_triples(train, scale.date_origin), scale);
  const std::vector<std::string> fields = fields_of(train);
  GenerativeFit out{GmmModel{}, nlohmann::json::object()};
  switch (tag) {
    case ModelTag::Gmm: {
      GmmConfig g = config.gmm;
      g.seed = seed;
      ComponentSelection sel = select_components(scaled, config.gmm_components, g);
      nlohmann::json rows = nlohmann::json::array();
      std::size_t best = 0;
      for (std::size_t i = 0; i < sel.table.size(); ++i) {
        const auto& r = sel.table[i];
        rows.push_back({{"components", r.components}, {"bic", r.bic}, {"aic", r.aic}, {"score", r.score}});
        if (r.components == sel.best) best = i;
      }
      GmmModel m = std::move(sel.models[best]);
      stamp(m, scale, fields);
      out.model = std::move(m);
      out.selection = {{"procedure", "bic_aic"}, {"best_components", sel.best}, {"table", rows}};
      break;
    }
    case ModelTag::Knn: {
      const Eigen::Index n = scaled.rows();
      const Eigen::Index largest_fold = (n + config.knn_folds - 1) / config.knn_folds;
      const int k_max = static_cast<int>(std::min<Eigen::Index>(config.knn_k_max, n - largest_fold));
      if (k_max < 1) throw InvalidInput("too few samples for the k search");
      const KSearchResult r = grid_search_k(scaled, k_max, config.knn_folds, seed);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : r.table) rows.push_back({{"k", row.k}, {"rmse", row.rmse}});
      KnnModel m = make_knn(scaled, r.best_k);
      stamp(m, scale, fields);
      out.model = std::move(m);
      out.selection = {{"procedure", "cv_rmse"}, {"best_k", r.best_k}, {"k_max", k_max}, {"table", rows}};
      break;
    }
    case ModelTag::Kde: {
      const MatrixX data = scaled;
      const BandwidthSearch r = grid_search_bandwidth(data, config.kde_grid, config.kde_folds, seed, config.kde_kernel);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : r.table) rows.push_back({{"h", row.h}, {"score", row.score}});
      KdeModel m = make_kde(data, r.best_h, config.kde_kernel);
      stamp(m, scale, fields);
      out.model = std::move(m);
      out.selection = {
          {"procedure", "cv_log_density"}, {"best_h", r.best_h}, {"kernel", kernel_name(config.kde_kernel)}, {"table", rows}};
      break;
    }
  }
  return out;
}

std::vector<GroundTruthSample> without_field(const std::vector<GroundTruthSample>& samples,
                                             const std::string& excluded) {
  std::vector<GroundTruthSample> out;
  for (const auto& s : samples)
    if (s.field_id != excluded) out.push_back(s);
  return out;
}

const EvalResult& EvalTable::at(const std::string& model, const std::string& fold) const {
  for (const auto& c : cells)
    if (c.model == model && c.test_field == fold) return c;
  throw InvalidInput("no result for " + model + " on " + fold);
}

double EvalTable::mean(const std::string& model) const {
  double sum = 0.0;
  for (const auto& f : folds) {
    const EvalResult& r = at(model, f);
    if (!r.ok()) return std::numeric_limits<double>::quiet_NaN();
    sum += r.rmse;
  }
  return folds.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(folds.size());
}

nlohmann::json to_json(const EvalTable& t) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"model", c.model},
                     {"test_field", c.test_field},
                     {"rmse", c.ok() ? nlohmann::json(c.rmse) : nlohmann::json(nullptr)},
                     {"n_test", c.n_test},
                     {"error", c.error},
                     {"manifest", c.manifest}});
  }
  return {{"kind", t.kind}, {"models", t.models}, {"folds", t.folds}, {"cells", cells}};
}

EvalTable eval_table_from_json(const nlohmann::json& j) {
  try {
    EvalTable t;
    t.kind = j.at("kind").get<std::string>();
    t.models = j.at("models").get<std::vector<std::string>>();
    t.folds = j.at("folds").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) {
      EvalResult r;
      r.model = c.at("model").get<std::string>();
      r.test_field = c.at("test_field").get<std::string>();
      if (!c.at("rmse").is_null()) r.rmse = c.at("rmse").get<double>();
      r.n_test = c.at("n_test").get<std::size_t>();
      r.error = c.at("error").get<std::string>();
      r.manifest = c.at("manifest");
      t.cells.push_back(std::move(r));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("evaluation table: " + std::string(e.what()));
  }
}

EvalTable run_generative_cv(const std::vector<GroundTruthSample>& ground_truth,
                            const std::vector<ModelTag>& tags, const GenerativeConfig& config,
                            std::uint64_t seed) {
  const auto groups = group_by_field(ground_truth);
  if (groups.size() < 2) throw InvalidInput("cross-validation needs at least two fields");
  if (tags.empty()) throw InvalidInput("no models to evaluate");
  EvalTable table;
  table.kind = "generative";
  for (ModelTag t : tags) table.models.push_back(model_name(t));
  const VectorX grid = uniform_grid(config.cf_bins);
  for (const auto& [test_field, test] : groups) {
    table.folds.push_back(test_field);
    const auto train = without_field(ground_truth, test_field);
    for (ModelTag tag : tags) {
      EvalResult r;
      r.model = model_name(tag);
      r.test_field = test_field;
      const std::uint64_t cell_seed = derive_seed(seed, "generative/" + r.model + "/" + test_field);
      r.manifest = {{"kind", "generative"},   {"model", r.model},           {"test_field", test_field},
                    {"train_fields", fields_of(train)}, {"seed", cell_seed}, {"config", to_json(config)}};
      try {
        const GenerativeFit fit = fit_generative(tag, train, config, cell_seed);
        const ScaleParams& scale = scale_of(fit.model);
        std::vector<double> pred, truth;
        for (const auto& s : test) {
          const Vector3 x = apply_scale(raw_triple(s.date, s.ndvi_mean, s.cf_pA, scale), scale);
          pred.push_back(point_prediction(fit.model, x(kDateDim), x(kNdviDim), grid));
          truth.push_back(scale_unclamped(s.cf_pA, kCfDim, scale));
        }
        r.rmse = rmse(pred, truth);
        r.n_test = test.size();
        r.manifest["selected"] = without_table(fit.selection);
      } catch (const Error& e) {
        r.error = e.what();
      }
      table.cells.push_back(std::move(r));
    }
  }
  return table;
}

FieldLabels label_fields(ModelTag tag, const std::vector<GroundTruthSample>& ground_truth,
                         const CaptureTree& captures, const TilingConfig& tiling,
                         const GenerativeConfig& config, std::uint64_t seed) {
  FieldLabels out;
  const VectorX grid = uniform_grid(config.cf_bins);
  for (const auto& [field, caps] : captures) {
    const auto train = without_field(ground_truth, field);
    const std::uint64_t fit_seed = derive_seed(seed, std::string("fit/") + model_name(tag) + "/" + field);
    const GenerativeFit fit = fit_generative(tag, train, config, fit_seed);
    out.selection[field] = without_table(fit.selection);
    std::vector<Tile> tiles;
    for (std::size_t t = 0; t < caps.size(); ++t) {
      auto more = tile_and_filter(compute_ndvi(caps[t]), tiling.size, tiling.veg_threshold, tiling.min_fraction,
                                  static_cast<int>(t));
      std::move(more.begin(), more.end(), std::back_inserter(tiles));
    }
    const std::uint64_t label_seed = derive_seed(seed, std::string("label/") + model_name(tag));
    LabelSet set = label_dataset(fit.model, tiles, label_seed, grid);
    std::move(set.labels.begin(), set.labels.end(), std::back_inserter(out.set.labels));
    std::move(set.skipped.begin(), set.skipped.end(), std::back_inserter(out.set.skipped));
  }
  return out;
}

nlohmann::json to_json(const NeuralConfig& c) {
  return {{"networks", c.networks},
          {"sizes", c.sizes},
          {"veg_threshold", c.veg_threshold},
          {"min_fraction", c.min_fraction},
          {"length", c.length},
          {"trunk", {{"resolution", c.trunk.resolution}, {"channels", c.trunk.channels}, {"blocks", c.trunk.blocks}}},
          {"hidden", c.hidden},
          {"train",
           {{"learning_rate", c.train.learning_rate},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"epsilon", c.train.epsilon},
            {"batch_size", c.train.batch_size},
            {"max_epochs", c.train.max_epochs},
            {"patience", c.train.patience},
            {"holdout_fraction", c.train.holdout_fraction}}}};
}

NeuralConfig neural_config_from_json(const nlohmann::json& j) {
  NeuralConfig c;
  try {
    c.networks = j.value("networks", c.networks);
    c.sizes = j.value("sizes", c.sizes);
    c.veg_threshold = j.value("veg_threshold", c.veg_threshold);
    c.min_fraction = j.value("min_fraction", c.min_fraction);
    c.length = j.value("length", c.length);
    if (j.contains("trunk")) {
      const auto& t = j.at("trunk");
      c.trunk.resolution = t.value("resolution", c.trunk.resolution);
      c.trunk.channels = t.value("channels", c.trunk.channels);
      c.trunk.blocks = t.value("blocks", c.trunk.blocks);
    }
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.beta1 = t.value("beta1", c.train.beta1);
      c.train.beta2 = t.value("beta2", c.train.beta2);
      c.train.epsilon = t.value("epsilon", c.train.epsilon);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
      c.train.patience = t.value("patience", c.train.patience);
      c.train.holdout_fraction = t.value("holdout_fraction", c.train.holdout_fraction);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("neural config: " + std::string(e.what()));
  }
  if (c.networks.empty() || c.sizes.empty()) throw InvalidInput("neural config: empty network or size list");
  for (const auto& n : c.networks)
    if (n != "cnn" && n != "bilstm") throw InvalidInput("unknown network '" + n + "'");
  return c;
}

namespace {

struct TileKey {
  std::string field;
  int timestep = 0;
  TileOrigin origin;
  friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

struct FieldImagery {
  std::vector<Tile> tiles;
  std::vector<TileSeries> series;
};

// Sum and count of predictions per tile of the test field.
using TileVotes = std::map<std::pair<int, TileOrigin>, std::pair<double, int>>;

std::vector<double> zone_predictions(const std::vector<GroundTruthSample>& test,
                                     const std::vector<MultispectralCapture>& caps,
                                     const std::vector<ZoneRect>& zones, Eigen::Index size,
                                     const TileVotes& votes, const ScaleParams& scale,
                                     std::vector<double>& truth) {
  std::vector<double> pred;
  for (const auto& s : test) {
    int timestep = -1;
    for (std::size_t t = 0; t < caps.size(); ++t)
      if (caps[t].timestamp() == s.date) timestep = static_cast<int>(t);
    if (timestep < 0) continue;
    const ZoneRect* zone = nullptr;
    for (const auto& z : zones)
      if (z.id == s.zone_id) zone = &z;
    double sum = 0.0;
    int count = 0;
    for (const auto& [key, vote] : votes) {
      if (key.first != timestep) continue;
      const TileOrigin o = key.second;
      if (zone && !(zone->contains(o.row, o.col) && zone->contains(o.row + size - 1, o.col + size - 1))) continue;
      sum += vote.first / vote.second;
      ++count;
    }
    if (count == 0) continue;
    pred.push_back(sum / count);
    truth.push_back(scale_unclamped(s.cf_pA, kCfDim, scale));
  }
  return pred;
}

std::map<TileKey, double> label_index(const std::vector<WeakLabel>& labels) {
  std::map<TileKey, double> out;
  for (const auto& l : labels) out[{l.field, l.timestep, l.origin}] = l.cf_pA;
  return out;
}

std::optional<double> lookup_target(const std::map<TileKey, double>& index, const Tile& t, const ScaleParams& scale) {
  const auto it = index.find({t.field_id, t.timestep_index, t.origin});
  if (it == index.end()) return std::nullopt;
  return std::clamp(scale_unclamped(it->second, kCfDim, scale), 0.0, 1.0);
}

}  // namespace

std::vector<TileSample> labeled_tiles(const std::vector<Tile>& tiles, const std::vector<WeakLabel>& labels,
                                      const ScaleParams& scale) {
  const auto index = label_index(labels);
  std::vector<TileSample> out;
  for (const auto& t : tiles)
    if (const auto y = lookup_target(index, t, scale)) out.push_back({t.ndvi_patch, *y});
  return out;
}

std::vector<SeriesSample> labeled_series(const std::vector<TileSeries>& series, const std::vector<WeakLabel>& labels,
                                         const ScaleParams& scale) {
  const auto index = label_index(labels);
  std::vector<SeriesSample> out;
  for (const auto& s : series) {
    SeriesSample sample;
    sample.targets.resize(static_cast<Eigen::Index>(s.tiles.size()));
    bool complete = true;
    for (std::size_t i = 0; i < s.tiles.size() && complete; ++i) {
      const auto y = lookup_target(index, s.tiles[i], scale);
      complete = y.has_value();
      if (complete) {
        sample.targets(static_cast<Eigen::Index>(i)) = *y;
        sample.patches.push_back(s.tiles[i].ndvi_patch);
      }
    }
    if (complete) out.push_back(std::move(sample));
  }
  return out;
}

EvalTable run_neural_cv(const std::vector<GroundTruthSample>& ground_truth, const CaptureTree& captures,
                        const std::vector<ZoneRect>& zones, const std::vector<LabelBatch>& labels,
                        const NeuralConfig& config, std::uint64_t seed) {
  const auto groups = group_by_field(ground_truth);
  if (groups.size() < 2) throw InvalidInput("cross-validation needs at least two fields");
  if (labels.empty()) throw InvalidInput("no weak labels to train on");

  std::map<Eigen::Index, std::map<std::string, FieldImagery>> imagery;
  const bool want_tiles = std::count(config.networks.begin(), config.networks.end(), "cnn") > 0;
  const bool want_series = std::count(config.networks.begin(), config.networks.end(), "bilstm") > 0;
  for (const auto& batch : labels) {
    if (imagery.contains(batch.size)) continue;
    auto& per_field = imagery[batch.size];
    const TilingConfig tiling{batch.size, config.veg_threshold, config.min_fraction};
    for (const auto& [field, caps] : captures) {
      FieldImagery& im = per_field[field];
      if (want_tiles) {
        for (std::size_t t = 0; t < caps.size(); ++t) {
          auto more = tile_and_filter(compute_ndvi(caps[t]), batch.size, config.veg_threshold, config.min_fraction,
                                      static_cast<int>(t));
          std::move(more.begin(), more.end(), std::back_inserter(im.tiles));
        }
      }
      if (want_series) im.series = build_tile_series(caps, config.length, tiling).series;
    }
  }

  EvalTable table;
  table.kind = "neural";
  for (const auto& batch : labels)
    for (const auto& net : config.networks)
      table.models.push_back(std::string(model_name(batch.labeler)) + "+" + net + "/" + std::to_string(batch.size));

  for (const auto& [test_field, test] : groups) {
    table.folds.push_back(test_field);
    const auto train_gt = without_field(ground_truth, test_field);
    const ScaleParams scale = fit_scale(train_gt);
    for (const auto& batch : labels) {
      const auto& per_field = imagery.at(batch.size);
      for (const auto& net : config.networks) {
        EvalResult r;
        r.model = std::string(model_name(batch.labeler)) + "+" + net + "/" + std::to_string(batch.size);
        r.test_field = test_field;
        const std::uint64_t init_seed = derive_seed(seed, "init/" + r.model + "/" + test_field);
        TrainConfig tc = config.train;
        tc.seed = derive_seed(seed, "train/" + r.model + "/" + test_field);
        TrunkConfig trunk = config.trunk;
        trunk.tile = batch.size;
        r.manifest = {{"kind", "neural"},
                      {"model", r.model},
                      {"labeler", model_name(batch.labeler)},
                      {"network", net},
                      {"size", batch.size},
                      {"test_field", test_field},
                      {"train_fields", fields_of(train_gt)},
                      {"init_seed", init_seed},
                      {"train_seed", tc.seed},
                      {"config", to_json(config)}};
        try {
          TileVotes votes;
          TrainReport report;
          const auto test_it = per_field.find(test_field);
          if (test_it == per_field.end()) throw InvalidInput("no imagery for field " + test_field);
          if (net == "cnn") {
            std::vector<TileSample> data;
            for (const auto& [field, im] : per_field) {
              if (field == test_field) continue;
              auto more = labeled_tiles(im.tiles, batch.labels, scale);
              std::move(more.begin(), more.end(), std::back_inserter(data));
            }
            CnnRegressor model = init_cnn(trunk, init_seed);
            report = train(model, data, tc);
            for (const auto& t : test_it->second.tiles) {
              auto& v = votes[{t.timestep_index, t.origin}];
              v.first += predict(model, t.ndvi_patch);
              v.second += 1;
            }
          } else {
            std::vector<SeriesSample> data;
            for (const auto& [field, im] : per_field) {
              if (field == test_field) continue;
              auto more = labeled_series(im.series, batch.labels, scale);
              std::move(more.begin(), more.end(), std::back_inserter(data));
            }
            BiLstmRegressor model = init_bilstm(trunk, config.hidden, config.length, init_seed);
            report = train(model, data, tc);
            for (const auto& s : test_it->second.series) {
              std::vector<Plane> patches;
              for (const auto& t : s.tiles) patches.push_back(t.ndvi_patch);
              const VectorX y = predict(model, patches);
              for (std::size_t i = 0; i < s.tiles.size(); ++i) {
                auto& v = votes[{s.tiles[i].timestep_index, s.tiles[i].origin}];
                v.first += y(static_cast<Eigen::Index>(i));
                v.second += 1;
              }
            }
          }
          std::vector<double> truth;
          const std::vector<double> pred =
              zone_predictions(test, captures.at(test_field), zones, batch.size, votes, scale, truth);
          if (pred.empty()) throw InvalidInput("no test tiles inside the ground-truth zones");
          r.rmse = rmse(pred, truth);
          r.n_test = pred.size();
          r.manifest["training"] = {{"train_count", report.train_count},
                                    {"holdout_count", report.holdout_count},
                                    {"best_epoch", report.best_epoch},
                                    {"epochs", report.train_loss.size()},
                                    {"initial_loss", report.initial_loss}};
        } catch (const Error& e) {
          r.error = e.what();
        }
        table.cells.push_back(std::move(r));
      }
    }
  }
  return table;
}

std::string fold_table_csv(const std::vector<FoldSpec>& folds) {
  std::string out = "test_field,train_fields,train,test\r\n";
  for (const auto& f : folds) {
    out += f.test_field + "," + join(f.train_fields, ";") + "," + std::to_string(f.train_count) + "," +
           std::to_string(f.test_count) + "\r\n";
  }
  return out;
}

namespace {

std::string markdown_row(const std::vector<std::string>& cells) { return "| " + join(cells, " | ") + " |\n"; }

std::string markdown_rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += "---|";
  return out + "\n";
}

std::string cell_text(const EvalResult& r) { return r.ok() ? fixed(r.rmse, 4) : "failed"; }

struct ModelParts {
  std::string labeler, network, size;
};

ModelParts split_model(const std::string& model) {
  const auto plus = model.find('+');
  const auto slash = model.find('/');
  if (plus == std::string::npos || slash == std::string::npos || slash < plus) return {model, "", ""};
  return {model.substr(0, plus), model.substr(plus + 1, slash - plus - 1), model.substr(slash + 1)};
}

std::string generative_csv(const EvalTable& t) {
  std::string out = "test_field,n_test";
  for (const auto& m : t.models) out += "," + m;
  out += "\r\n";
  std::size_t total = 0;
  for (const auto& f : t.folds) {
    std::size_t n = 0;
    for (const auto& m : t.models) n = std::max(n, t.at(m, f).n_test);
    total += n;
    out += f + "," + std::to_string(n);
    for (const auto& m : t.models) {
      const auto& r = t.at(m, f);
      out += "," + (r.ok() ? fixed(r.rmse) : std::string());
    }
    out += "\r\n";
  }
  out += "mean," + std::to_string(total);
  for (const auto& m : t.models) {
    const double v = t.mean(m);
    out += "," + (std::isfinite(v) ? fixed(v) : std::string());
  }
  return out + "\r\n";
}

std::string neural_csv(const EvalTable& t) {
  std::string out = "labeler,network,size";
  for (const auto& f : t.folds) out += "," + f;
  out += ",mean\r\n";
  for (const auto& m : t.models) {
    const ModelParts p = split_model(m);
    out += p.labeler + "," + p.network + "," + p.size;
    for (const auto& f : t.folds) {
      const auto& r = t.at(m, f);
      out += "," + (r.ok() ? fixed(r.rmse) : std::string());
    }
    const double v = t.mean(m);
    out += "," + (std::isfinite(v) ? fixed(v) : std::string()) + "\r\n";
  }
  return out;
}

std::string selection_csv(const nlohmann::json& selection) {
  std::string out = "components,bic,aic,score\r\n";
  for (const auto& r : selection.at("table")) {
    out += std::to_string(r.at("components").get<int>()) + "," + fixed(r.at("bic").get<double>(), 4) + "," +
           fixed(r.at("aic").get<double>(), 4) + "," + fixed(r.at("score").get<double>(), 4) + "\r\n";
  }
  return out;
}

std::string labels_csv(const std::vector<LabelSummary>& rows) {
  std::string out = "labeler,size,field,labels,skipped,mean_cf01,sd_cf01\r\n";
  for (const auto& r : rows) {
    out += r.labeler + "," + std::to_string(r.size) + "," + r.field + "," + std::to_string(r.labels) + "," +
           std::to_string(r.skipped) + "," + fixed(r.mean_cf01, 4) + "," + fixed(r.sd_cf01, 4) + "\r\n";
  }
  return out;
}

std::string correlation_text(const std::vector<GroundTruthSample>& s, CorrelationMethod method) {
  std::vector<double> ndvi, cf;
  for (const auto& g : s) {
    ndvi.push_back(g.ndvi_mean);
    cf.push_back(g.cf_pA);
  }
  try {
    return fixed(correlation(ndvi, cf, method), 4);
  } catch (const Error&) {
    return "n/a";
  }
}

std::string summary_md(const ReportInputs& in) {
  std::ostringstream md;
  md << "# Chlorolab report\n\n";
  if (!in.ground_truth.empty()) {
    const auto groups = group_by_field(in.ground_truth);
    md << "## Ground truth\n\n";
    md << markdown_row({"field", "samples", "pearson(ndvi, cf)", "spearman(ndvi, cf)"}) << markdown_rule(4);
    for (const auto& [field, s] : groups) {
      md << markdown_row({field, std::to_string(s.size()), correlation_text(s, CorrelationMethod::Pearson),
                          correlation_text(s, CorrelationMethod::Spearman)});
    }
    md << markdown_row({"pooled", std::to_string(in.ground_truth.size()),
                        correlation_text(in.ground_truth, CorrelationMethod::Pearson),
                        correlation_text(in.ground_truth, CorrelationMethod::Spearman)});
    md << "\n";
  }
  if (in.gmm_selection) {
    md << "## GMM component selection\n\n";
    md << "Selected components: " << in.gmm_selection->at("best_components").get<int>() << "\n\n";
  }
  if (in.generative) {
    const EvalTable& t = *in.generative;
    md << "## Generative labelers, RMSE in scaled CF\n\n";
    std::vector<std::string> head{"test field"};
    head.insert(head.end(), t.models.begin(), t.models.end());
    md << markdown_row(head) << markdown_rule(head.size());
    for (const auto& f : t.folds) {
      std::vector<std::string> row{f};
      for (const auto& m : t.models) row.push_back(cell_text(t.at(m, f)));
      md << markdown_row(row);
    }
    std::vector<std::string> mean{"mean"};
    for (const auto& m : t.models) mean.push_back(fixed(t.mean(m), 4));
    md << markdown_row(mean) << "\n";
  }
  if (!in.labels.empty()) {
    md << "## Weak labels\n\n";
    md << markdown_row({"labeler", "size", "field", "labels", "skipped", "mean", "sd"}) << markdown_rule(7);
    for (const auto& r : in.labels) {
      md << markdown_row({r.labeler, std::to_string(r.size), r.field, std::to_string(r.labels),
                          std::to_string(r.skipped), fixed(r.mean_cf01, 4), fixed(r.sd_cf01, 4)});
    }
    md << "\n";
  }
  if (in.neural) {
    const EvalTable& t = *in.neural;
    md << "## Neural regressors, RMSE in scaled CF\n\n";
    std::vector<std::string> head{"labeler", "network", "size"};
    head.insert(head.end(), t.folds.begin(), t.folds.end());
    head.push_back("mean");
    md << markdown_row(head) << markdown_rule(head.size());
    for (const auto& m : t.models) {
      const ModelParts p = split_model(m);
      std::vector<std::string> row{p.labeler, p.network, p.size};
      for (const auto& f : t.folds) row.push_back(cell_text(t.at(m, f)));
      row.push_back(fixed(t.mean(m), 4));
      md << markdown_row(row);
    }
    md << "\n";
  }
  for (const EvalTable* t : {in.generative ? &*in.generative : nullptr, in.neural ? &*in.neural : nullptr}) {
    if (!t) continue;
    for (const auto& c : t->cells)
      if (!c.ok()) md << "- " << c.model << " on " << c.test_field << " failed: " << c.error << "\n";
  }
  return md.str();
}

constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"};

std::string svg_panel(const std::map<std::string, std::vector<std::pair<double, double>>>& lines,
                      const std::string& label, double top, double x_lo, double x_hi, const std::string& x_from,
                      const std::string& x_to) {
  constexpr double left = 70.0, width = 540.0, height = 170.0;
  double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
  for (const auto& [_, pts] : lines)
    for (const auto& p : pts) {
      y_lo = std::min(y_lo, p.second);
      y_hi = std::max(y_hi, p.second);
    }
  if (!(y_hi > y_lo)) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double x_span = x_hi > x_lo ? x_hi - x_lo : 1.0;
  const auto px = [&](double x) { return left + (x - x_lo) / x_span * width; };
  const auto py = [&](double y) { return top + height - (y - y_lo) / (y_hi - y_lo) * height; };
  std::ostringstream s;
  s << "<rect x=\"" << fixed(left, 2) << "\" y=\"" << fixed(top, 2) << "\" width=\"" << fixed(width, 2)
    << "\" height=\"" << fixed(height, 2) << "\" fill=\"none\" stroke=\"#000000\"/>\n";
  s << "<text x=\"10\" y=\"" << fixed(top + height / 2, 2) << "\">" << label << "</text>\n";
  s << "<text x=\"" << fixed(left - 5, 2) << "\" y=\"" << fixed(top + 10, 2) << "\" text-anchor=\"end\">"
    << fixed(y_hi, 3) << "</text>\n";
  s << "<text x=\"" << fixed(left - 5, 2) << "\" y=\"" << fixed(top + height, 2) << "\" text-anchor=\"end\">"
    << fixed(y_lo, 3) << "</text>\n";
  s << "<text x=\"" << fixed(left, 2) << "\" y=\"" << fixed(top + height + 15, 2) << "\">" << x_from << "</text>\n";
  s << "<text x=\"" << fixed(left + width, 2) << "\" y=\"" << fixed(top + height + 15, 2)
    << "\" text-anchor=\"end\">" << x_to << "</text>\n";
  std::size_t color = 0;
  for (const auto& [zone, pts] : lines) {
    s << "<polyline fill=\"none\" stroke=\"" << kPalette[color++ % std::size(kPalette)] << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      s << (i ? " " : "") << fixed(px(pts[i].first), 2) << "," << fixed(py(pts[i].second), 2);
    s << "\"/>\n";
  }
  return s.str();
}

std::string field_svg(const std::string& field, const std::vector<GroundTruthSample>& samples) {
  std::map<std::string, std::vector<std::pair<double, double>>> cf, ndvi;
  Date first = samples.front().date, last = samples.front().date;
  for (const auto& s : samples) {
    first = std::min(first, s.date);
    last = std::max(last, s.date);
  }
  for (const auto& s : samples) {
    const double x = static_cast<double>(s.date.day_number() - first.day_number());
    cf[s.zone_id].emplace_back(x, s.cf_pA);
    ndvi[s.zone_id].emplace_back(x, s.ndvi_mean);
  }
  for (auto* m : {&cf, &ndvi})
    for (auto& [_, pts] : *m) std::sort(pts.begin(), pts.end());
  const double x_hi = static_cast<double>(last.day_number() - first.day_number());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" font-family=\"sans-serif\" "
       "font-size=\"11\">\n";
  s << "<rect width=\"640\" height=\"480\" fill=\"#ffffff\"/>\n";
  s << "<text x=\"320\" y=\"18\" text-anchor=\"middle\">field " << field << ": CF and NDVI per zone</text>\n";
  s << svg_panel(cf, "CF (pA)", 30.0, 0.0, x_hi, first.iso(), last.iso());
  s << svg_panel(ndvi, "NDVI", 250.0, 0.0, x_hi, first.iso(), last.iso());
  std::size_t color = 0;
  double x = 70.0;
  for (const auto& [zone, _] : cf) {
    s << "<text x=\"" << fixed(x, 2) << "\" y=\"470\" fill=\"" << kPalette[color++ % std::size(kPalette)] << "\">"
      << zone << "</text>\n";
    x += 50.0;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::vector<std::string> emit_report(const ReportInputs& in, const std::filesystem::path& out_dir) {
  if (!in.gmm_selection && !in.generative && !in.neural && in.labels.empty()) {
    throw InvalidInput("report has no results");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw Error("cannot create report directory " + out_dir.string());

  std::map<std::string, std::string> files;
  if (in.gmm_selection) files["table_iv.csv"] = selection_csv(*in.gmm_selection);
  if (!in.ground_truth.empty()) {
    std::map<std::string, std::size_t> counts;
    for (const auto& [field, s] : group_by_field(in.ground_truth)) counts[field] = s.size();
    if (counts.size() >= 2) files["table_v.csv"] = fold_table_csv(leave_one_field_out(counts));
    for (const auto& [field, s] : group_by_field(in.ground_truth)) files["fig_cf_ndvi_" + field + ".svg"] = field_svg(field, s);
  }
  if (in.generative) files["table_vi.csv"] = generative_csv(*in.generative);
  if (!in.labels.empty()) files["table_vii.csv"] = labels_csv(in.labels);
  if (in.neural) files["table_viii.csv"] = neural_csv(*in.neural);
  files["summary.md"] = summary_md(in);

  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, text] : files) {
    write_text(out_dir / name, text);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    listing.push_back({{"file", name}, {"fnv1a64", hash}});
  }
  write_text(out_dir / "manifest.json", nlohmann::json{{"inputs", in.manifest}, {"files", listing}}.dump(2) + "\n");

  std::vector<std::string> names;
  for (const auto& [name, _] : files) names.push_back(name);
  names.push_back("manifest.json");
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace chlorolab
