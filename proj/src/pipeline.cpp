#include "chlorolab/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace chlorolab {

namespace fs = std::filesystem;

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) throw Error("cannot write " + p.string());
}

// Content hash of a file or of every file under a directory.
std::uint64_t content_hash(const fs::path& p) {
  if (!fs::exists(p)) throw InvalidInput("input not found: " + p.string());
  if (!fs::is_directory(p)) return fnv1a64(read_bytes(p));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("tree");
  for (const auto& f : files) {
    h = fnv1a64(fs::relative(f, p).generic_string(), h);
    h = fnv1a64(read_bytes(f), h);
  }
  return h;
}

nlohmann::json identity(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("out");
  return j;
}

std::vector<std::string> tag_names(const std::vector<ModelTag>& tags) {
  std::vector<std::string> out;
  for (ModelTag t : tags) out.push_back(model_name(t));
  return out;
}

bool external(const RunConfig& c) { return c.ground_truth.has_value(); }

std::string data_key(const RunConfig& c) {
  if (!external(c)) return stage_dir(c, "simulate").filename().string();
  std::string key = "gt:" + hex16(content_hash(*c.ground_truth));
  if (c.captures) key += ",captures:" + hex16(content_hash(*c.captures));
  if (c.zones) key += ",zones:" + hex16(content_hash(*c.zones));
  return key;
}

nlohmann::json stage_key(const RunConfig& c, const std::string& stage) {
  nlohmann::json k = {{"stage", stage}, {"seed", c.seed}};
  if (stage == "simulate") {
    k["synth"] = to_json(c.synth);
    return k;
  }
  k["data"] = data_key(c);
  const nlohmann::json tiling = {
      {"sizes", c.neural.sizes}, {"veg_threshold", c.neural.veg_threshold}, {"min_fraction", c.neural.min_fraction}};
  if (stage.rfind("fit-", 0) == 0) {
    k["generative"] = to_json(c.generative);
    k["fields"] = c.fit_fields;
  } else if (stage == "label") {
    k["generative"] = to_json(c.generative);
    k["labelers"] = tag_names(c.labelers);
    k["tiling"] = tiling;
  } else if (stage.rfind("train-", 0) == 0) {
    k["labels"] = stage_dir(c, "label").filename().string();
    k["neural"] = to_json(c.neural);
    k["labeler"] = model_name(c.train_labeler);
    k["size"] = c.train_size;
  } else if (stage == "eval-generative") {
    k["generative"] = to_json(c.generative);
    k["labelers"] = tag_names(c.labelers);
  } else if (stage == "eval-neural") {
    k["labels"] = stage_dir(c, "label").filename().string();
    k["neural"] = to_json(c.neural);
    k["labelers"] = tag_names(c.labelers);
  } else if (stage == "report") {
    k["config"] = identity(c);
  } else {
    throw InvalidInput("unknown stage '" + stage + "'");
  }
  return k;
}

// Builds a stage in <dir>.partial and moves it into place on commit.
class StageWriter {
 public:
  StageWriter(fs::path final_dir, const nlohmann::json& key)
      : final_(std::move(final_dir)), tmp_(final_.string() + ".partial") {
    std::error_code ec;
    fs::remove_all(tmp_, ec);
    fs::create_directories(tmp_, ec);
    if (ec) throw Error("cannot create " + tmp_.string() + ": " + ec.message());
    write_text(tmp_ / "stage.json", key.dump(2) + "\n");
  }
  ~StageWriter() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  StageWriter(const StageWriter&) = delete;
  StageWriter& operator=(const StageWriter&) = delete;

  const fs::path& dir() const { return tmp_; }

  void commit() {
    std::error_code ec;
    fs::remove_all(final_, ec);
    fs::rename(tmp_, final_, ec);
    if (ec) throw Error("cannot move " + tmp_.string() + " into place: " + ec.message());
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

template <typename F>
nlohmann::json guarded(int code, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(code, e.what());
  }
}

fs::path ground_truth_path(const RunConfig& c) {
  return external(c) ? *c.ground_truth : stage_dir(c, "simulate") / "ground_truth.csv";
}

std::vector<GroundTruthSample> load_ground_truth(const RunConfig& c) {
  const fs::path p = ground_truth_path(c);
  if (!fs::exists(p)) {
    throw InvalidInput("ground truth not found: " + p.string() + (external(c) ? "" : " (run simulate first)"));
  }
  return read_ground_truth_csv(p);
}

CaptureTree load_captures(const RunConfig& c) {
  if (external(c) && !c.captures) throw InvalidInput("config gives ground truth but no captures directory");
  return load_capture_tree(external(c) ? *c.captures : stage_dir(c, "simulate") / "captures");
}

std::vector<ZoneRect> load_zones(const RunConfig& c) {
  if (external(c)) return c.zones ? read_zones_json(*c.zones) : std::vector<ZoneRect>{};
  const fs::path p = stage_dir(c, "simulate") / "zones.json";
  return fs::exists(p) ? read_zones_json(p) : std::vector<ZoneRect>{};
}

std::string label_file(ModelTag tag, Eigen::Index size) {
  return std::string("labels_") + model_name(tag) + "_" + std::to_string(size) + ".jsonl";
}

std::vector<WeakLabel> load_labels(const RunConfig& c, ModelTag tag, Eigen::Index size) {
  const fs::path p = stage_dir(c, "label") / label_file(tag, size);
  if (!fs::exists(p)) throw InvalidInput("weak labels not found: " + p.string() + " (run label first)");
  return read_labels_jsonl(p);
}

nlohmann::json means_of(const EvalTable& t) {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& model : t.models) {
    const double v = t.mean(model);
    m[model] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }
  return m;
}

std::size_t failed_cells(const EvalTable& t) {
  return static_cast<std::size_t>(std::count_if(t.cells.begin(), t.cells.end(), [](const auto& r) { return !r.ok(); }));
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data = nlohmann::json::object();
  if (c.captures) data["captures"] = c.captures->generic_string();
  if (c.ground_truth) data["ground_truth"] = c.ground_truth->generic_string();
  if (c.zones) data["zones"] = c.zones->generic_string();
  return {{"seed", c.seed},
          {"out", c.out.generic_string()},
          {"synth", to_json(c.synth)},
          {"data", data},
          {"generative", to_json(c.generative)},
          {"labelers", tag_names(c.labelers)},
          {"neural", to_json(c.neural)},
          {"fit", {{"fields", c.fit_fields}}},
          {"train", {{"labeler", model_name(c.train_labeler)}, {"size", c.train_size}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInput("config must be a JSON object");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("captures")) c.captures = d.at("captures").get<std::string>();
      if (d.contains("ground_truth")) c.ground_truth = d.at("ground_truth").get<std::string>();
      if (d.contains("zones")) c.zones = d.at("zones").get<std::string>();
    }
    if (j.contains("generative")) c.generative = generative_config_from_json(j.at("generative"));
    if (j.contains("labelers")) {
      c.labelers.clear();
      for (const auto& name : j.at("labelers")) c.labelers.push_back(parse_model(name.get<std::string>()));
    }
    if (j.contains("neural")) c.neural = neural_config_from_json(j.at("neural"));
    if (j.contains("fit")) c.fit_fields = j.at("fit").value("fields", c.fit_fields);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("labeler")) c.train_labeler = parse_model(t.at("labeler").get<std::string>());
      c.train_size = t.value("size", c.train_size);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("config: " + std::string(e.what()));
  }
  if (c.labelers.empty()) throw InvalidInput("config: labelers must not be empty");
  validate(c.synth);
  return c;
}

fs::path stage_dir(const RunConfig& c, const std::string& stage) {
  return c.out / (stage + "-" + hex16(fnv1a64(stage_key(c, stage).dump())));
}

std::vector<LabelSummary> summarize_labels(ModelTag labeler, Eigen::Index size, const LabelSet& set) {
  std::map<std::string, LabelSummary> rows;
  std::map<std::string, std::vector<double>> values;
  for (const auto& l : set.labels) values[l.field].push_back(l.cf01);
  for (const auto& s : set.skipped) rows[s.field].skipped += 1;
  for (const auto& [field, v] : values) {
    auto& r = rows[field];
    r.labels = v.size();
    const Eigen::Map<const VectorX> x(v.data(), static_cast<Eigen::Index>(v.size()));
    r.mean_cf01 = x.mean();
    r.sd_cf01 = std::sqrt((x.array() - r.mean_cf01).square().mean());
  }
  std::vector<LabelSummary> out;
  for (auto& [field, r] : rows) {
    r.labeler = model_name(labeler);
    r.size = size;
    r.field = field;
    out.push_back(r);
  }
  return out;
}

nlohmann::json cmd_simulate(const RunConfig& c) {
  return guarded(kExitInfeasible, [&] {
    SynthSpec spec = c.synth;
    spec.seed = c.seed;
    const SynthBundle bundle = generate(spec);
    const fs::path dir = stage_dir(c, "simulate");
    StageWriter w(dir, stage_key(c, "simulate"));
    write_bundle(bundle, w.dir());
    w.commit();
    return nlohmann::json{{"command", "simulate"},
                          {"status", "ok"},
                          {"dir", dir.generic_string()},
                          {"fields", bundle.fields.size()},
                          {"samples", bundle.ground_truth.size()}};
  });
}

nlohmann::json cmd_fit(const RunConfig& c, ModelTag tag) {
  return guarded(kExitFit, [&] {
    auto samples = load_ground_truth(c);
    if (!c.fit_fields.empty()) {
      std::vector<GroundTruthSample> kept;
      for (const auto& s : samples)
        if (std::find(c.fit_fields.begin(), c.fit_fields.end(), s.field_id) != c.fit_fields.end()) kept.push_back(s);
      samples = std::move(kept);
    }
    const std::string stage = std::string("fit-") + model_name(tag);
    const GenerativeFit fit = fit_generative(tag, samples, c.generative, derive_seed(c.seed, stage));
    const fs::path dir = stage_dir(c, stage);
    StageWriter w(dir, stage_key(c, stage));
    write_text(w.dir() / "model.json", to_json(fit.model).dump() + "\n");
    write_text(w.dir() / "selection.json", fit.selection.dump(2) + "\n");
    w.commit();
    nlohmann::json selected = fit.selection;
    selected.erase("table");
    return nlohmann::json{{"command", "fit"},
                          {"model", model_name(tag)},
                          {"status", "ok"},
                          {"dir", dir.generic_string()},
                          {"train_fields", train_fields_of(fit.model)},
                          {"selected", selected}};
  });
}

nlohmann::json cmd_label(const RunConfig& c) {
  return guarded(kExitLabel, [&] {
    const auto gt = load_ground_truth(c);
    const CaptureTree captures = load_captures(c);
    const fs::path dir = stage_dir(c, "label");
    StageWriter w(dir, stage_key(c, "label"));
    nlohmann::json selection = nlohmann::json::object(), summary = nlohmann::json::array(), counts = nlohmann::json::object();
    for (ModelTag tag : c.labelers) {
      for (Eigen::Index size : c.neural.sizes) {
        const TilingConfig tiling{size, c.neural.veg_threshold, c.neural.min_fraction};
        const FieldLabels fl = label_fields(tag, gt, captures, tiling, c.generative, c.seed);
        write_labels_jsonl(w.dir() / label_file(tag, size), fl.set.labels);
        write_skips_csv(w.dir() / ("skips_" + std::string(model_name(tag)) + "_" + std::to_string(size) + ".csv"),
                        fl.set.skipped);
        if (!selection.contains(model_name(tag))) selection[model_name(tag)] = fl.selection;
        for (const auto& r : summarize_labels(tag, size, fl.set)) {
          summary.push_back({{"labeler", r.labeler},
                             {"size", r.size},
                             {"field", r.field},
                             {"labels", r.labels},
                             {"skipped", r.skipped},
                             {"mean_cf01", r.mean_cf01},
                             {"sd_cf01", r.sd_cf01}});
        }
        counts[label_file(tag, size)] = fl.set.labels.size();
      }
    }
    write_text(w.dir() / "selection.json", selection.dump(2) + "\n");
    write_text(w.dir() / "labels_summary.json", summary.dump(2) + "\n");
    w.commit();
    return nlohmann::json{{"command", "label"}, {"status", "ok"}, {"dir", dir.generic_string()}, {"labels", counts}};
  });
}

nlohmann::json cmd_train(const RunConfig& c, const std::string& network) {
  if (network != "cnn" && network != "bilstm") throw StageError(kExitUsage, "unknown network '" + network + "'");
  return guarded(kExitTrain, [&] {
    const auto gt = load_ground_truth(c);
    const auto labels = load_labels(c, c.train_labeler, c.train_size);
    const CaptureTree captures = load_captures(c);
    const ScaleParams scale = fit_scale(gt);
    const std::string stage = "train-" + network;
    const std::uint64_t init_seed = derive_seed(c.seed, "init/" + stage);
    TrainConfig tc = c.neural.train;
    tc.seed = derive_seed(c.seed, stage);
    TrunkConfig trunk = c.neural.trunk;
    trunk.tile = c.train_size;
    const TilingConfig tiling{c.train_size, c.neural.veg_threshold, c.neural.min_fraction};

    NeuralModel model = CnnRegressor{};
    TrainReport report;
    if (network == "cnn") {
      std::vector<TileSample> data;
      for (const auto& [field, caps] : captures) {
        std::vector<Tile> tiles;
        for (std::size_t t = 0; t < caps.size(); ++t) {
          auto more = tile_and_filter(compute_ndvi(caps[t]), tiling.size, tiling.veg_threshold, tiling.min_fraction,
                                      static_cast<int>(t));
          std::move(more.begin(), more.end(), std::back_inserter(tiles));
        }
        auto samples = labeled_tiles(tiles, labels, scale);
        std::move(samples.begin(), samples.end(), std::back_inserter(data));
      }
      CnnRegressor m = init_cnn(trunk, init_seed);
      report = train(m, data, tc);
      model = std::move(m);
    } else {
      std::vector<SeriesSample> data;
      for (const auto& [field, caps] : captures) {
        auto samples = labeled_series(build_tile_series(caps, c.neural.length, tiling).series, labels, scale);
        std::move(samples.begin(), samples.end(), std::back_inserter(data));
      }
      BiLstmRegressor m = init_bilstm(trunk, c.neural.hidden, c.neural.length, init_seed);
      report = train(m, data, tc);
      model = std::move(m);
    }
    const nlohmann::json training = {{"initial_loss", report.initial_loss},
                                     {"train_loss", report.train_loss},
                                     {"holdout_loss", report.holdout_loss},
                                     {"best_epoch", report.best_epoch},
                                     {"stopped_early", report.stopped_early},
                                     {"train_count", report.train_count},
                                     {"holdout_count", report.holdout_count}};
    const fs::path dir = stage_dir(c, stage);
    StageWriter w(dir, stage_key(c, stage));
    save_weights(w.dir() / "model.weights", model, init_seed, report.best_epoch,
                 {{"labeler", model_name(c.train_labeler)},
                  {"size", c.train_size},
                  {"scale", to_json(scale)},
                  {"train_seed", tc.seed},
                  {"neural", to_json(c.neural)}});
    write_text(w.dir() / "train.json", training.dump(2) + "\n");
    w.commit();
    return nlohmann::json{{"command", "train"},
                          {"network", network},
                          {"status", "ok"},
                          {"dir", dir.generic_string()},
                          {"samples", report.train_count + report.holdout_count},
                          {"best_epoch", report.best_epoch},
                          {"initial_loss", report.initial_loss},
                          {"final_loss", report.train_loss.empty() ? report.initial_loss : report.train_loss.back()}};
  });
}

nlohmann::json cmd_eval(const RunConfig& c, const std::string& kind) {
  if (kind != "generative" && kind != "neural") throw StageError(kExitUsage, "unknown evaluation '" + kind + "'");
  return guarded(kExitEval, [&] {
    const auto gt = load_ground_truth(c);
    EvalTable table;
    if (kind == "generative") {
      table = run_generative_cv(gt, c.labelers, c.generative, c.seed);
    } else {
      std::vector<LabelBatch> batches;
      for (ModelTag tag : c.labelers)
        for (Eigen::Index size : c.neural.sizes) batches.push_back({tag, size, load_labels(c, tag, size)});
      table = run_neural_cv(gt, load_captures(c), load_zones(c), batches, c.neural, c.seed);
    }
    const std::string stage = "eval-" + kind;
    const fs::path dir = stage_dir(c, stage);
    StageWriter w(dir, stage_key(c, stage));
    write_text(w.dir() / "results.json", to_json(table).dump(2) + "\n");
    w.commit();
    return nlohmann::json{{"command", "eval"},
                          {"kind", kind},
                          {"status", "ok"},
                          {"dir", dir.generic_string()},
                          {"mean_rmse", means_of(table)},
                          {"failed_cells", failed_cells(table)}};
  });
}

nlohmann::json cmd_report(const RunConfig& c) {
  return guarded(kExitEval, [&] {
    ReportInputs in;
    nlohmann::json used = nlohmann::json::array();
    const fs::path gt_path = ground_truth_path(c);
    if (fs::exists(gt_path)) in.ground_truth = read_ground_truth_csv(gt_path);
    const auto read_json = [](const fs::path& p) { return nlohmann::json::parse(read_bytes(p)); };
    if (const fs::path d = stage_dir(c, "fit-gmm"); fs::exists(d / "selection.json")) {
      in.gmm_selection = read_json(d / "selection.json");
      used.push_back(d.filename().string());
    }
    if (const fs::path d = stage_dir(c, "label"); fs::exists(d / "labels_summary.json")) {
      for (const auto& r : read_json(d / "labels_summary.json")) {
        in.labels.push_back({r.at("labeler").get<std::string>(), r.at("size").get<Eigen::Index>(),
                             r.at("field").get<std::string>(), r.at("labels").get<std::size_t>(),
                             r.at("skipped").get<std::size_t>(), r.at("mean_cf01").get<double>(),
                             r.at("sd_cf01").get<double>()});
      }
      used.push_back(d.filename().string());
    }
    if (const fs::path d = stage_dir(c, "eval-generative"); fs::exists(d / "results.json")) {
      in.generative = eval_table_from_json(read_json(d / "results.json"));
      used.push_back(d.filename().string());
    }
    if (const fs::path d = stage_dir(c, "eval-neural"); fs::exists(d / "results.json")) {
      in.neural = eval_table_from_json(read_json(d / "results.json"));
      used.push_back(d.filename().string());
    }
    if (used.empty()) throw InvalidInput("nothing to report: run fit gmm, label or eval first");
    in.manifest = {{"config", identity(c)}, {"stages", used}};
    nlohmann::json key = stage_key(c, "report");
    key["inputs"] = used;
    const fs::path dir = c.out / ("report-" + hex16(fnv1a64(key.dump())));
    StageWriter w(dir, key);
    const auto files = emit_report(in, w.dir());
    w.commit();
    return nlohmann::json{
        {"command", "report"}, {"status", "ok"}, {"dir", dir.generic_string()}, {"files", files}, {"stages", used}};
  });
}

}  // namespace chlorolab
