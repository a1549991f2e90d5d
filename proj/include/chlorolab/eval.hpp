#ifndef CHLOROLAB_EVAL_HPP
#define CHLOROLAB_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chlorolab/regressor.hpp"
#include "chlorolab/synth.hpp"
#include "chlorolab/weak_label.hpp"
#include "json.hpp"

namespace chlorolab {

/// sqrt(mean((pred - truth)^2)); throws on empty or mismatched input.
double rmse(std::span<const double> pred, std::span<const double> truth);

/// Independent stream for a named purpose: mix64(base ^ fnv1a64(label)).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

/// Hyperparameter procedures for the three generative labelers.
struct GenerativeConfig {
  std::vector<int> gmm_components{1, 2, 3, 4, 5};
  GmmConfig gmm;
  int knn_k_max = 15;
  int knn_folds = 5;
  BandwidthGrid kde_grid;
  int kde_folds = 5;
  KernelKind kde_kernel = KernelKind::Gaussian;
  Eigen::Index cf_bins = 256;
};

nlohmann::json to_json(const GenerativeConfig& c);
/// Missing keys keep their defaults.
GenerativeConfig generative_config_from_json(const nlohmann::json& j);

struct GenerativeFit {
  GenerativeModel model;
  nlohmann::json selection;  // the selection table and the chosen value
};

/// Fits one labeler on the given samples with its selection procedure.
/// The scale is fitted on these samples; train_fields lists their fields.
GenerativeFit fit_generative(ModelTag tag, const std::vector<GroundTruthSample>& train,
                             const GenerativeConfig& config, std::uint64_t seed);

/// Samples of every field except `excluded`.
std::vector<GroundTruthSample> without_field(const std::vector<GroundTruthSample>& samples,
                                             const std::string& excluded);

struct EvalResult {
  std::string model;       // "kde" or "kde+bilstm/32"
  std::string test_field;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_test = 0;
  std::string error;       // set when the cell failed; rmse is then NaN
  nlohmann::json manifest;

  bool ok() const { return error.empty(); }
};

struct EvalTable {
  std::string kind;                 // "generative" or "neural"
  std::vector<std::string> models;  // column order
  std::vector<std::string> folds;   // test fields
  std::vector<EvalResult> cells;    // fold-major

  const EvalResult& at(const std::string& model, const std::string& fold) const;
  /// Mean over folds; NaN when any fold of the model failed.
  double mean(const std::string& model) const;
};

nlohmann::json to_json(const EvalTable& table);
EvalTable eval_table_from_json(const nlohmann::json& j);

/// Leave-one-field-out CV of the generative labelers. Predictions are the
/// models' point estimates, errors are in the fold's scaled CF units.
EvalTable run_generative_cv(const std::vector<GroundTruthSample>& ground_truth,
                            const std::vector<ModelTag>& tags, const GenerativeConfig& config,
                            std::uint64_t seed);

using CaptureTree = std::map<std::string, std::vector<MultispectralCapture>>;

/// Labels every field's tiles with a model fitted on the other fields only.
struct FieldLabels {
  LabelSet set;
  std::map<std::string, nlohmann::json> selection;  // per labeled field
};

FieldLabels label_fields(ModelTag tag, const std::vector<GroundTruthSample>& ground_truth,
                         const CaptureTree& captures, const TilingConfig& tiling,
                         const GenerativeConfig& config, std::uint64_t seed);

struct NeuralConfig {
  std::vector<std::string> networks{"cnn", "bilstm"};
  std::vector<Eigen::Index> sizes{32, 128};
  double veg_threshold = 0.3;
  double min_fraction = 0.85;
  int length = 4;
  TrunkConfig trunk;  // tile is replaced by each size
  int hidden = 8;
  TrainConfig train;
};

nlohmann::json to_json(const NeuralConfig& c);
NeuralConfig neural_config_from_json(const nlohmann::json& j);

struct LabelBatch {
  ModelTag labeler = ModelTag::Kde;
  Eigen::Index size = 0;
  std::vector<WeakLabel> labels;
};

/// Regression samples for the labeled tiles; targets are the label CF
/// rescaled by `scale` and clamped to [0, 1]. Unlabeled tiles are dropped.
std::vector<TileSample> labeled_tiles(const std::vector<Tile>& tiles, const std::vector<WeakLabel>& labels,
                                      const ScaleParams& scale);
/// As labeled_tiles; a series is kept only when every step is labeled.
std::vector<SeriesSample> labeled_series(const std::vector<TileSeries>& series, const std::vector<WeakLabel>& labels,
                                         const ScaleParams& scale);

/// Leave-one-field-out CV of the regressors. For each test field, networks
/// train on the weak labels of the other fields; a ground-truth sample is
/// predicted by the mean output over tiles lying inside its zone at its date.
EvalTable run_neural_cv(const std::vector<GroundTruthSample>& ground_truth, const CaptureTree& captures,
                        const std::vector<ZoneRect>& zones, const std::vector<LabelBatch>& labels,
                        const NeuralConfig& config, std::uint64_t seed);

struct LabelSummary {
  std::string labeler;
  Eigen::Index size = 0;
  std::string field;
  std::size_t labels = 0;
  std::size_t skipped = 0;
  double mean_cf01 = 0.0;
  double sd_cf01 = 0.0;
};

struct ReportInputs {
  std::vector<GroundTruthSample> ground_truth;
  std::optional<nlohmann::json> gmm_selection;  // selection of a GMM fit
  std::optional<EvalTable> generative;
  std::optional<EvalTable> neural;
  std::vector<LabelSummary> labels;
  nlohmann::json manifest = nlohmann::json::object();
};

/// Writes table_iv.csv .. table_viii.csv (those with inputs), summary.md,
/// fig_cf_ndvi_<field>.svg and manifest.json. Returns the written file names.
std::vector<std::string> emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

/// CSV with columns test_field,train_fields,train,test; one row per fold.
std::string fold_table_csv(const std::vector<FoldSpec>& folds);

}  // namespace chlorolab

#endif
