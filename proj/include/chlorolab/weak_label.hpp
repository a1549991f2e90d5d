#ifndef CHLOROLAB_WEAK_LABEL_HPP
#define CHLOROLAB_WEAK_LABEL_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "chlorolab/gmm.hpp"
#include "chlorolab/histogram.hpp"
#include "chlorolab/kde.hpp"
#include "chlorolab/knn.hpp"
#include "chlorolab/raster.hpp"

namespace chlorolab {

enum class ModelTag { Gmm, Knn, Kde };

const char* model_name(ModelTag tag);
ModelTag parse_model(const std::string& name);

using GenerativeModel = std::variant<GmmModel, KnnModel, KdeModel>;

ModelTag tag_of(const GenerativeModel& model);
const ScaleParams& scale_of(const GenerativeModel& model);
const std::vector<std::string>& train_fields_of(const GenerativeModel& model);

/// CF distribution at a scaled (date, ndvi) point. K-NN returns the
/// empirical distribution of its neighbor targets; GMM and KDE evaluate
/// their conditionals on cf_grid.
Histogram1D conditional_histogram(const GenerativeModel& model, double date01, double ndvi01,
                                  const VectorX& cf_grid);

/// Point prediction in scaled units: histogram mean for GMM/KDE, neighbor
/// mean for K-NN.
double point_prediction(const GenerativeModel& model, double date01, double ndvi01,
                        const VectorX& cf_grid);

nlohmann::json to_json(const GenerativeModel& model);
GenerativeModel model_from_json(const nlohmann::json& j);

/// Draws a bin center with probability proportional to its mass, adds
/// N(0, variance) noise and clamps to [0, 1].
double sample_weak_label(const Histogram1D& hist, std::uint64_t seed);

std::uint64_t tile_seed(std::uint64_t base_seed, const std::string& field, int timestep,
                        TileOrigin origin);

struct WeakLabel {
  std::string field;
  int timestep = 0;
  TileOrigin origin;
  Eigen::Index tile_size = 0;
  Date date;
  double ndvi_mean = 0.0;
  double cf01 = 0.0;
  double cf_pA = 0.0;  // cf01 mapped back through the labeling model's scale
  ModelTag model = ModelTag::Kde;
  std::uint64_t seed = 0;
};

struct SkippedTile {
  std::string field;
  int timestep = 0;
  TileOrigin origin;
  std::string reason;
};

struct LabelSet {
  std::vector<WeakLabel> labels;
  std::vector<SkippedTile> skipped;
};

/// Labels every tile. Tiles from fields the model was trained on are
/// rejected; tiles whose conditioning fails are reported as skipped.
LabelSet label_dataset(const GenerativeModel& model, const std::vector<Tile>& tiles,
                       std::uint64_t base_seed, const VectorX& cf_grid = uniform_grid());

void write_labels_jsonl(const std::filesystem::path& path, const std::vector<WeakLabel>& labels);
std::vector<WeakLabel> read_labels_jsonl(const std::filesystem::path& path);
void write_skips_csv(const std::filesystem::path& path, const std::vector<SkippedTile>& skipped);

struct FoldSpec {
  std::vector<std::string> train_fields;
  std::string test_field;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

/// One fold per field, ordered by field id.
std::vector<FoldSpec> leave_one_field_out(const std::map<std::string, std::size_t>& field_counts);

}  // namespace chlorolab

#endif
