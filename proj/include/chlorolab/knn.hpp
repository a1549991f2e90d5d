#ifndef CHLOROLAB_KNN_HPP
#define CHLOROLAB_KNN_HPP

#include <string>
#include <vector>

#include "chlorolab/core.hpp"
#include "chlorolab/histogram.hpp"
#include "chlorolab/stats.hpp"
#include "json.hpp"

namespace chlorolab {

/// K-nearest-neighbor regressor of cf01 over scaled (date01, ndvi01).
struct KnnModel {
  PointMatrix points;
  VectorX targets;
  int k = 1;
  ScaleParams scale;
  std::vector<std::string> train_fields;
};

/// Builds a model from scaled (date, ndvi, cf) rows.
KnnModel make_knn(const SampleMatrix& scaled, int k);
void validate(const KnnModel& model);

/// Indices of the k nearest stored points by Euclidean distance; equal
/// distances are ordered by ascending insertion index.
std::vector<Eigen::Index> knn_neighbors(const KnnModel& model, double date01, double ndvi01);

/// Mean target of the k nearest points.
double knn_predict(const KnnModel& model, double date01, double ndvi01);

/// Empirical distribution of the k neighbor targets (distinct values as bins).
Histogram1D knn_histogram(const KnnModel& model, double date01, double ndvi01);

struct KSearchRow {
  int k = 0;
  double rmse = 0.0;
};

struct KSearchResult {
  int best_k = 0;
  std::vector<KSearchRow> table;
};

/// F-fold cross-validated RMSE (pooled over all held-out rows) for every k in
/// [1, k_max]; best is the smallest k attaining the minimum.
KSearchResult grid_search_k(const SampleMatrix& scaled, int k_max, int folds, std::uint64_t seed);
KSearchResult grid_search_k(const SampleMatrix& scaled, const std::vector<int>& candidates,
                            int folds, std::uint64_t seed);

nlohmann::json to_json(const KnnModel& model);
KnnModel knn_from_json(const nlohmann::json& j);

}  // namespace chlorolab

#endif
