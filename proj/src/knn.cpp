#include "chlorolab/knn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace chlorolab {

KnnModel make_knn(const SampleMatrix& scaled, int k) {
  KnnModel m;
  m.points = scaled.leftCols<2>();
  m.targets = scaled.col(2);
  m.k = k;
  validate(m);
  return m;
}

void validate(const KnnModel& model) {
  const auto n = model.points.rows();
  if (n < 1) throw InvalidInput("knn: no training points");
  if (model.targets.size() != n) throw InvalidInput("knn: points and targets differ in length");
  if (model.k < 1 || model.k > n) throw InvalidInput("knn: k must lie in [1, N]");
}

std::vector<Eigen::Index> knn_neighbors(const KnnModel& model, double date01, double ndvi01) {
  const Vector2 q(date01, ndvi01);
  const VectorX d2 = (model.points.rowwise() - q.transpose()).rowwise().squaredNorm();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d2.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const auto k = static_cast<std::ptrdiff_t>(model.k);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return d2(a) < d2(b) || (d2(a) == d2(b) && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

double knn_predict(const KnnModel& model, double date01, double ndvi01) {
  double sum = 0.0;
  for (Eigen::Index i : knn_neighbors(model, date01, ndvi01)) sum += model.targets(i);
  return sum / model.k;
}

Histogram1D knn_histogram(const KnnModel& model, double date01, double ndvi01) {
  std::map<double, double> counts;
  for (Eigen::Index i : knn_neighbors(model, date01, ndvi01)) {
    counts[std::clamp(model.targets(i), 0.0, 1.0)] += 1.0;
  }
  VectorX centers(static_cast<Eigen::Index>(counts.size()));
  VectorX weights(centers.size());
  Eigen::Index j = 0;
  for (const auto& [value, count] : counts) {
    centers(j) = value;
    weights(j++) = count;
  }
  return Histogram1D::from_weights(std::move(centers), weights);
}

KSearchResult grid_search_k(const SampleMatrix& scaled, int k_max, int folds, std::uint64_t seed) {
  if (k_max < 1) throw InvalidInput("grid_search_k: k_max must be positive");
  std::vector<int> ks(static_cast<std::size_t>(k_max));
  std::iota(ks.begin(), ks.end(), 1);
  return grid_search_k(scaled, ks, folds, seed);
}

KSearchResult grid_search_k(const SampleMatrix& scaled, const std::vector<int>& candidates,
                            int folds, std::uint64_t seed) {
  const auto n = scaled.rows();
  if (candidates.empty()) throw InvalidInput("grid_search_k: no candidates");
  if (folds < 2 || n < folds) throw InvalidInput("grid_search_k: need N >= folds >= 2");
  const auto fold = assign_folds(n, folds, seed);

  std::vector<SampleMatrix> train(static_cast<std::size_t>(folds));
  std::vector<std::vector<Eigen::Index>> test(static_cast<std::size_t>(folds));
  Eigen::Index smallest_train = n;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      (fold[static_cast<std::size_t>(i)] == f ? test[static_cast<std::size_t>(f)] : rows).push_back(i);
    }
    train[static_cast<std::size_t>(f)] = scaled(rows, Eigen::all);
    smallest_train = std::min<Eigen::Index>(smallest_train, static_cast<Eigen::Index>(rows.size()));
  }
  for (int k : candidates) {
    if (k < 1 || k > smallest_train) {
      throw InvalidInput("grid_search_k: k=" + std::to_string(k) +
                         " too large for the smallest training fold (" +
                         std::to_string(smallest_train) + ")");
    }
  }

  KSearchResult result;
  result.table.resize(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    double sse = 0.0;
    for (int f = 0; f < folds; ++f) {
      const KnnModel model = make_knn(train[static_cast<std::size_t>(f)], candidates[c]);
      for (Eigen::Index i : test[static_cast<std::size_t>(f)]) {
        const double e = knn_predict(model, scaled(i, 0), scaled(i, 1)) - scaled(i, 2);
        sse += e * e;
      }
    }
    result.table[c] = {candidates[c], std::sqrt(sse / double(n))};
  });
  const KSearchRow* best = &result.table.front();
  for (const auto& row : result.table) {
    if (row.rmse < best->rmse || (row.rmse == best->rmse && row.k < best->k)) best = &row;
  }
  result.best_k = best->k;
  return result;
}

nlohmann::json to_json(const KnnModel& model) {
  nlohmann::ordered_json j;
  j["scale"] = to_json(model.scale);
  j["train_fields"] = model.train_fields;
  j["k"] = model.k;
  auto pts = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < model.points.rows(); ++i) {
    pts.push_back({model.points(i, 0), model.points(i, 1)});
  }
  j["points"] = pts;
  j["targets"] = std::vector<double>(model.targets.data(), model.targets.data() + model.targets.size());
  return j;
}

KnnModel knn_from_json(const nlohmann::json& j) {
  KnnModel m;
  m.scale = scale_from_json(j.at("scale"));
  if (j.contains("train_fields")) m.train_fields = j.at("train_fields").get<std::vector<std::string>>();
  m.k = j.at("k").get<int>();
  const auto& pts = j.at("points");
  m.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m.points(static_cast<Eigen::Index>(i), 0) = pts[i].at(0).get<double>();
    m.points(static_cast<Eigen::Index>(i), 1) = pts[i].at(1).get<double>();
  }
  const auto t = j.at("targets").get<std::vector<double>>();
  m.targets = Eigen::Map<const VectorX>(t.data(), static_cast<Eigen::Index>(t.size()));
  validate(m);
  return m;
}

}  // namespace chlorolab
