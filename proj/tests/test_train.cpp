#include <gtest/gtest.h>

#include <random>

#include "chlorolab/regressor.hpp"

using namespace chlorolab;

namespace {

// Tiles whose mean NDVI determines the target linearly, plus pixel noise.
std::vector<TileSample> linear_task(int n, double label_noise, std::uint64_t seed, Eigen::Index size = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> level(0.2, 0.8);
  std::normal_distribution<double> pixel(0.0, 0.02), noise(0.0, label_noise);
  std::vector<TileSample> out;
  for (int i = 0; i < n; ++i) {
    const double v = level(rng);
    TileSample s;
    s.patch = Plane::NullaryExpr(size, size, [&] { return v + pixel(rng); });
    s.target = (v - 0.2) / 0.6 * 0.8 + 0.1 + (label_noise > 0 ? noise(rng) : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SeriesSample> series_task(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> level(0.2, 0.8);
  std::vector<SeriesSample> out;
  for (int i = 0; i < n; ++i) {
    SeriesSample s;
    s.targets.resize(4);
    for (int t = 0; t < 4; ++t) {
      const double v = level(rng);
      s.patches.push_back(Plane::Constant(8, 8, v));
      s.targets(t) = (v - 0.2) / 0.6 * 0.8 + 0.1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Train, LinearTaskReducesLossTenfold) {
  const auto data = linear_task(200, 0.01, 1);
  CnnRegressor m = init_cnn(TrunkConfig{}, 1);
  TrainConfig cfg;
  cfg.seed = 1;
  const TrainReport r = train(m, data, cfg);
  ASSERT_FALSE(r.train_loss.empty());
  EXPECT_LT(r.train_loss.back() * 10.0, r.initial_loss)
      << "initial " << r.initial_loss << " final " << r.train_loss.back();
  EXPECT_EQ(r.train_count + r.holdout_count, 200u);
  EXPECT_EQ(r.holdout_count, 20u);
}

TEST(Train, ConvergedModelFitsTrainingSamples) {
  const auto data = linear_task(200, 0.0, 2);
  CnnRegressor m = init_cnn(TrunkConfig{}, 2);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.patience = cfg.max_epochs;  // run all epochs
  train(m, data, cfg);
  double worst = 0.0;
  for (const auto& s : data) worst = std::max(worst, std::abs(predict(m, s.patch) - s.target));
  EXPECT_LT(worst, 0.05);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = linear_task(40, 0.01, 3, 8);
  CnnRegressor m = init_cnn({8, 4, 4, 2}, 3);
  const VectorX before = flatten(m);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 4;
  train(m, data, cfg);
  EXPECT_EQ(flatten(m), before);
}

TEST(Train, SameSeedSameCurves) {
  const auto data = linear_task(60, 0.01, 4, 8);
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.max_epochs = 6;
  CnnRegressor a = init_cnn({8, 4, 4, 2}, 5), b = init_cnn({8, 4, 4, 2}, 5);
  const TrainReport ra = train(a, data, cfg), rb = train(b, data, cfg);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(ra.holdout_loss, rb.holdout_loss);
  EXPECT_EQ(flatten(a), flatten(b));
  cfg.seed = 12;
  CnnRegressor c = init_cnn({8, 4, 4, 2}, 5);
  EXPECT_NE(train(c, data, cfg).train_loss, ra.train_loss);
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  const auto data = linear_task(50, 0.2, 6, 8);  // mostly noise: held-out loss stalls
  CnnRegressor m = init_cnn({8, 4, 4, 1}, 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 50;
  cfg.patience = 3;
  const TrainReport r = train(m, data, cfg);
  ASSERT_EQ(r.holdout_loss.size(), r.train_loss.size());
  const auto best = std::min_element(r.holdout_loss.begin(), r.holdout_loss.end());
  EXPECT_EQ(r.best_epoch, int(best - r.holdout_loss.begin()) + 1);
  if (r.stopped_early) {
    EXPECT_EQ(int(r.holdout_loss.size()), r.best_epoch + cfg.patience);
  }
}

TEST(Train, RejectsEmptyAndNonFinite) {
  CnnRegressor m = init_cnn({8, 4, 4, 1}, 7);
  EXPECT_THROW(train(m, std::vector<TileSample>{}, TrainConfig{}), InvalidInput);
  auto data = linear_task(20, 0.0, 7, 8);
  data[3].target = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(m, data, TrainConfig{}), TrainingError);
  BiLstmRegressor s = init_bilstm({8, 4, 4, 1}, 4, 4, 7);
  EXPECT_THROW(train(s, std::vector<SeriesSample>{}, TrainConfig{}), InvalidInput);
}

TEST(Train, BiLstmLearnsPerStepTargets) {
  const auto data = series_task(120, 8);
  BiLstmRegressor m = init_bilstm({8, 4, 4, 1}, 6, 4, 8);
  TrainConfig cfg;
  cfg.seed = 8;
  const TrainReport r = train(m, data, cfg);
  EXPECT_LT(r.train_loss.back() * 5.0, r.initial_loss)
      << "initial " << r.initial_loss << " final " << r.train_loss.back();
}
