#ifndef CHLOROLAB_REGRESSOR_HPP
#define CHLOROLAB_REGRESSOR_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "chlorolab/nn.hpp"
#include "chlorolab/raster.hpp"
#include "json.hpp"

namespace chlorolab {

/// Tiles are mean-pooled down to resolution x resolution before the stem.
struct TrunkConfig {
  Eigen::Index tile = 32;
  Eigen::Index resolution = 16;
  int channels = 8;
  int blocks = 3;
};

/// Multiplies blocks, channels and resolution by the compound factors. The
/// resolution is snapped to the nearest divisor of the tile size.
TrunkConfig apply_compound_scaling(const TrunkConfig& base, const nn::CompoundScaling& scaling);

/// Stem convolution, residual blocks, global average pool.
struct CnnTrunk {
  TrunkConfig config;
  nn::Conv3x3<double> stem;
  std::vector<nn::ResidualBlock<double>> blocks;

  struct Cache {
    MatrixX stem_cols, stem_out;
    std::vector<nn::ResidualBlock<double>::Cache> blocks;
  };

  static CnnTrunk zeros(const TrunkConfig& config);
  Eigen::Index features() const { return config.channels; }
  VectorX forward(const Plane& tile, Cache* cache = nullptr) const;
  void backward(const VectorX& dfeatures, const Cache& cache, CnnTrunk& grad) const;

  template <typename F>
  void visit(F&& f) {
    stem.visit([&](const std::string& n, auto& t) { f("trunk.stem." + n, t); });
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "trunk.block" + std::to_string(b);
      blocks[b].first.visit([&](const std::string& n, auto& t) { f(p + ".first." + n, t); });
      blocks[b].second.visit([&](const std::string& n, auto& t) { f(p + ".second." + n, t); });
    }
  }
};

/// Single-tile regressor: trunk features -> linear head.
struct CnnRegressor {
  CnnTrunk trunk;
  nn::Linear<double> head;

  template <typename F>
  void visit(F&& f) {
    trunk.visit(f);
    head.visit([&](const std::string& n, auto& t) { f("head." + n, t); });
  }
};

/// Series regressor: the same trunk on every timestep, then a
/// bidirectional LSTM with one output per step.
struct BiLstmRegressor {
  CnnTrunk trunk;
  nn::BiLstm<double> rnn;
  Eigen::Index length = 4;

  template <typename F>
  void visit(F&& f) {
    trunk.visit(f);
    rnn.fwd.visit([&](const std::string& n, auto& t) { f("lstm.fwd." + n, t); });
    rnn.bwd.visit([&](const std::string& n, auto& t) { f("lstm.bwd." + n, t); });
    rnn.head.visit([&](const std::string& n, auto& t) { f("head." + n, t); });
  }
};

CnnRegressor init_cnn(const TrunkConfig& config, std::uint64_t seed);
BiLstmRegressor init_bilstm(const TrunkConfig& config, int hidden, Eigen::Index length, std::uint64_t seed);

template <typename Model>
Eigen::Index parameter_count(Model& model) {
  Eigen::Index n = 0;
  model.visit([&](const std::string&, auto& t) { n += t.size(); });
  return n;
}

template <typename Model>
VectorX flatten(Model& model) {
  VectorX out(parameter_count(model));
  Eigen::Index at = 0;
  model.visit([&](const std::string&, auto& t) {
    out.segment(at, t.size()) = Eigen::Map<const VectorX>(t.data(), t.size());
    at += t.size();
  });
  return out;
}

template <typename Model>
void unflatten(const VectorX& theta, Model& model) {
  if (theta.size() != parameter_count(model)) throw InvalidInput("parameter vector size mismatch");
  Eigen::Index at = 0;
  model.visit([&](const std::string&, auto& t) {
    Eigen::Map<VectorX>(t.data(), t.size()) = theta.segment(at, t.size());
    at += t.size();
  });
}

template <typename Model>
Model zeros_like(Model model) {
  model.visit([](const std::string&, auto& t) { t.setZero(); });
  return model;
}

struct TileSample {
  Plane patch;
  double target = 0.0;
};

struct SeriesSample {
  std::vector<Plane> patches;
  VectorX targets;
};

/// Unclamped network outputs.
double raw_output(const CnnRegressor& model, const Plane& tile);
VectorX raw_output(const BiLstmRegressor& model, const std::vector<Plane>& series);

/// Outputs clamped to [0, 1].
double predict(const CnnRegressor& model, const Plane& tile);
VectorX predict(const BiLstmRegressor& model, const std::vector<Plane>& series);
VectorX predict_batch(const CnnRegressor& model, const std::vector<Plane>& tiles);

/// Squared error of one sample (mean over steps for a series); its gradient
/// is added into grad.
double loss_and_gradient(const CnnRegressor& model, const TileSample& sample, CnnRegressor& grad);
double loss_and_gradient(const BiLstmRegressor& model, const SeriesSample& sample, BiLstmRegressor& grad);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  double holdout_fraction = 0.1;  // used for early stopping when N >= 10
  std::uint64_t seed = 0;
};

struct TrainReport {
  double initial_loss = 0.0;         // training-set MSE before the first step
  std::vector<double> train_loss;    // mean sample loss seen during each epoch
  std::vector<double> holdout_loss;  // empty when no held-out slice was used
  int best_epoch = 0;                // 1-based epoch whose weights were kept
  bool stopped_early = false;
  std::size_t train_count = 0;
  std::size_t holdout_count = 0;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Adam on mean squared error; the weights of the best epoch (held-out loss,
/// or training loss without a held-out slice) are restored at the end.
TrainReport train(CnnRegressor& model, const std::vector<TileSample>& data, const TrainConfig& config);
TrainReport train(BiLstmRegressor& model, const std::vector<SeriesSample>& data, const TrainConfig& config);

using NeuralModel = std::variant<CnnRegressor, BiLstmRegressor>;

struct SavedWeights {
  NeuralModel model;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json extra;
};

/// One JSON header line followed by little-endian float64 tensors in the
/// order listed in the header.
void save_weights(const std::filesystem::path& path, const NeuralModel& model, std::uint64_t seed, int epoch,
                  const nlohmann::json& extra = nlohmann::json::object());
SavedWeights load_weights(const std::filesystem::path& path);

}  // namespace chlorolab

#endif
