#include "chlorolab/regressor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace chlorolab {

TrunkConfig apply_compound_scaling(const TrunkConfig& base, const nn::CompoundScaling& scaling) {
  const nn::ScaleFactors f = nn::compound_scale(scaling);
  TrunkConfig out = base;
  out.blocks = std::max(1, static_cast<int>(std::lround(base.blocks * f.depth)));
  out.channels = std::max(1, static_cast<int>(std::lround(base.channels * f.width)));
  const double want = static_cast<double>(base.resolution) * f.resolution;
  Eigen::Index best = 1;
  for (Eigen::Index r = 1; r <= base.tile; ++r) {
    if (base.tile % r == 0 && std::abs(static_cast<double>(r) - want) < std::abs(static_cast<double>(best) - want)) {
      best = r;
    }
  }
  out.resolution = best;
  return out;
}

CnnTrunk CnnTrunk::zeros(const TrunkConfig& config) {
  if (config.tile < 1 || config.resolution < 1 || config.tile % config.resolution != 0) {
    throw InvalidInput("trunk resolution must divide the tile size");
  }
  if (config.channels < 1 || config.blocks < 0) throw InvalidInput("trunk needs channels >= 1");
  CnnTrunk t;
  t.config = config;
  t.stem = nn::Conv3x3<double>::zeros(1, config.channels);
  t.blocks.assign(static_cast<std::size_t>(config.blocks), nn::ResidualBlock<double>::zeros(config.channels));
  return t;
}

VectorX CnnTrunk::forward(const Plane& tile, Cache* cache) const {
  if (tile.rows() != config.tile || tile.cols() != config.tile) {
    throw InvalidInput("tile size mismatch: expected " + std::to_string(config.tile) + ", got " +
                       std::to_string(tile.rows()) + "x" + std::to_string(tile.cols()));
  }
  const Eigen::Index r = config.resolution;
  const MatrixX x = nn::average_pool<double>(tile, config.tile / r);
  Cache local;
  Cache& c = cache ? *cache : local;
  c.stem_out = stem.forward(x, r, r, &c.stem_cols).array().tanh().matrix();
  c.blocks.resize(blocks.size());
  MatrixX h = c.stem_out;
  for (std::size_t b = 0; b < blocks.size(); ++b) h = blocks[b].forward(h, r, r, &c.blocks[b]);
  return h.rowwise().mean();
}

void CnnTrunk::backward(const VectorX& dfeatures, const Cache& c, CnnTrunk& grad) const {
  const Eigen::Index r = config.resolution;
  MatrixX dh = dfeatures.replicate(1, r * r) / static_cast<double>(r * r);
  for (std::size_t b = blocks.size(); b-- > 0;) dh = blocks[b].backward(dh, c.blocks[b], r, r, grad.blocks[b]);
  const MatrixX ds = (dh.array() * (1.0 - c.stem_out.array().square())).matrix();
  stem.backward(ds, c.stem_cols, r, r, grad.stem, false);
}

namespace {

void init_trunk(CnnTrunk& t, std::mt19937_64& rng) {
  nn::fill_normal(t.stem.weight, 1.0 / 3.0, rng);
  const double sd = 1.0 / std::sqrt(9.0 * t.config.channels);
  for (auto& b : t.blocks) {
    nn::fill_normal(b.first.weight, sd, rng);
    nn::fill_normal(b.second.weight, 0.5 * sd, rng);
  }
}

}  // namespace

CnnRegressor init_cnn(const TrunkConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(mix64(seed));
  CnnRegressor m{CnnTrunk::zeros(config), nn::Linear<double>::zeros(config.channels, 1)};
  init_trunk(m.trunk, rng);
  nn::fill_normal(m.head.weight, 1.0 / std::sqrt(double(config.channels)), rng);
  m.head.bias(0) = 0.5;
  return m;
}

BiLstmRegressor init_bilstm(const TrunkConfig& config, int hidden, Eigen::Index length, std::uint64_t seed) {
  if (hidden < 1 || length < 1) throw InvalidInput("bilstm needs hidden >= 1 and length >= 1");
  std::mt19937_64 rng(mix64(seed));
  BiLstmRegressor m{CnnTrunk::zeros(config), nn::BiLstm<double>::zeros(config.channels, hidden), length};
  init_trunk(m.trunk, rng);
  const double sd = 1.0 / std::sqrt(double(config.channels + hidden));
  for (auto* p : {&m.rnn.fwd, &m.rnn.bwd}) {
    nn::fill_normal(p->W, sd, rng);
    nn::fill_normal(p->U, sd, rng);
    p->b.segment(hidden, hidden).setOnes();  // forget gate starts open
  }
  nn::fill_normal(m.rnn.head.weight, 1.0 / std::sqrt(2.0 * hidden), rng);
  m.rnn.head.bias(0) = 0.5;
  return m;
}

double raw_output(const CnnRegressor& model, const Plane& tile) {
  return model.head.forward(model.trunk.forward(tile))(0);
}

VectorX raw_output(const BiLstmRegressor& model, const std::vector<Plane>& series) {
  if (static_cast<Eigen::Index>(series.size()) != model.length) {
    throw InvalidInput("series length mismatch: expected " + std::to_string(model.length) + ", got " +
                       std::to_string(series.size()));
  }
  MatrixX seq(model.trunk.features(), model.length);
  for (Eigen::Index t = 0; t < model.length; ++t) seq.col(t) = model.trunk.forward(series[static_cast<std::size_t>(t)]);
  return model.rnn.forward(seq, nullptr);
}

double predict(const CnnRegressor& model, const Plane& tile) {
  return std::clamp(raw_output(model, tile), 0.0, 1.0);
}

VectorX predict(const BiLstmRegressor& model, const std::vector<Plane>& series) {
  return raw_output(model, series).cwiseMax(0.0).cwiseMin(1.0);
}

VectorX predict_batch(const CnnRegressor& model, const std::vector<Plane>& tiles) {
  VectorX out(static_cast<Eigen::Index>(tiles.size()));
  parallel_for(tiles.size(), [&](std::size_t i) { out(static_cast<Eigen::Index>(i)) = predict(model, tiles[i]); });
  return out;
}

double loss_and_gradient(const CnnRegressor& model, const TileSample& sample, CnnRegressor& grad) {
  CnnTrunk::Cache cache;
  const VectorX feat = model.trunk.forward(sample.patch, &cache);
  const double e = model.head.forward(feat)(0) - sample.target;
  const VectorX dfeat = model.head.backward(feat, VectorX::Constant(1, 2.0 * e), grad.head);
  model.trunk.backward(dfeat, cache, grad.trunk);
  return e * e;
}

double loss_and_gradient(const BiLstmRegressor& model, const SeriesSample& sample, BiLstmRegressor& grad) {
  const Eigen::Index L = model.length;
  if (static_cast<Eigen::Index>(sample.patches.size()) != L || sample.targets.size() != L) {
    throw InvalidInput("series length mismatch");
  }
  std::vector<CnnTrunk::Cache> caches(static_cast<std::size_t>(L));
  MatrixX seq(model.trunk.features(), L);
  for (Eigen::Index t = 0; t < L; ++t) {
    seq.col(t) = model.trunk.forward(sample.patches[static_cast<std::size_t>(t)], &caches[static_cast<std::size_t>(t)]);
  }
  nn::BiLstm<double>::Cache rc;
  const VectorX err = model.rnn.forward(seq, &rc) - sample.targets;
  const MatrixX dseq = model.rnn.backward((2.0 / double(L)) * err, rc, grad.rnn);
  for (Eigen::Index t = 0; t < L; ++t) model.trunk.backward(dseq.col(t), caches[static_cast<std::size_t>(t)], grad.trunk);
  return err.squaredNorm() / double(L);
}

namespace {

double sample_loss(const CnnRegressor& m, const TileSample& s) {
  const double e = raw_output(m, s.patch) - s.target;
  return e * e;
}

double sample_loss(const BiLstmRegressor& m, const SeriesSample& s) {
  return (raw_output(m, s.patches) - s.targets).squaredNorm() / double(m.length);
}

template <typename Model, typename Sample>
double mean_loss(const Model& model, const std::vector<Sample>& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::vector<double> losses(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) { losses[i] = sample_loss(model, data[idx[i]]); });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / double(idx.size());
}

template <typename Model, typename Sample>
TrainReport train_impl(Model& model, const std::vector<Sample>& data, const TrainConfig& cfg) {
  if (data.empty()) throw InvalidInput("training set is empty");
  if (!(cfg.learning_rate >= 0.0) || cfg.batch_size < 1 || cfg.max_epochs < 0 || cfg.patience < 1 ||
      !(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0)) {
    throw InvalidInput("invalid training configuration");
  }
  std::mt19937_64 rng(mix64(cfg.seed ^ 0x7472616eULL));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = 0;
  if (data.size() >= 10 && cfg.holdout_fraction > 0.0) {
    n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.holdout_fraction * double(data.size()))));
  }
  std::vector<std::size_t> hold(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::vector<std::size_t> fit(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::sort(fit.begin(), fit.end());

  TrainReport report;
  report.train_count = fit.size();
  report.holdout_count = hold.size();
  report.initial_loss = mean_loss(model, data, fit);
  if (!std::isfinite(report.initial_loss)) throw TrainingError("non-finite loss before training");

  VectorX theta = flatten(model);
  VectorX m1 = VectorX::Zero(theta.size()), m2 = VectorX::Zero(theta.size());
  VectorX best_theta = theta;
  double best_score = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  const Model zero = zeros_like(model);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(fit.begin(), fit.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < fit.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(fit.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;
      MatrixX grads(theta.size(), static_cast<Eigen::Index>(b));
      std::vector<double> losses(b);
      parallel_for(b, [&](std::size_t i) {
        Model g = zero;
        losses[i] = loss_and_gradient(model, data[fit[start + i]], g);
        grads.col(static_cast<Eigen::Index>(i)) = flatten(g);
      });
      double batch_loss = 0.0;
      VectorX grad = VectorX::Zero(theta.size());
      for (std::size_t i = 0; i < b; ++i) {
        batch_loss += losses[i];
        grad += grads.col(static_cast<Eigen::Index>(i));
      }
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch starting at sample " << start
            << " (batch loss " << batch_loss / double(b) << ", learning rate " << cfg.learning_rate << ")";
        throw TrainingError(msg.str());
      }
      epoch_sum += batch_loss;
      grad /= double(b);
      ++step;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
      theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon);
      unflatten(theta, model);
    }
    report.train_loss.push_back(epoch_sum / double(fit.size()));
    double score = report.train_loss.back();
    if (!hold.empty()) {
      report.holdout_loss.push_back(mean_loss(model, data, hold));
      score = report.holdout_loss.back();
    }
    if (!std::isfinite(score)) {
      throw TrainingError("non-finite loss at the end of epoch " + std::to_string(epoch));
    }
    if (score < best_score) {
      best_score = score;
      best_theta = theta;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }
  unflatten(best_theta, model);
  return report;
}

}  // namespace

TrainReport train(CnnRegressor& model, const std::vector<TileSample>& data, const TrainConfig& config) {
  return train_impl(model, data, config);
}

TrainReport train(BiLstmRegressor& model, const std::vector<SeriesSample>& data, const TrainConfig& config) {
  return train_impl(model, data, config);
}

namespace {

nlohmann::json trunk_json(const TrunkConfig& c) {
  return {{"tile", c.tile}, {"resolution", c.resolution}, {"channels", c.channels}, {"blocks", c.blocks}};
}

TrunkConfig trunk_from_json(const nlohmann::json& j) {
  TrunkConfig c;
  c.tile = j.at("tile").get<Eigen::Index>();
  c.resolution = j.at("resolution").get<Eigen::Index>();
  c.channels = j.at("channels").get<int>();
  c.blocks = j.at("blocks").get<int>();
  return c;
}

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InvalidInput("weight file truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_weights(const std::filesystem::path& path, const NeuralModel& model, std::uint64_t seed, int epoch,
                  const nlohmann::json& extra) {
  NeuralModel copy = model;
  nlohmann::ordered_json header;
  std::visit(
      [&](auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, CnnRegressor>) {
          header["architecture"] = "cnn";
        } else {
          header["architecture"] = "bilstm";
        }
        header["trunk"] = trunk_json(m.trunk.config);
        if constexpr (std::is_same_v<M, BiLstmRegressor>) {
          header["hidden"] = m.rnn.fwd.hidden();
          header["length"] = m.length;
        }
      },
      copy);
  header["seed"] = seed;
  header["epoch"] = epoch;
  header["extra"] = extra;
  auto tensors = nlohmann::ordered_json::array();
  std::visit([&](auto& m) {
    m.visit([&](const std::string& name, auto& t) {
      tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
    });
  }, copy);
  header["tensors"] = tensors;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << header.dump() << '\n';
  std::visit([&](auto& m) {
    m.visit([&](const std::string&, auto& t) {
      for (Eigen::Index j = 0; j < t.cols(); ++j)
        for (Eigen::Index i = 0; i < t.rows(); ++i) put_le(out, t(i, j));
    });
  }, copy);
  if (!out) throw Error("failed writing " + path.string());
}

SavedWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("weight file header: " + std::string(e.what()));
  }
  SavedWeights out;
  const std::string arch = header.at("architecture").get<std::string>();
  const TrunkConfig trunk = trunk_from_json(header.at("trunk"));
  if (arch == "cnn") {
    out.model = CnnRegressor{CnnTrunk::zeros(trunk), nn::Linear<double>::zeros(trunk.channels, 1)};
  } else if (arch == "bilstm") {
    const auto hidden = header.at("hidden").get<Eigen::Index>();
    out.model = BiLstmRegressor{CnnTrunk::zeros(trunk), nn::BiLstm<double>::zeros(trunk.channels, hidden),
                                header.at("length").get<Eigen::Index>()};
  } else {
    throw InvalidInput("unknown architecture '" + arch + "'");
  }
  out.seed = header.at("seed").get<std::uint64_t>();
  out.epoch = header.at("epoch").get<int>();
  out.extra = header.value("extra", nlohmann::json::object());
  const auto& tensors = header.at("tensors");
  std::size_t k = 0;
  std::visit([&](auto& m) {
    m.visit([&](const std::string& name, auto& t) {
      if (k >= tensors.size() || tensors[k].at("name") != name ||
          tensors[k].at("shape").at(0).template get<Eigen::Index>() != t.rows() ||
          tensors[k].at("shape").at(1).template get<Eigen::Index>() != t.cols()) {
        throw InvalidInput("weight file tensor list does not match the architecture at '" + name + "'");
      }
      ++k;
      for (Eigen::Index j = 0; j < t.cols(); ++j)
        for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = get_le(in);
    });
  }, out.model);
  if (k != tensors.size()) throw InvalidInput("weight file lists extra tensors");
  return out;
}

}  // namespace chlorolab
