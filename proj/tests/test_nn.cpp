#include <gtest/gtest.h>

#include <random>

#include "chlorolab/regressor.hpp"
#include "gradient_check.hpp"
#include "test_helpers.hpp"

using namespace chlorolab;
using chlorolab::testing::check_gradient;

namespace {

constexpr double kTol = 1e-4;

template <typename Derived>
void randomize(Eigen::MatrixBase<Derived>& m, std::mt19937_64& rng, double sd = 0.5) {
  nn::fill_normal(m, sd, rng);
}

template <typename Model>
void randomize_all(Model& model, std::uint64_t seed, double sd = 0.4) {
  std::mt19937_64 rng(seed);
  model.visit([&](const std::string&, auto& t) { randomize(t, rng, sd); });
}

MatrixX random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatrixX m(r, c);
  randomize(m, rng, 1.0);
  return m;
}

Plane random_plane(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.9);
  return Plane::NullaryExpr(n, n, [&] { return u(rng); });
}

// Wraps a single-block model so it can be flattened like the regressors.
struct BlockModel {
  nn::ResidualBlock<double> block;
  template <typename F>
  void visit(F&& f) {
    block.visit(f);
  }
};

struct LstmModel {
  nn::LstmParams<double> p;
  template <typename F>
  void visit(F&& f) {
    p.visit(f);
  }
};

struct BiLstmModel {
  nn::BiLstm<double> net;
  template <typename F>
  void visit(F&& f) {
    net.visit(f);
  }
};

}  // namespace

TEST(Im2Col, AdjointOfCol2Im) {
  const Eigen::Index c = 3, h = 5, w = 4;
  const MatrixX x = random_matrix(c, h * w, 1);
  const MatrixX y = random_matrix(9 * c, h * w, 2);
  const double lhs = (nn::im2col3x3<double>(x, h, w).array() * y.array()).sum();
  const double rhs = (x.array() * nn::col2im3x3<double>(y, c, h, w).array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
}

TEST(Conv3x3, CenterTapIsIdentityAndPaddingIsZero) {
  const MatrixX x = random_matrix(2, 12, 3);
  auto conv = nn::Conv3x3<double>::zeros(2, 2);
  conv.weight(0, 0 * 9 + 4) = 1.0;
  conv.weight(1, 1 * 9 + 4) = 1.0;
  MatrixX y = conv.forward(x, 3, 4, nullptr);
  EXPECT_EQ(y, x);
  // shift-right kernel: output pixel takes its left neighbour, zero on the border
  auto shift = nn::Conv3x3<double>::zeros(1, 1);
  shift.weight(0, 3) = 1.0;
  const MatrixX one = MatrixX::Constant(1, 9, 2.0);
  y = shift.forward(one, 3, 3, nullptr);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(y(0, r * 3 + 0), 0.0);
    EXPECT_EQ(y(0, r * 3 + 1), 2.0);
  }
}

TEST(ResidualBlock, ZeroWeightsAreIdentity) {
  const auto block = nn::ResidualBlock<double>::zeros(4);
  const MatrixX x = random_matrix(4, 36, 4);
  EXPECT_EQ(block.forward(x, 6, 6, nullptr), x);
}

TEST(ResidualBlock, PreservesShape) {
  BlockModel m{nn::ResidualBlock<double>::zeros(3)};
  randomize_all(m, 5);
  const MatrixX x = random_matrix(3, 20, 6);
  const MatrixX y = m.block.forward(x, 4, 5, nullptr);
  EXPECT_EQ(y.rows(), 3);
  EXPECT_EQ(y.cols(), 20);
  EXPECT_THROW(m.block.forward(random_matrix(2, 20, 7), 4, 5, nullptr), InvalidInput);
}

TEST(ResidualBlock, GradientsMatchFiniteDifferences) {
  const Eigen::Index c = 3, h = 4, w = 5;
  BlockModel m{nn::ResidualBlock<double>::zeros(c)};
  randomize_all(m, 8);
  const MatrixX x = random_matrix(c, h * w, 9);
  const MatrixX probe = random_matrix(c, h * w, 10);  // loss = <probe, H(x)>

  BlockModel grad = zeros_like(m);
  nn::ResidualBlock<double>::Cache cache;
  m.block.forward(x, h, w, &cache);
  const MatrixX dx = m.block.backward(probe, cache, h, w, grad.block);

  const VectorX theta = flatten(m);
  auto loss_params = [&](const VectorX& t) {
    BlockModel q = m;
    unflatten(t, q);
    return (q.block.forward(x, h, w, nullptr).array() * probe.array()).sum();
  };
  EXPECT_LE(check_gradient(loss_params, theta, flatten(grad)).max_rel_error, kTol);

  auto loss_input = [&](const VectorX& xin) {
    const MatrixX xm = Eigen::Map<const MatrixX>(xin.data(), c, h * w);
    return (m.block.forward(xm, h, w, nullptr).array() * probe.array()).sum();
  };
  const VectorX xflat = Eigen::Map<const VectorX>(x.data(), x.size());
  const VectorX dxflat = Eigen::Map<const VectorX>(dx.data(), dx.size());
  EXPECT_LE(check_gradient(loss_input, xflat, dxflat).max_rel_error, kTol);
}

TEST(CompoundScale, ClosedForms) {
  auto f = nn::compound_scale({1.2, 1.1, 1.15, 0.0});
  EXPECT_EQ(f.depth, 1.0);
  EXPECT_EQ(f.width, 1.0);
  EXPECT_EQ(f.resolution, 1.0);
  f = nn::compound_scale({1.2, 1.1, 1.15, 1.0});
  EXPECT_EQ(f.depth, 1.2);
  EXPECT_EQ(f.width, 1.1);
  EXPECT_EQ(f.resolution, 1.15);
  f = nn::compound_scale({2.0, 1.0, 1.0, 3.0});
  EXPECT_EQ(f.depth, 8.0);
  EXPECT_EQ(f.width, 1.0);
  EXPECT_EQ(f.resolution, 1.0);
  EXPECT_TRUE(nn::CompoundScaling{}.satisfies_budget(0.01));
  EXPECT_THROW(nn::compound_scale({0.5, 1.0, 1.0, 1.0}), InvalidInput);
}

TEST(CompoundScale, AppliedToTrunk) {
  const TrunkConfig base;
  const TrunkConfig same = apply_compound_scaling(base, {});
  EXPECT_EQ(same.blocks, base.blocks);
  EXPECT_EQ(same.channels, base.channels);
  EXPECT_EQ(same.resolution, base.resolution);
  const TrunkConfig big = apply_compound_scaling(base, {2.0, 2.0, 2.0, 1.0});
  EXPECT_EQ(big.blocks, 6);
  EXPECT_EQ(big.channels, 16);
  EXPECT_EQ(big.resolution, 32);
}

TEST(LstmStep, ZeroParameterClosedForms) {
  const auto p = nn::LstmParams<double>::zeros(3, 4);
  const VectorX x = VectorX::Constant(3, 0.7);
  auto [h0, c0] = nn::lstm_step<double>(x, VectorX::Zero(4), VectorX::Zero(4), p);
  EXPECT_EQ(h0, VectorX::Zero(4));
  EXPECT_EQ(c0, VectorX::Zero(4));
  const VectorX c = VectorX::LinSpaced(4, -1.0, 2.0);
  auto [h1, c1] = nn::lstm_step<double>(x, VectorX::Zero(4), c, p);
  for (Eigen::Index j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(c1(j), 0.5 * c(j));
    EXPECT_DOUBLE_EQ(h1(j), 0.5 * std::tanh(0.5 * c(j)));
  }
  EXPECT_THROW(nn::lstm_step<double>(VectorX::Zero(2), VectorX::Zero(4), VectorX::Zero(4), p), InvalidInput);
}

TEST(LstmStep, GradientsThroughSequenceMatchFiniteDifferences) {
  const Eigen::Index D = 3, H = 4, L = 3;
  LstmModel m{nn::LstmParams<double>::zeros(D, H)};
  randomize_all(m, 11, 0.6);
  const MatrixX xs = random_matrix(D, L, 12);
  const MatrixX probe = random_matrix(H, L, 13);
  const VectorX c_probe = random_matrix(H, 1, 14);
  const VectorX h0 = 0.3 * random_matrix(H, 1, 15), c0 = 0.3 * random_matrix(H, 1, 16);

  auto run = [&](const nn::LstmParams<double>& p, const MatrixX& in, const VectorX& hs, const VectorX& cs,
                 std::vector<nn::LstmStepCache<double>>* caches) {
    VectorX h = hs, c = cs;
    double loss = 0.0;
    for (Eigen::Index t = 0; t < L; ++t) {
      std::tie(h, c) = nn::lstm_step<double>(in.col(t), h, c, p, caches ? &(*caches)[t] : nullptr);
      loss += probe.col(t).dot(h);
    }
    return loss + c_probe.dot(c);
  };

  std::vector<nn::LstmStepCache<double>> caches(L);
  run(m.p, xs, h0, c0, &caches);
  LstmModel grad = zeros_like(m);
  MatrixX dxs(D, L);
  VectorX dh = VectorX::Zero(H), dc = c_probe, dx;
  for (Eigen::Index t = L - 1; t >= 0; --t) {
    std::tie(dx, dh, dc) = nn::lstm_step_backward<double>(VectorX(probe.col(t) + dh), dc, caches[t], m.p, grad.p);
    dxs.col(t) = dx;
  }

  auto loss_params = [&](const VectorX& t) {
    LstmModel q = m;
    unflatten(t, q);
    return run(q.p, xs, h0, c0, nullptr);
  };
  EXPECT_LE(check_gradient(loss_params, flatten(m), flatten(grad)).max_rel_error, kTol);

  auto loss_inputs = [&](const VectorX& v) {
    return run(m.p, Eigen::Map<const MatrixX>(v.data(), D, L), h0, c0, nullptr);
  };
  EXPECT_LE(check_gradient(loss_inputs, Eigen::Map<const VectorX>(xs.data(), xs.size()),
                           Eigen::Map<const VectorX>(dxs.data(), dxs.size()))
                .max_rel_error,
            kTol);
  auto loss_state = [&](const VectorX& v) { return run(m.p, xs, v.head(H), v.tail(H), nullptr); };
  VectorX state(2 * H), dstate(2 * H);
  state << h0, c0;
  dstate << dh, dc;
  EXPECT_LE(check_gradient(loss_state, state, dstate).max_rel_error, kTol);
}

TEST(BiLstm, ZeroParametersOutputHeadBias) {
  auto net = nn::BiLstm<double>::zeros(3, 5);
  net.head.bias(0) = 0.37;
  const VectorX y = net.forward(random_matrix(3, 4, 17), nullptr);
  EXPECT_EQ(y, VectorX::Constant(4, 0.37));
}

TEST(BiLstm, ReversalSymmetry) {
  const Eigen::Index D = 3, H = 4;
  BiLstmModel m{nn::BiLstm<double>::zeros(D, H)};
  randomize_all(m, 18);
  nn::BiLstm<double> swapped = m.net;
  std::swap(swapped.fwd, swapped.bwd);
  swapped.head.weight << m.net.head.weight.rightCols(H), m.net.head.weight.leftCols(H);
  const MatrixX seq = random_matrix(D, 4, 19);
  const VectorX y = m.net.forward(seq, nullptr);
  const VectorX yr = swapped.forward(seq.rowwise().reverse(), nullptr);
  EXPECT_LT((yr.reverse() - y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BiLstm, EveryOutputSeesEveryStep) {
  BiLstmModel m{nn::BiLstm<double>::zeros(3, 4)};
  randomize_all(m, 20);
  const MatrixX seq = random_matrix(3, 4, 21);
  const VectorX y = m.net.forward(seq, nullptr);
  for (Eigen::Index s = 0; s < 4; ++s) {
    MatrixX bumped = seq;
    bumped.col(s).array() += 0.1;
    const VectorX yb = m.net.forward(bumped, nullptr);
    for (Eigen::Index t = 0; t < 4; ++t) EXPECT_NE(yb(t), y(t)) << "input " << s << " output " << t;
  }
}

TEST(BiLstm, GradientsMatchFiniteDifferences) {
  const Eigen::Index D = 3, H = 3, L = 4;
  BiLstmModel m{nn::BiLstm<double>::zeros(D, H)};
  randomize_all(m, 22, 0.6);
  const MatrixX seq = random_matrix(D, L, 23);
  const VectorX probe = random_matrix(L, 1, 24);
  nn::BiLstm<double>::Cache cache;
  m.net.forward(seq, &cache);
  BiLstmModel grad = zeros_like(m);
  const MatrixX dseq = m.net.backward(probe, cache, grad.net);
  auto loss_params = [&](const VectorX& t) {
    BiLstmModel q = m;
    unflatten(t, q);
    return probe.dot(q.net.forward(seq, nullptr));
  };
  EXPECT_LE(check_gradient(loss_params, flatten(m), flatten(grad)).max_rel_error, kTol);
  auto loss_inputs = [&](const VectorX& v) {
    return probe.dot(m.net.forward(Eigen::Map<const MatrixX>(v.data(), D, L), nullptr));
  };
  EXPECT_LE(check_gradient(loss_inputs, Eigen::Map<const VectorX>(seq.data(), seq.size()),
                           Eigen::Map<const VectorX>(dseq.data(), dseq.size()))
                .max_rel_error,
            kTol);
}

TEST(CnnTrunk, ZeroTileZeroBiasGivesZeroFeatures) {
  TrunkConfig cfg;
  CnnRegressor m = init_cnn(cfg, 1);
  EXPECT_EQ(m.trunk.forward(Plane::Zero(32, 32)), VectorX::Zero(cfg.channels));
}

TEST(CnnTrunk, SharedWeightsGiveIdenticalFeatures) {
  BiLstmRegressor m = init_bilstm(TrunkConfig{}, 4, 4, 2);
  const Plane tile = random_plane(32, 25);
  std::vector<Plane> series{tile, random_plane(32, 26), tile, random_plane(32, 27)};
  EXPECT_EQ(m.trunk.forward(series[0]), m.trunk.forward(series[2]));
  EXPECT_THROW(m.trunk.forward(Plane::Zero(16, 16)), InvalidInput);
}

TEST(CnnTrunk, GradientsMatchFiniteDifferences) {
  const TrunkConfig cfg{8, 4, 3, 2};
  CnnRegressor m = init_cnn(cfg, 3);
  randomize_all(m, 28, 0.5);
  const Plane tile = random_plane(8, 29);
  const VectorX probe = random_matrix(cfg.channels, 1, 30);
  CnnTrunk::Cache cache;
  m.trunk.forward(tile, &cache);
  CnnRegressor grad = zeros_like(m);
  m.trunk.backward(probe, cache, grad.trunk);
  auto loss = [&](const VectorX& t) {
    CnnRegressor q = m;
    unflatten(t, q);
    return probe.dot(q.trunk.forward(tile));
  };
  EXPECT_LE(check_gradient(loss, flatten(m), flatten(grad)).max_rel_error, kTol);
}

TEST(CnnRegressor, LossGradientMatchesFiniteDifferences) {
  CnnRegressor m = init_cnn({8, 4, 3, 2}, 4);
  randomize_all(m, 31, 0.5);
  const TileSample s{random_plane(8, 32), 0.42};
  CnnRegressor grad = zeros_like(m);
  const double l = loss_and_gradient(m, s, grad);
  EXPECT_NEAR(l, std::pow(raw_output(m, s.patch) - 0.42, 2), 1e-15);
  auto loss = [&](const VectorX& t) {
    CnnRegressor q = m;
    unflatten(t, q);
    return std::pow(raw_output(q, s.patch) - s.target, 2);
  };
  EXPECT_LE(check_gradient(loss, flatten(m), flatten(grad)).max_rel_error, kTol);
}

TEST(BiLstmRegressor, LossGradientMatchesFiniteDifferences) {
  BiLstmRegressor m = init_bilstm({8, 4, 3, 1}, 3, 4, 5);
  randomize_all(m, 33, 0.5);
  SeriesSample s;
  for (int t = 0; t < 4; ++t) s.patches.push_back(random_plane(8, 34 + t));
  s.targets = VectorX::LinSpaced(4, 0.2, 0.8);
  BiLstmRegressor grad = zeros_like(m);
  loss_and_gradient(m, s, grad);
  auto loss = [&](const VectorX& t) {
    BiLstmRegressor q = m;
    unflatten(t, q);
    return (raw_output(q, s.patches) - s.targets).squaredNorm() / 4.0;
  };
  EXPECT_LE(check_gradient(loss, flatten(m), flatten(grad)).max_rel_error, kTol);
}

TEST(Predict, ClampsToUnitInterval) {
  CnnRegressor m = init_cnn({8, 4, 2, 1}, 6);
  m.head.weight.setZero();
  m.head.bias(0) = 1.3;
  EXPECT_EQ(raw_output(m, random_plane(8, 40)), 1.3);
  EXPECT_EQ(predict(m, random_plane(8, 40)), 1.0);
  m.head.bias(0) = -0.2;
  EXPECT_EQ(predict(m, random_plane(8, 40)), 0.0);
}

TEST(Predict, BatchEqualsPerItem) {
  CnnRegressor m = init_cnn({8, 4, 3, 2}, 7);
  std::vector<Plane> tiles;
  for (int i = 0; i < 10; ++i) tiles.push_back(random_plane(8, 50 + i));
  const VectorX batch = predict_batch(m, tiles);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(batch(i), predict(m, tiles[i]));
}

TEST(Predict, SeriesLengthMismatch) {
  BiLstmRegressor m = init_bilstm({8, 4, 3, 1}, 3, 4, 8);
  EXPECT_THROW(predict(m, std::vector<Plane>(3, Plane::Zero(8, 8))), InvalidInput);
}

TEST(Weights, RoundTrip) {
  chlorolab::testing::TempDir tmp("weights");
  BiLstmRegressor m = init_bilstm({32, 16, 8, 3}, 6, 4, 9);
  save_weights(tmp.path() / "w.bin", m, 99, 12, {{"labels", "kde"}});
  const SavedWeights back = load_weights(tmp.path() / "w.bin");
  ASSERT_TRUE(std::holds_alternative<BiLstmRegressor>(back.model));
  BiLstmRegressor b = std::get<BiLstmRegressor>(back.model);
  EXPECT_EQ(flatten(b), flatten(m));
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.epoch, 12);
  EXPECT_EQ(back.extra.at("labels"), "kde");
  const std::string text = chlorolab::testing::read_file(tmp.path() / "w.bin");
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(header.at("architecture"), "bilstm");
  EXPECT_EQ(text.size() - text.find('\n') - 1, std::size_t(8 * parameter_count(m)));

  CnnRegressor c = init_cnn({8, 4, 3, 2}, 10);
  save_weights(tmp.path() / "c.bin", c, 1, 3);
  CnnRegressor cb = std::get<CnnRegressor>(load_weights(tmp.path() / "c.bin").model);
  EXPECT_EQ(flatten(cb), flatten(c));
}
