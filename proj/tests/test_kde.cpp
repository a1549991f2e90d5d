#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "chlorolab/kde.hpp"

using namespace chlorolab;

namespace {

MatrixX uniform_points(Eigen::Index n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  return MatrixX::NullaryExpr(n, 3, [&] { return u(rng); });
}

MatrixX tight_gaussian(Eigen::Index n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.5, sigma);
  return MatrixX::NullaryExpr(n, 3, [&] { return z(rng); });
}

// Direct evaluation of the volume-normalized product-kernel estimate.
double direct_density(const MatrixX& s, double h, KernelKind kernel, const Vector3& x) {
  double sum = 0.0;
  for (Eigen::Index n = 0; n < s.rows(); ++n) {
    double prod = 1.0;
    for (int d = 0; d < 3; ++d) {
      const double u = (x(d) - s(n, d)) / h;
      prod *= kernel == KernelKind::Box ? (std::abs(u) <= 0.5 ? 1.0 : 0.0)
                                        : std::exp(-0.5 * u * u) / std::sqrt(2 * std::numbers::pi);
    }
    sum += prod;
  }
  return sum / (double(s.rows()) * h * h * h);
}

}  // namespace

TEST(KdeDensity, SingleSampleGaussianPeak) {
  const KdeModel m = make_kde(MatrixX::Constant(1, 3, 0.5), 0.1);
  EXPECT_NEAR(kde_density(m, Vector3::Constant(0.5)), 63.4936, 1e-4);
  EXPECT_NEAR(kde_density(m, Vector3::Constant(0.5)), std::pow(1.0 / (0.1 * std::sqrt(2 * std::numbers::pi)), 3),
              1e-10);
}

TEST(KdeDensity, BoxKernelOutsideHypercubeIsZero) {
  const KdeModel m = make_kde(MatrixX::Constant(1, 3, 0.5), 0.1, KernelKind::Box);
  EXPECT_EQ(kde_density(m, Vector3(0.5, 0.5, 0.5 + 0.051)), 0.0);
  EXPECT_EQ(kde_density(m, Vector3(0.44, 0.5, 0.5)), 0.0);
  EXPECT_NEAR(kde_density(m, Vector3(0.52, 0.47, 0.5)), 1000.0, 1e-9);
}

TEST(KdeDensity, MatchesDirectEvaluation) {
  const MatrixX s = uniform_points(40, 0.2, 0.8, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto kernel : {KernelKind::Gaussian, KernelKind::Box}) {
    const KdeModel m = make_kde(s, 0.15, kernel);
    for (int q = 0; q < 100; ++q) {
      const Vector3 x(u(rng), u(rng), u(rng));
      const double want = direct_density(s, 0.15, kernel, x);
      EXPECT_NEAR(kde_density(m, x), want, 1e-12 * std::max(1.0, want));
    }
  }
}

TEST(KdeDensity, RiemannIntegralIsOne) {
  const MatrixX s = uniform_points(20, 0.35, 0.65, 3);
  const KdeModel m = make_kde(s, 0.05);
  const int n = 60;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) sum += kde_density(m, Vector3((i + 0.5) / n, (j + 0.5) / n, (k + 0.5) / n));
  EXPECT_NEAR(sum / (double(n) * n * n), 1.0, 1e-2);
}

TEST(KdeDensity, DuplicatingSamplesLeavesDensityUnchanged) {
  const MatrixX s = uniform_points(30, 0.0, 1.0, 4);
  MatrixX doubled(60, 3);
  doubled << s, s;
  const KdeModel a = make_kde(s, 0.08), b = make_kde(doubled, 0.08);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int q = 0; q < 100; ++q) {
    const Vector3 x(u(rng), u(rng), u(rng));
    EXPECT_NEAR(kde_density(a, x), kde_density(b, x), 1e-12 * std::max(1.0, kde_density(a, x)));
  }
}

TEST(KdeDensity, NonNegativeAndContinuous) {
  const MatrixX s = uniform_points(50, 0.0, 1.0, 6);
  const KdeModel m = make_kde(s, 0.08);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int q = 0; q < 200; ++q) {
    const Vector3 x(u(rng), u(rng), u(rng));
    const double p = kde_density(m, x);
    EXPECT_GE(p, 0.0);
    for (double eps : {1e-4, 1e-6}) {
      const Vector3 dx = Vector3(1, -1, 1) * eps;
      // Lipschitz bound of a sum of gaussians with h = 0.08 keeps the step tiny
      EXPECT_LT(std::abs(kde_density(m, x + dx) - p), 1e4 * eps);
    }
  }
}

TEST(KdeModel, RejectsInvalid) {
  EXPECT_THROW(make_kde(MatrixX(0, 3), 0.1), InvalidInput);
  EXPECT_THROW(make_kde(MatrixX::Zero(2, 3), 0.0), InvalidInput);
  EXPECT_THROW(make_kde(MatrixX::Zero(2, 3), -1.0), InvalidInput);
  EXPECT_EQ(parse_kernel("box"), KernelKind::Box);
  EXPECT_EQ(parse_kernel("gaussian"), KernelKind::Gaussian);
  EXPECT_THROW(parse_kernel("epanechnikov"), InvalidInput);
}

TEST(KdeConditional, PointMassLandsInItsBin) {
  MatrixX s = uniform_points(30, 0.3, 0.7, 8);
  s.col(2).setConstant(0.4);
  const KdeModel m = make_kde(s, 0.01);
  const VectorX grid = uniform_grid();
  const Histogram1D h = kde_conditional(m, s(0, 0), s(0, 1), grid);
  EXPECT_EQ(h.mode_index(), Eigen::Index(0.4 * 256));
  EXPECT_NEAR(h.masses().sum(), 1.0, 1e-9);
}

TEST(KdeConditional, SymmetricSamplesGiveSymmetricHistogram) {
  MatrixX s(6, 3);
  s << 0.5, 0.5, 0.3,  //
      0.5, 0.5, 0.7,   //
      0.4, 0.6, 0.45,  //
      0.4, 0.6, 0.55,  //
      0.6, 0.45, 0.1,  //
      0.6, 0.45, 0.9;
  const KdeModel m = make_kde(s, 0.1);
  const VectorX grid = uniform_grid();
  const Histogram1D h = kde_conditional(m, 0.5, 0.5, grid);
  for (Eigen::Index j = 0; j < 128; ++j) EXPECT_NEAR(h.masses()(j), h.masses()(255 - j), 1e-9);
  EXPECT_NEAR(h.mean(), 0.5, 1e-9);
}

TEST(KdeConditional, MatchesPerBinEvaluation) {
  for (auto kernel : {KernelKind::Gaussian, KernelKind::Box}) {
    const MatrixX s = uniform_points(80, 0.0, 1.0, 9);
    const KdeModel m = make_kde(s, kernel == KernelKind::Box ? 0.5 : 0.08, kernel);
    const VectorX grid = uniform_grid();
    const Histogram1D h = kde_conditional(m, 0.45, 0.55, grid);
    VectorX direct(grid.size());
    for (Eigen::Index j = 0; j < grid.size(); ++j) direct(j) = kde_density(m, Vector3(0.45, 0.55, grid(j)));
    direct /= direct.sum();
    EXPECT_LT((h.masses() - direct).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(h.masses().sum(), 1.0, 1e-9);
    EXPECT_GE(h.mean(), 0.0);
    EXPECT_LE(h.mean(), 1.0);
  }
}

TEST(KdeConditional, OutsideSupportIsAnError) {
  const KdeModel box = make_kde(MatrixX::Constant(1, 3, 0.5), 0.1, KernelKind::Box);
  EXPECT_THROW(kde_conditional(box, 0.9, 0.9, uniform_grid()), Error);
  const KdeModel narrow = make_kde(MatrixX::Constant(1, 3, 0.5), 0.001);
  EXPECT_THROW(kde_conditional(narrow, 0.0, 1.0, uniform_grid()), Error);
}

TEST(BandwidthGrid, Candidates) {
  const auto c = BandwidthGrid{}.candidates();
  ASSERT_EQ(c.size(), 1000u);
  EXPECT_DOUBLE_EQ(c.front(), 0.001);
  EXPECT_NEAR(c.back(), 1.0, 1e-12);
  EXPECT_NEAR(c[79], 0.08, 1e-12);
  EXPECT_THROW((BandwidthGrid{0.1, 0.05, 0.001}.candidates()), InvalidInput);
}

TEST(GridSearchBandwidth, SoleCandidate) {
  const auto r = grid_search_bandwidth(uniform_points(40, 0, 1, 10), std::vector<double>{0.08}, 5, 1);
  EXPECT_EQ(r.best_h, 0.08);
  ASSERT_EQ(r.table.size(), 1u);
}

TEST(GridSearchBandwidth, ScoreMatchesDirectHeldOutLogDensity) {
  const MatrixX s = uniform_points(30, 0.0, 1.0, 11);
  const int folds = 3;
  const auto fold = assign_folds(s.rows(), folds, 5);
  for (auto kernel : {KernelKind::Gaussian, KernelKind::Box}) {
    const auto r = grid_search_bandwidth(s, std::vector<double>{0.05, 0.2, 0.6}, folds, 5, kernel);
    for (const auto& row : r.table) {
      double total = 0.0;
      for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> tr, te;
        for (Eigen::Index i = 0; i < s.rows(); ++i) (fold[i] == f ? te : tr).push_back(i);
        MatrixX t(tr.size(), 3);
        for (std::size_t j = 0; j < tr.size(); ++j) t.row(j) = s.row(tr[j]);
        double sum = 0.0;
        for (auto i : te) sum += std::log(std::max(direct_density(t, row.h, kernel, s.row(i).transpose()), 1e-300));
        total += sum / double(te.size());
      }
      EXPECT_NEAR(row.score, total / folds, 1e-9 * std::max(1.0, std::abs(total))) << row.h;
    }
  }
}

TEST(GridSearchBandwidth, TightGaussianSelectsSmallBandwidth) {
  const double sigma = 0.02;
  const MatrixX s = tight_gaussian(500, sigma, 12);
  const auto r = grid_search_bandwidth(s, BandwidthGrid{}, 5, 7);
  EXPECT_GE(r.best_h, 0.005);
  EXPECT_LE(r.best_h, 0.1);
  // the true density's mean log-likelihood bounds the held-out score from above (up to sampling noise)
  double truth = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    truth += -1.5 * std::log(2 * std::numbers::pi * sigma * sigma) -
             (s.row(i).array() - 0.5).square().sum() / (2 * sigma * sigma);
  truth /= double(s.rows());
  double best = -INFINITY;
  for (const auto& row : r.table) best = std::max(best, row.score);
  EXPECT_LT(best, truth + 0.5);
  EXPECT_GT(best, truth - 1.5);
}

TEST(GridSearchBandwidth, DeterministicForFixedSeed) {
  const MatrixX s = uniform_points(60, 0.0, 1.0, 13);
  const auto a = grid_search_bandwidth(s, BandwidthGrid{0.01, 0.5, 0.01}, 5, 3);
  const auto b = grid_search_bandwidth(s, BandwidthGrid{0.01, 0.5, 0.01}, 5, 3);
  EXPECT_EQ(a.best_h, b.best_h);
  for (std::size_t i = 0; i < a.table.size(); ++i) EXPECT_EQ(a.table[i].score, b.table[i].score);
}

TEST(KdeJson, RoundTrip) {
  KdeModel m = make_kde(uniform_points(10, 0, 1, 14), 0.08, KernelKind::Box);
  m.train_fields = {"A", "B"};
  const auto j = to_json(m);
  const KdeModel back = kde_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.kernel, KernelKind::Box);
  EXPECT_EQ(back.bandwidth, m.bandwidth);
  EXPECT_EQ(back.samples, m.samples);
  EXPECT_EQ(back.train_fields, m.train_fields);
}
