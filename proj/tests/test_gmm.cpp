#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "chlorolab/gmm.hpp"

using namespace chlorolab;

namespace {

MatrixX gaussian_blob(const Vector3& center, double sigma, Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, sigma);
  MatrixX out(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) out(i, d) = center(d) + z(rng);
  return out;
}

MatrixX uniform_data(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return MatrixX::NullaryExpr(n, 3, [&] { return u(rng); });
}

GmmModel single(const VectorX& mean, const MatrixX& cov) {
  GmmModel m;
  m.components.push_back({1.0, mean, cov});
  return m;
}

// Plain Lloyd iterations from the given starting centers (test-only oracle).
MatrixX kmeans(const MatrixX& data, MatrixX centers, int iters = 50) {
  for (int it = 0; it < iters; ++it) {
    MatrixX sum = MatrixX::Zero(centers.rows(), centers.cols());
    VectorX count = VectorX::Zero(centers.rows());
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&best);
      sum.row(best) += data.row(i);
      count(best) += 1;
    }
    for (Eigen::Index k = 0; k < centers.rows(); ++k)
      if (count(k) > 0) centers.row(k) = sum.row(k) / count(k);
  }
  return centers;
}

}  // namespace

TEST(GmmPdf, StandardNormalAtMean) {
  const GmmModel m = single(VectorX::Zero(1), MatrixX::Identity(1, 1));
  EXPECT_NEAR(gmm_pdf(m, VectorX::Zero(1)), 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(gmm_pdf(m, VectorX::Zero(1)), 0.398942, 1e-6);
}

TEST(GmmPdf, MixtureOfIdenticalComponentsEqualsComponent) {
  Vector3 mu(0.3, 0.5, 0.7);
  Matrix3 cov;
  cov << 0.02, 0.005, 0.0, 0.005, 0.03, 0.004, 0.0, 0.004, 0.01;
  const GmmModel one = single(mu, cov);
  GmmModel two;
  two.components = {{0.5, mu, cov}, {0.5, mu, cov}};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vector3 x(u(rng), u(rng), u(rng));
    EXPECT_NEAR(gmm_pdf(two, x), gmm_pdf(one, x), 1e-12 * gmm_pdf(one, x));
  }
}

TEST(GmmPdf, TrapezoidalIntegralIsOne) {
  GmmModel m;
  Matrix3 c1, c2;
  c1 << 0.010, 0.004, 0.0, 0.004, 0.012, -0.002, 0.0, -0.002, 0.008;
  c2 = 0.005 * Matrix3::Identity();
  m.components = {{0.4, Vector3(0.3, 0.4, 0.5), c1}, {0.6, Vector3(0.6, 0.6, 0.4), c2}};
  // [-5 sigma, +5 sigma] box around both components
  const double sigma = std::sqrt(0.012);
  const double lo = 0.3 - 5 * sigma, hi = 0.6 + 5 * sigma;
  const int n = 81;
  const double h = (hi - lo) / (n - 1);
  MatrixX pts(n * n * n, 3);
  VectorX w(n * n * n);
  Eigen::Index r = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k, ++r) {
        pts.row(r) << lo + i * h, lo + j * h, lo + k * h;
        const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
        const double wk = (k == 0 || k == n - 1) ? 0.5 : 1.0;
        w(r) = wi * wj * wk;
      }
  const double integral = w.dot(gmm_log_pdf_rows(m, pts).array().exp().matrix()) * h * h * h;
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(GmmScores, ClosedForms) {
  EXPECT_NEAR(bic_score(2, std::exp(2.0), 0.0), 4.0, 1e-12);
  EXPECT_NEAR(aic_score(3, 1.0), 4.0, 1e-15);
  EXPECT_EQ(parameter_count(1, 3), 9);
  EXPECT_EQ(parameter_count(3, 3), 2 + 9 + 18);
}

TEST(GmmScores, MatchModelLikelihood) {
  const MatrixX data = uniform_data(50, 4);
  const GmmModel m = fit_em(data, 2, {});
  const double ll = log_likelihood(m, data);
  EXPECT_NEAR(bic(m, data), 19 * std::log(50.0) - 2 * ll, 1e-9);
  EXPECT_NEAR(aic(m, data), 2 * 19 - 2 * ll, 1e-9);
  EXPECT_NEAR(ll, m.fit_log.back(), 1e-9 * std::abs(ll));
}

TEST(FitEm, SingleComponentIsSampleMoments) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MatrixX data = uniform_data(200, seed);
    GmmConfig cfg;
    cfg.seed = seed;
    const GmmModel m = fit_em(data, 1, cfg);
    Vector3 mean = Vector3::Zero();
    for (Eigen::Index i = 0; i < data.rows(); ++i) mean += data.row(i).transpose();
    mean /= double(data.rows());
    Matrix3 cov = Matrix3::Zero();
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      const Vector3 d = data.row(i).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= double(data.rows());
    ASSERT_EQ(m.components.size(), 1u);
    EXPECT_LT((m.components[0].mean - mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((m.components[0].cov - cov).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_DOUBLE_EQ(m.components[0].weight, 1.0);
  }
}

TEST(FitEm, RecoversTwoSeparatedClusters) {
  std::mt19937_64 rng(21);
  const Vector3 a = Vector3::Constant(0.2), b = Vector3::Constant(0.8);
  MatrixX data(400, 3);
  data << gaussian_blob(a, 0.02, 200, rng), gaussian_blob(b, 0.02, 200, rng);
  const GmmModel m = fit_em(data, 2, {});
  MatrixX start(2, 3);
  start << data.row(0), data.row(399);
  const MatrixX centers = kmeans(data, start);
  for (const auto& comp : m.components) {
    const double to_truth = std::min((comp.mean - a).cwiseAbs().maxCoeff(), (comp.mean - b).cwiseAbs().maxCoeff());
    EXPECT_LT(to_truth, 0.01);
    Eigen::Index nearest = 0;
    const double to_kmeans = (centers.rowwise() - comp.mean.transpose()).rowwise().norm().minCoeff(&nearest);
    EXPECT_LT(to_kmeans, 1e-3);
    EXPECT_NEAR(comp.weight, 0.5, 1e-6);
  }
  EXPECT_GT((m.components[0].mean - m.components[1].mean).norm(), 0.5);
}

TEST(FitEm, Preconditions) {
  EXPECT_THROW(fit_em(uniform_data(2, 0), 3, {}), InvalidInput);
  EXPECT_THROW(fit_em(MatrixX(0, 3), 1, {}), InvalidInput);
}

TEST(FitEm, DegenerateDataIsFlooredAtReg) {
  // every point on the plane z = 0.5: the sample covariance is singular
  MatrixX data = uniform_data(100, 4);
  data.col(2).setConstant(0.5);
  GmmConfig cfg;
  const GmmModel m = fit_em(data, 1, cfg);
  Eigen::SelfAdjointEigenSolver<MatrixX> es(m.components[0].cov);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), cfg.reg, 1e-15);
  EXPECT_NEAR(m.components[0].cov(2, 2), cfg.reg, 1e-15);
  const MatrixX xy = data.leftCols(2).rowwise() - data.leftCols(2).colwise().mean();
  const MatrixX cov_xy = xy.transpose() * xy / double(data.rows());
  EXPECT_LT((m.components[0].cov.topLeftCorner(2, 2) - cov_xy).cwiseAbs().maxCoeff(), 1e-12);
  cfg.reg = 0.0;
  EXPECT_THROW(fit_em(data, 1, cfg), InvalidInput);
}

TEST(FitEm, TraceMonotoneWeightsNormalizedCovariancesSpd) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (int c : {1, 2, 3, 4}) {
      GmmConfig cfg;
      cfg.seed = seed;
      const GmmModel m = fit_em(uniform_data(120, 100 + seed), c, cfg);
      for (std::size_t i = 1; i < m.fit_log.size(); ++i) {
        ASSERT_GE(m.fit_log[i], m.fit_log[i - 1] - 1e-9) << "seed " << seed << " C " << c;
      }
      double wsum = 0.0;
      for (const auto& comp : m.components) {
        wsum += comp.weight;
        EXPECT_LT((comp.cov - comp.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::SelfAdjointEigenSolver<MatrixX> es(comp.cov);
        EXPECT_GE(es.eigenvalues().minCoeff(), cfg.reg * (1 - 1e-9));
      }
      EXPECT_NEAR(wsum, 1.0, 1e-12);
    }
  }
}

TEST(FitEm, BitReproducibleForFixedSeed) {
  const MatrixX data = uniform_data(150, 77);
  GmmConfig cfg;
  cfg.seed = 1234;
  const GmmModel a = fit_em(data, 3, cfg);
  const GmmModel b = fit_em(data, 3, cfg);
  EXPECT_EQ(a.fit_log, b.fit_log);
  for (std::size_t k = 0; k < a.components.size(); ++k) {
    EXPECT_EQ(a.components[k].mean, b.components[k].mean);
    EXPECT_EQ(a.components[k].cov, b.components[k].cov);
  }
}

TEST(SelectComponents, SoleCandidate) {
  const auto sel = select_components(uniform_data(60, 3), {2}, {});
  EXPECT_EQ(sel.best, 2);
  ASSERT_EQ(sel.table.size(), 1u);
}

TEST(SelectComponents, TableHasOneRowPerCandidate) {
  const auto sel = select_components(uniform_data(80, 5), {1, 2, 3, 4, 5}, {});
  ASSERT_EQ(sel.table.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(sel.table[i].components, int(i) + 1);
  EXPECT_GE(sel.best, 1);
  EXPECT_LE(sel.best, 5);
}

TEST(SelectComponents, SingleGaussianDataPrefersOneComponentByBic) {
  int votes_for_one = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const MatrixX data = gaussian_blob(Vector3::Constant(0.5), 0.05, 150, rng);
    GmmConfig cfg;
    cfg.seed = seed;
    const auto sel = select_components(data, {1, 2, 3}, cfg);
    auto it = std::min_element(sel.table.begin(), sel.table.end(),
                               [](const auto& a, const auto& b) { return a.bic < b.bic; });
    if (it->components == 1) ++votes_for_one;
  }
  EXPECT_GT(votes_for_one, 10);
}

TEST(GmmConditional, IndependentComponentIgnoresConditioning) {
  const GmmModel m = single(Vector3(0.5, 0.5, 0.4), Vector3(0.01, 0.02, 0.003).asDiagonal());
  const VectorX grid = uniform_grid(1001);
  for (double x : {0.1, 0.5, 0.9}) {
    const auto h = gmm_conditional(m, x, 1.0 - x, grid);
    EXPECT_NEAR(h.mean(), 0.4, 1e-6);
    EXPECT_NEAR(h.masses().sum(), 1.0, 1e-9);
  }
}

TEST(GmmConditional, GaussianConditioningClosedForm) {
  const double sx = 0.05, sc = 0.05, rho = 0.6;
  Eigen::Matrix2d cov;
  cov << sx * sx, rho * sx * sc, rho * sx * sc, sc * sc;
  const GmmModel m = single(Eigen::Vector2d(0.5, 0.5), cov);
  const VectorX grid = uniform_grid(2001);
  for (double x : {0.45, 0.5, 0.55, 0.6}) {
    const auto h = gmm_conditional(m, VectorX::Constant(1, x), grid);
    const double expected_mean = 0.5 + rho * (sc / sx) * (x - 0.5);
    const double expected_var = sc * sc * (1 - rho * rho);
    EXPECT_NEAR(h.mean(), expected_mean, 1e-6);
    EXPECT_NEAR(h.variance(), expected_var, 1e-6);
  }
}

TEST(GmmConditional, MatchesNormalizedDensitySlice) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GmmConfig cfg;
    cfg.seed = seed;
    const GmmModel m = fit_em(uniform_data(100, 300 + seed), 3, cfg);
    const VectorX grid = uniform_grid(256);
    const double date = 0.3 + 0.1 * seed, ndvi = 0.6 - 0.05 * seed;
    const auto h = gmm_conditional(m, date, ndvi, grid);
    VectorX slice(grid.size());
    for (Eigen::Index j = 0; j < grid.size(); ++j) slice(j) = gmm_pdf(m, Vector3(date, ndvi, grid(j)));
    slice /= slice.sum();
    EXPECT_LT((h.masses() - slice).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(h.masses().sum(), 1.0, 1e-9);
  }
}

TEST(GmmConditional, FarPointIsOutsideSupport) {
  const GmmModel m = single(Vector3(0.5, 0.5, 0.5), 1e-6 * Matrix3::Identity());
  EXPECT_THROW(gmm_conditional(m, 0.0, 1.0, uniform_grid()), Error);
}

TEST(GmmJson, RoundTrip) {
  GmmConfig cfg;
  cfg.seed = 3;
  GmmModel m = fit_em(uniform_data(60, 8), 2, cfg);
  m.train_fields = {"A", "B"};
  const GmmModel back = gmm_from_json(nlohmann::json::parse(to_json(m).dump()));
  ASSERT_EQ(back.components.size(), 2u);
  EXPECT_EQ(back.components[1].cov, m.components[1].cov);
  EXPECT_EQ(back.components[0].mean, m.components[0].mean);
  EXPECT_EQ(back.fit_log, m.fit_log);
  EXPECT_EQ(back.train_fields, m.train_fields);
}
