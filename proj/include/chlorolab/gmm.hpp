#ifndef CHLOROLAB_GMM_HPP
#define CHLOROLAB_GMM_HPP

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "chlorolab/core.hpp"
#include "chlorolab/histogram.hpp"
#include "chlorolab/stats.hpp"
#include "json.hpp"

namespace chlorolab {

/// log N(x | mean, L L^T) given the Cholesky factor of the covariance.
template <typename DerivedX, typename DerivedM, typename Scalar = typename DerivedX::Scalar>
Scalar log_gaussian_density(const Eigen::MatrixBase<DerivedX>& x,
                            const Eigen::MatrixBase<DerivedM>& mean,
                            const Eigen::LLT<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& chol) {
  using std::log;
  const auto d = x.size();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z = chol.matrixL().solve((x - mean).eval());
  const Scalar log_det = Scalar(2) * chol.matrixLLT().diagonal().array().log().sum();
  return Scalar(-0.5) * (Scalar(d) * log(Scalar(2) * std::numbers::pi_v<Scalar>) + log_det +
                         z.squaredNorm());
}

struct GaussianComponent {
  double weight = 1.0;
  VectorX mean;
  MatrixX cov;
};

struct GmmConfig {
  int max_iter = 500;
  double tol = 1e-8;         // relative log-likelihood gain
  double reg = 1e-6;         // floor on covariance eigenvalues each M-step
  std::uint64_t seed = 0;
};

struct GmmModel {
  std::vector<GaussianComponent> components;
  std::vector<double> fit_log;  // log-likelihood after each E-step
  ScaleParams scale;
  std::vector<std::string> train_fields;

  Eigen::Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
};

/// Fits C full-covariance components by expectation maximization. Rows of
/// data are samples. Initialization: k-means++ seeding of the means, uniform
/// weights, pooled sample covariance.
GmmModel fit_em(const MatrixX& data, int components, const GmmConfig& config);

double gmm_log_pdf(const GmmModel& model, const Eigen::Ref<const VectorX>& x);
double gmm_pdf(const GmmModel& model, const Eigen::Ref<const VectorX>& x);
/// Log density at every row of points.
VectorX gmm_log_pdf_rows(const GmmModel& model, const MatrixX& points);
double log_likelihood(const GmmModel& model, const MatrixX& data);

/// Free parameters of a C-component full-covariance mixture in d dimensions.
int parameter_count(int components, int dim);

double bic_score(double params, double n, double log_likelihood);
double aic_score(double params, double log_likelihood);
double bic(const GmmModel& model, const MatrixX& data);
double aic(const GmmModel& model, const MatrixX& data);

struct SelectionRow {
  int components = 0;
  double bic = 0.0;
  double aic = 0.0;
  double score = 0.0;  // mean of min-max normalized BIC and AIC
};

struct ComponentSelection {
  int best = 0;
  std::vector<SelectionRow> table;
  std::vector<GmmModel> models;  // aligned with table
};

/// Fits every candidate count and picks the one minimizing the mean of the
/// min-max normalized BIC and AIC (ties go to the smaller count).
ComponentSelection select_components(const MatrixX& data, const std::vector<int>& candidates,
                                     const GmmConfig& config);

/// Conditional distribution of the last dimension given the leading ones,
/// evaluated on cf_grid and normalized to unit mass.
Histogram1D gmm_conditional(const GmmModel& model, const Eigen::Ref<const VectorX>& given,
                            const VectorX& cf_grid);
Histogram1D gmm_conditional(const GmmModel& model, double date01, double ndvi01,
                            const VectorX& cf_grid);

nlohmann::json to_json(const GmmModel& model);
GmmModel gmm_from_json(const nlohmann::json& j);

}  // namespace chlorolab

#endif
