#ifndef CHLOROLAB_KDE_HPP
#define CHLOROLAB_KDE_HPP

#include <string>
#include <vector>

#include "chlorolab/core.hpp"
#include "chlorolab/histogram.hpp"
#include "chlorolab/stats.hpp"
#include "json.hpp"

namespace chlorolab {

enum class KernelKind { Box, Gaussian };

const char* kernel_name(KernelKind k);
KernelKind parse_kernel(const std::string& name);

/// Product-kernel density estimate over rows of `samples`:
///
///   P(x) = 1 / (N h_1 ... h_d) * sum_n prod_d K((x_d - x_{n,d}) / h_d)
///
/// Box: K(u) = 1 for |u| <= 1/2, else 0 (the hypercube window).
/// Gaussian: K(u) = exp(-u^2 / 2) / sqrt(2 pi).
struct KdeModel {
  MatrixX samples;
  VectorX bandwidth;
  KernelKind kernel = KernelKind::Gaussian;
  ScaleParams scale;
  std::vector<std::string> train_fields;
};

KdeModel make_kde(MatrixX samples, double h, KernelKind kernel = KernelKind::Gaussian);
void validate(const KdeModel& model);

double kde_log_density(const KdeModel& model, const Eigen::Ref<const VectorX>& x);
double kde_density(const KdeModel& model, const Eigen::Ref<const VectorX>& x);

/// Density of the last dimension on cf_grid given the leading coordinates,
/// normalized to unit mass. Throws when every density is below 1e-300.
Histogram1D kde_conditional(const KdeModel& model, const Eigen::Ref<const VectorX>& given,
                            const VectorX& cf_grid);
Histogram1D kde_conditional(const KdeModel& model, double date01, double ndvi01,
                            const VectorX& cf_grid);

struct BandwidthGrid {
  double lo = 0.001;
  double hi = 1.0;
  double step = 0.001;

  /// lo, lo + step, ... up to hi inclusive.
  std::vector<double> candidates() const;
};

struct BandwidthRow {
  double h = 0.0;
  double score = 0.0;  // mean held-out log-density
};

struct BandwidthSearch {
  double best_h = 0.0;
  std::vector<BandwidthRow> table;
};

/// Seeded F-fold search of a shared bandwidth. Each fold scores the mean
/// held-out log density (densities floored at 1e-300); the table holds the
/// mean over folds. Best is the smallest h attaining the maximum.
BandwidthSearch grid_search_bandwidth(const MatrixX& data, const std::vector<double>& candidates,
                                      int folds, std::uint64_t seed,
                                      KernelKind kernel = KernelKind::Gaussian);
BandwidthSearch grid_search_bandwidth(const MatrixX& data, const BandwidthGrid& grid, int folds,
                                      std::uint64_t seed, KernelKind kernel = KernelKind::Gaussian);

nlohmann::json to_json(const KdeModel& model);
KdeModel kde_from_json(const nlohmann::json& j);

}  // namespace chlorolab

#endif
