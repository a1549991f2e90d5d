#include "chlorolab/histogram.hpp"

#include <cmath>

namespace chlorolab {

Histogram1D::Histogram1D(VectorX centers, VectorX masses)
    : centers_(std::move(centers)), masses_(std::move(masses)) {
  if (centers_.size() == 0 || centers_.size() != masses_.size()) {
    throw InvalidInput("histogram: centers and masses must be non-empty and equal length");
  }
  for (Eigen::Index i = 0; i < centers_.size(); ++i) {
    if (!(centers_(i) >= 0.0 && centers_(i) <= 1.0)) throw InvalidInput("histogram: center outside [0, 1]");
    if (i > 0 && !(centers_(i) > centers_(i - 1))) {
      throw InvalidInput("histogram: centers not strictly ascending");
    }
  }
  if (!masses_.allFinite() || masses_.minCoeff() < 0.0) {
    throw InvalidInput("histogram: masses must be finite and non-negative");
  }
  if (std::abs(masses_.sum() - 1.0) > 1e-9) throw InvalidInput("histogram: masses do not sum to 1");
}

Histogram1D Histogram1D::from_weights(VectorX centers, const VectorX& weights) {
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) throw Error("histogram: zero total weight");
  return Histogram1D(std::move(centers), weights / total);
}

Histogram1D Histogram1D::from_log_weights(VectorX centers, const VectorX& log_weights) {
  const double m = log_weights.maxCoeff();
  if (!std::isfinite(m)) throw Error("histogram: zero total weight");
  return from_weights(std::move(centers), (log_weights.array() - m).exp().matrix());
}

double Histogram1D::variance() const {
  const double mu = mean();
  return std::max(0.0, masses_.dot((centers_.array() - mu).square().matrix()));
}

Eigen::Index Histogram1D::mode_index() const {
  Eigen::Index idx = 0;
  masses_.maxCoeff(&idx);
  return idx;
}

VectorX uniform_grid(Eigen::Index n) {
  if (n < 1) throw InvalidInput("grid needs at least one bin");
  return (VectorX::LinSpaced(n, 0.0, double(n - 1)).array() + 0.5) / double(n);
}

}  // namespace chlorolab
