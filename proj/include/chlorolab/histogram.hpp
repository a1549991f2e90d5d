#ifndef CHLOROLAB_HISTOGRAM_HPP
#define CHLOROLAB_HISTOGRAM_HPP

#include "chlorolab/core.hpp"

namespace chlorolab {

/// Discrete conditional CF distribution: strictly ascending bin centers in
/// [0, 1] with non-negative masses summing to 1.
class Histogram1D {
 public:
  Histogram1D(VectorX centers, VectorX masses);

  /// Normalizes non-negative weights into masses; throws if they sum to zero.
  static Histogram1D from_weights(VectorX centers, const VectorX& weights);
  /// Normalizes exp(log_weights) with the max subtracted first.
  static Histogram1D from_log_weights(VectorX centers, const VectorX& log_weights);

  const VectorX& centers() const { return centers_; }
  const VectorX& masses() const { return masses_; }
  Eigen::Index size() const { return centers_.size(); }

  double mean() const { return centers_.dot(masses_); }
  double variance() const;
  Eigen::Index mode_index() const;

 private:
  VectorX centers_;
  VectorX masses_;
};

/// n uniform bin centers over [0, 1]: (j + 0.5) / n.
VectorX uniform_grid(Eigen::Index n = 256);

}  // namespace chlorolab

#endif
