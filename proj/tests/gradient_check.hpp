#ifndef CHLOROLAB_TESTS_GRADIENT_CHECK_HPP
#define CHLOROLAB_TESTS_GRADIENT_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>

#include "chlorolab/core.hpp"

namespace chlorolab::testing {

struct GradientCheck {
  double max_rel_error = 0.0;
  Eigen::Index worst = -1;
};

/// Compares an analytic gradient against central differences of f at x.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradientCheck check_gradient(const std::function<double(const VectorX&)>& f, const VectorX& x,
                                    const VectorX& analytic, double eps = 1e-5, double floor = 1e-6) {
  GradientCheck out;
  VectorX probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + eps;
    const double up = f(probe);
    probe(i) = x(i) - eps;
    const double down = f(probe);
    probe(i) = x(i);
    const double numeric = (up - down) / (2 * eps);
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), floor});
    const double rel = std::abs(analytic(i) - numeric) / denom;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = i;
    }
  }
  return out;
}

}  // namespace chlorolab::testing

#endif
