#ifndef CHLOROLAB_CORE_HPP
#define CHLOROLAB_CORE_HPP

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace chlorolab {

// Common dense types. Scaled samples are stored one per row.
using Vector2 = Eigen::Vector2d;
using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using VectorX = Eigen::VectorXd;
using MatrixX = Eigen::MatrixXd;
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an input violates a documented precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Calendar date with day resolution, stored as days since 1970-01-01.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::sys_days d) : days_(d) {}
  Date(int year, unsigned month, unsigned day);

  /// Parses "YYYY-MM-DD"; throws InvalidInput on anything else.
  static Date parse(std::string_view iso);

  std::string iso() const;
  long day_number() const { return days_.time_since_epoch().count(); }
  std::chrono::sys_days sys() const { return days_; }

  Date plus_days(long n) const { return Date(days_ + std::chrono::days(n)); }

  friend auto operator<=>(const Date&, const Date&) = default;

 private:
  std::chrono::sys_days days_{};
};

/// 64-bit FNV-1a over raw bytes, stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 14695981039346656037ULL);

/// splitmix64 finalizer; spreads nearby seeds over the whole state space.
std::uint64_t mix64(std::uint64_t x);

/// Maximum worker count: CHLOROLAB_THREADS when set, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index
/// must write only its own output slot so results match a sequential run.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Seeded shuffle of row indices; position i of the permutation goes to fold i % folds.
std::vector<int> assign_folds(Eigen::Index n, int folds, std::uint64_t seed);

/// Numerically stable log(sum(exp(v))). Returns -inf for an all -inf input.
double log_sum_exp(const Eigen::Ref<const VectorX>& v);

}  // namespace chlorolab

#endif
