#include "chlorolab/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace chlorolab {

namespace {

constexpr double kDensityFloor = 1e-300;
const double kLogFloor = std::log(kDensityFloor);
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// sum_d log K((x_d - s_{n,d}) / h_d) for every sample n, over the first `dims` dimensions.
VectorX log_kernel_products(const KdeModel& m, const Eigen::Ref<const VectorX>& x,
                            Eigen::Index dims) {
  const auto n = m.samples.rows();
  VectorX out = VectorX::Zero(n);
  for (Eigen::Index d = 0; d < dims; ++d) {
    const Eigen::ArrayXd u = (x(d) - m.samples.col(d).array()) / m.bandwidth(d);
    if (m.kernel == KernelKind::Gaussian) {
      out.array() += -0.5 * u.square() - kLogSqrt2Pi;
    } else {
      out.array() += (u.abs() <= 0.5).select(Eigen::ArrayXd::Zero(n),
                                             -std::numeric_limits<double>::infinity());
    }
  }
  return out;
}

}  // namespace

const char* kernel_name(KernelKind k) { return k == KernelKind::Box ? "box" : "gaussian"; }

KernelKind parse_kernel(const std::string& name) {
  if (name == "box") return KernelKind::Box;
  if (name == "gaussian") return KernelKind::Gaussian;
  throw InvalidInput("unknown kernel '" + name + "'");
}

KdeModel make_kde(MatrixX samples, double h, KernelKind kernel) {
  KdeModel m;
  m.bandwidth = VectorX::Constant(samples.cols(), h);
  m.samples = std::move(samples);
  m.kernel = kernel;
  validate(m);
  return m;
}

void validate(const KdeModel& model) {
  if (model.samples.rows() < 1) throw InvalidInput("kde: no samples");
  if (model.bandwidth.size() != model.samples.cols()) throw InvalidInput("kde: bandwidth dimension mismatch");
  if (!(model.bandwidth.array() > 0.0).all()) throw InvalidInput("kde: bandwidth must be positive");
}

double kde_log_density(const KdeModel& model, const Eigen::Ref<const VectorX>& x) {
  if (x.size() != model.samples.cols()) throw InvalidInput("kde: query dimension mismatch");
  const double log_norm = -std::log(double(model.samples.rows())) -
                          model.bandwidth.array().log().sum();
  return log_norm + log_sum_exp(log_kernel_products(model, x, x.size()));
}

double kde_density(const KdeModel& model, const Eigen::Ref<const VectorX>& x) {
  return std::exp(kde_log_density(model, x));
}

Histogram1D kde_conditional(const KdeModel& model, const Eigen::Ref<const VectorX>& given,
                            const VectorX& cf_grid) {
  const auto d = model.samples.cols();
  if (given.size() != d - 1) throw InvalidInput("kde_conditional: conditioning dimension mismatch");
  VectorX x(d);
  x.head(d - 1) = given;
  x(d - 1) = 0.0;
  // the conditioning dimensions contribute a per-sample constant
  const VectorX fixed = log_kernel_products(model, x, d - 1);
  const double log_norm = -std::log(double(model.samples.rows())) -
                          model.bandwidth.array().log().sum();
  const double h = model.bandwidth(d - 1);
  const auto target = model.samples.col(d - 1).array();
  VectorX log_w(cf_grid.size());
  for (Eigen::Index j = 0; j < cf_grid.size(); ++j) {
    const Eigen::ArrayXd u = (cf_grid(j) - target) / h;
    Eigen::ArrayXd terms = fixed.array();
    if (model.kernel == KernelKind::Gaussian) {
      terms += -0.5 * u.square() - kLogSqrt2Pi;
    } else {
      terms = (u.abs() <= 0.5).select(terms, -std::numeric_limits<double>::infinity());
    }
    log_w(j) = log_norm + log_sum_exp(terms.matrix());
  }
  if (!(log_w.maxCoeff() >= kLogFloor)) throw Error("conditioning point outside support");
  return Histogram1D::from_log_weights(cf_grid, log_w);
}

Histogram1D kde_conditional(const KdeModel& model, double date01, double ndvi01,
                            const VectorX& cf_grid) {
  return kde_conditional(model, Vector2(date01, ndvi01), cf_grid);
}

std::vector<double> BandwidthGrid::candidates() const {
  if (!(step > 0.0) || !(lo > 0.0) || hi < lo) throw InvalidInput("bandwidth grid: empty grid");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo + static_cast<double>(i) * step;
  return out;
}

BandwidthSearch grid_search_bandwidth(const MatrixX& data, const BandwidthGrid& grid, int folds,
                                      std::uint64_t seed, KernelKind kernel) {
  return grid_search_bandwidth(data, grid.candidates(), folds, seed, kernel);
}

BandwidthSearch grid_search_bandwidth(const MatrixX& data, const std::vector<double>& candidates,
                                      int folds, std::uint64_t seed, KernelKind kernel) {
  const auto n = data.rows();
  const auto dim = static_cast<double>(data.cols());
  if (candidates.empty()) throw InvalidInput("grid_search_bandwidth: empty grid");
  if (folds < 2 || n < folds) throw InvalidInput("grid_search_bandwidth: need N >= folds >= 2");
  for (double h : candidates) {
    if (!(h > 0.0)) throw InvalidInput("grid_search_bandwidth: bandwidths must be positive");
  }
  const auto fold = assign_folds(n, folds, seed);

  // Per fold: held-out x train distance matrix. Squared Euclidean for the
  // gaussian kernel, Chebyshev (sorted per row) for the box kernel.
  struct FoldData {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dist;
    double n_train = 0.0;
  };
  std::vector<FoldData> fd(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    auto& out = fd[static_cast<std::size_t>(f)];
    out.n_train = static_cast<double>(tr.size());
    out.dist.resize(static_cast<Eigen::Index>(te.size()), static_cast<Eigen::Index>(tr.size()));
    for (std::size_t a = 0; a < te.size(); ++a) {
      const auto diff = (data(tr, Eigen::all).rowwise() - data.row(te[a])).array();
      if (kernel == KernelKind::Gaussian) {
        out.dist.row(static_cast<Eigen::Index>(a)) = diff.square().rowwise().sum().transpose();
      } else {
        VectorX cheb = diff.abs().rowwise().maxCoeff();
        std::sort(cheb.data(), cheb.data() + cheb.size());
        out.dist.row(static_cast<Eigen::Index>(a)) = cheb.transpose();
      }
    }
  }

  BandwidthSearch result;
  result.table.resize(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    const double h = candidates[c];
    double total = 0.0;
    for (const auto& f : fd) {
      const double log_norm = -std::log(f.n_train) - dim * std::log(h);
      double fold_sum = 0.0;
      for (Eigen::Index a = 0; a < f.dist.rows(); ++a) {
        double kernel_sum;
        if (kernel == KernelKind::Gaussian) {
          kernel_sum = (f.dist.row(a).array() * (-0.5 / (h * h))).exp().sum() *
                       std::exp(-dim * kLogSqrt2Pi);
        } else {
          const auto row = f.dist.row(a);
          kernel_sum = static_cast<double>(
              std::upper_bound(row.data(), row.data() + row.size(), 0.5 * h,
                               [](double v, double e) { return v < e; }) - row.data());
        }
        const double density = std::exp(log_norm) * kernel_sum;
        fold_sum += std::log(std::max(density, kDensityFloor));
      }
      total += fold_sum / static_cast<double>(f.dist.rows());
    }
    result.table[c] = {h, total / static_cast<double>(fd.size())};
  });

  const BandwidthRow* best = &result.table.front();
  for (const auto& row : result.table) {
    if (row.score > best->score || (row.score == best->score && row.h < best->h)) best = &row;
  }
  result.best_h = best->h;
  return result;
}

nlohmann::json to_json(const KdeModel& model) {
  nlohmann::ordered_json j;
  j["scale"] = to_json(model.scale);
  j["train_fields"] = model.train_fields;
  j["kernel"] = kernel_name(model.kernel);
  j["h"] = std::vector<double>(model.bandwidth.data(), model.bandwidth.data() + model.bandwidth.size());
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < model.samples.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(model.samples.cols()));
    for (Eigen::Index d = 0; d < model.samples.cols(); ++d) r[static_cast<std::size_t>(d)] = model.samples(i, d);
    rows.push_back(r);
  }
  j["samples"] = rows;
  return j;
}

KdeModel kde_from_json(const nlohmann::json& j) {
  KdeModel m;
  m.scale = scale_from_json(j.at("scale"));
  if (j.contains("train_fields")) m.train_fields = j.at("train_fields").get<std::vector<std::string>>();
  m.kernel = parse_kernel(j.at("kernel").get<std::string>());
  const auto h = j.at("h").get<std::vector<double>>();
  m.bandwidth = Eigen::Map<const VectorX>(h.data(), static_cast<Eigen::Index>(h.size()));
  const auto& rows = j.at("samples");
  m.samples.resize(static_cast<Eigen::Index>(rows.size()), m.bandwidth.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index d = 0; d < m.bandwidth.size(); ++d) {
      m.samples(static_cast<Eigen::Index>(i), d) = rows[i].at(static_cast<std::size_t>(d)).get<double>();
    }
  }
  validate(m);
  return m;
}

}  // namespace chlorolab
