#include "chlorolab/gmm.hpp"

#include <algorithm>
#include <Eigen/Eigenvalues>
#include <limits>
#include <random>

namespace chlorolab {

namespace {

using Llt = Eigen::LLT<MatrixX>;

Llt factor(const MatrixX& cov) {
  Llt llt(cov);
  if (llt.info() != Eigen::Success) throw Error("covariance is not positive definite");
  return llt;
}

// log(phi_i) + log N(x_n | mu_i, Sigma_i) for every sample (rows) and component (cols).
MatrixX weighted_log_densities(const GmmModel& model, const MatrixX& data) {
  const auto n = data.rows();
  const auto c = static_cast<Eigen::Index>(model.components.size());
  const double d = static_cast<double>(data.cols());
  MatrixX out(n, c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const auto& comp = model.components[static_cast<std::size_t>(k)];
    const Llt llt = factor(comp.cov);
    const MatrixX centered = (data.rowwise() - comp.mean.transpose()).transpose();
    const MatrixX z = llt.matrixL().solve(centered);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double log_w = comp.weight > 0.0 ? std::log(comp.weight)
                                           : -std::numeric_limits<double>::infinity();
    out.col(k) = (-0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det +
                          z.colwise().squaredNorm().array()) + log_w).transpose();
  }
  return out;
}

// Closest covariance (in likelihood) with every eigenvalue >= eps: eigenvalues
// below the floor are raised to it, eigenvectors kept.
MatrixX floor_eigenvalues(const MatrixX& cov, double eps) {
  const MatrixX sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixX> es(sym);
  if (es.eigenvalues().minCoeff() >= eps) return sym;
  const VectorX lambda = es.eigenvalues().cwiseMax(eps);
  const MatrixX out = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

MatrixX sample_covariance(const MatrixX& data) {
  const MatrixX centered = data.rowwise() - data.colwise().mean();
  return centered.transpose() * centered / double(data.rows());
}

std::vector<Eigen::Index> kmeanspp_seeds(const MatrixX& data, int k, std::mt19937_64& rng) {
  const auto n = data.rows();
  std::vector<Eigen::Index> seeds;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  seeds.push_back(pick(rng));
  VectorX d2 = (data.rowwise() - data.row(seeds[0])).rowwise().squaredNorm();
  while (static_cast<int>(seeds.size()) < k) {
    Eigen::Index next;
    if (d2.sum() > 0.0) {
      std::discrete_distribution<Eigen::Index> dist(d2.data(), d2.data() + d2.size());
      next = dist(rng);
    } else {
      next = pick(rng);
    }
    seeds.push_back(next);
    d2 = d2.cwiseMin((data.rowwise() - data.row(next)).rowwise().squaredNorm());
  }
  return seeds;
}

}  // namespace

GmmModel fit_em(const MatrixX& data, int components, const GmmConfig& config) {
  const auto n = data.rows();
  const auto d = data.cols();
  if (n == 0 || d == 0) throw InvalidInput("fit_em: empty data");
  if (components < 1) throw InvalidInput("fit_em: need at least one component");
  if (n < components) throw InvalidInput("fit_em: fewer samples than components");

  std::mt19937_64 rng(config.seed);
  if (!(config.reg > 0.0)) throw InvalidInput("fit_em: covariance floor must be positive");
  const MatrixX pooled = floor_eigenvalues(sample_covariance(data), config.reg);

  GmmModel model;
  for (Eigen::Index idx : kmeanspp_seeds(data, components, rng)) {
    model.components.push_back({1.0 / components, data.row(idx).transpose(), pooled});
  }

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    // E-step
    MatrixX log_resp = weighted_log_densities(model, data);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(log_resp.row(i).transpose());
      ll += lse;
      log_resp.row(i).array() -= lse;
    }
    model.fit_log.push_back(ll);
    if (iter > 0 && ll - prev < config.tol * std::abs(prev)) break;
    if (iter >= config.max_iter) break;
    prev = ll;

    // M-step
    const MatrixX resp = log_resp.array().exp().matrix();
    const VectorX nk = resp.colwise().sum().transpose();
    const double total = nk.sum();
    for (int k = 0; k < components; ++k) {
      auto& comp = model.components[static_cast<std::size_t>(k)];
      comp.weight = nk(k) / total;
      if (nk(k) <= std::numeric_limits<double>::min()) continue;  // empty: keep mean and cov
      comp.mean = (resp.col(k).transpose() * data).transpose() / nk(k);
      const MatrixX centered = data.rowwise() - comp.mean.transpose();
      const MatrixX cov = centered.transpose() * resp.col(k).asDiagonal() * centered / nk(k);
      comp.cov = floor_eigenvalues(cov, config.reg);
    }
  }
  return model;
}

double gmm_log_pdf(const GmmModel& model, const Eigen::Ref<const VectorX>& x) {
  MatrixX row = x.transpose();
  return log_sum_exp(weighted_log_densities(model, row).row(0).transpose());
}

double gmm_pdf(const GmmModel& model, const Eigen::Ref<const VectorX>& x) {
  return std::exp(gmm_log_pdf(model, x));
}

VectorX gmm_log_pdf_rows(const GmmModel& model, const MatrixX& points) {
  const MatrixX lw = weighted_log_densities(model, points);
  VectorX out(lw.rows());
  for (Eigen::Index i = 0; i < lw.rows(); ++i) out(i) = log_sum_exp(lw.row(i).transpose());
  return out;
}

double log_likelihood(const GmmModel& model, const MatrixX& data) {
  return gmm_log_pdf_rows(model, data).sum();
}

int parameter_count(int components, int dim) {
  return (components - 1) + components * dim + components * dim * (dim + 1) / 2;
}

double bic_score(double params, double n, double ll) { return params * std::log(n) - 2.0 * ll; }
double aic_score(double params, double ll) { return 2.0 * params - 2.0 * ll; }

double bic(const GmmModel& model, const MatrixX& data) {
  const int k = parameter_count(static_cast<int>(model.components.size()),
                                static_cast<int>(data.cols()));
  return bic_score(k, static_cast<double>(data.rows()), log_likelihood(model, data));
}

double aic(const GmmModel& model, const MatrixX& data) {
  const int k = parameter_count(static_cast<int>(model.components.size()),
                                static_cast<int>(data.cols()));
  return aic_score(k, log_likelihood(model, data));
}

ComponentSelection select_components(const MatrixX& data, const std::vector<int>& candidates,
                                     const GmmConfig& config) {
  if (candidates.empty()) throw InvalidInput("select_components: no candidates");
  ComponentSelection sel;
  sel.table.resize(candidates.size());
  sel.models.resize(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) {
    GmmConfig cfg = config;
    cfg.seed = mix64(config.seed ^ static_cast<std::uint64_t>(candidates[i]));
    sel.models[i] = fit_em(data, candidates[i], cfg);
    sel.table[i] = {candidates[i], bic(sel.models[i], data), aic(sel.models[i], data), 0.0};
  });

  auto normalized = [&](auto member) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : sel.table) {
      lo = std::min(lo, r.*member);
      hi = std::max(hi, r.*member);
    }
    std::vector<double> out;
    for (const auto& r : sel.table) out.push_back(hi > lo ? (r.*member - lo) / (hi - lo) : 0.0);
    return out;
  };
  const auto nb = normalized(&SelectionRow::bic);
  const auto na = normalized(&SelectionRow::aic);
  std::size_t best = 0;
  for (std::size_t i = 0; i < sel.table.size(); ++i) {
    sel.table[i].score = 0.5 * (nb[i] + na[i]);
    const auto& b = sel.table[best];
    if (sel.table[i].score < b.score ||
        (sel.table[i].score == b.score && sel.table[i].components < b.components)) {
      best = i;
    }
  }
  sel.best = sel.table[best].components;
  return sel;
}

Histogram1D gmm_conditional(const GmmModel& model, const Eigen::Ref<const VectorX>& given,
                            const VectorX& cf_grid) {
  const auto d = model.dim();
  const auto a = d - 1;  // conditioning dimensions
  if (given.size() != a) throw InvalidInput("gmm_conditional: conditioning dimension mismatch");
  const auto c = model.components.size();
  VectorX log_marginal(static_cast<Eigen::Index>(c));
  VectorX cond_mean(static_cast<Eigen::Index>(c));
  VectorX cond_var(static_cast<Eigen::Index>(c));
  for (std::size_t k = 0; k < c; ++k) {
    const auto& comp = model.components[k];
    const auto i = static_cast<Eigen::Index>(k);
    const double log_w = comp.weight > 0.0 ? std::log(comp.weight)
                                           : -std::numeric_limits<double>::infinity();
    if (a == 0) {
      log_marginal(i) = log_w;
      cond_mean(i) = comp.mean(0);
      cond_var(i) = comp.cov(0, 0);
      continue;
    }
    const MatrixX saa = comp.cov.topLeftCorner(a, a);
    const VectorX sat = comp.cov.topRightCorner(a, 1);
    const Llt llt = factor(saa);
    log_marginal(i) = log_w + log_gaussian_density(given, comp.mean.head(a), llt);
    const VectorX gain = llt.solve(sat);
    cond_mean(i) = comp.mean(a) + gain.dot(given - comp.mean.head(a));
    cond_var(i) = std::max(comp.cov(a, a) - sat.dot(gain), std::numeric_limits<double>::min());
  }
  if (log_marginal.maxCoeff() < std::log(1e-300)) {
    throw Error("conditioning point outside support");
  }
  VectorX log_w(cf_grid.size());
  VectorX terms(static_cast<Eigen::Index>(c));
  for (Eigen::Index j = 0; j < cf_grid.size(); ++j) {
    for (std::size_t k = 0; k < c; ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      const double z = cf_grid(j) - cond_mean(i);
      terms(i) = log_marginal(i) - 0.5 * (std::log(2.0 * std::numbers::pi * cond_var(i)) +
                                          z * z / cond_var(i));
    }
    log_w(j) = log_sum_exp(terms);
  }
  return Histogram1D::from_log_weights(cf_grid, log_w);
}

Histogram1D gmm_conditional(const GmmModel& model, double date01, double ndvi01,
                            const VectorX& cf_grid) {
  return gmm_conditional(model, Vector2(date01, ndvi01), cf_grid);
}

nlohmann::json to_json(const GmmModel& model) {
  nlohmann::ordered_json j;
  j["scale"] = to_json(model.scale);
  j["train_fields"] = model.train_fields;
  auto comps = nlohmann::ordered_json::array();
  for (const auto& c : model.components) {
    nlohmann::ordered_json cj;
    cj["weight"] = c.weight;
    cj["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < c.cov.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(c.cov.cols()));
      for (Eigen::Index k = 0; k < c.cov.cols(); ++k) row[static_cast<std::size_t>(k)] = c.cov(r, k);
      rows.push_back(row);
    }
    cj["cov"] = rows;
    comps.push_back(cj);
  }
  j["components"] = comps;
  j["fit_log"] = model.fit_log;
  return j;
}

GmmModel gmm_from_json(const nlohmann::json& j) {
  GmmModel m;
  m.scale = scale_from_json(j.at("scale"));
  if (j.contains("train_fields")) m.train_fields = j.at("train_fields").get<std::vector<std::string>>();
  for (const auto& cj : j.at("components")) {
    GaussianComponent c;
    c.weight = cj.at("weight").get<double>();
    const auto mean = cj.at("mean").get<std::vector<double>>();
    c.mean = Eigen::Map<const VectorX>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const auto d = c.mean.size();
    c.cov.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index k = 0; k < d; ++k) {
        c.cov(r, k) = cj.at("cov").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(k)).get<double>();
      }
    }
    m.components.push_back(std::move(c));
  }
  m.fit_log = j.at("fit_log").get<std::vector<double>>();
  if (m.components.empty()) throw InvalidInput("gmm model has no components");
  return m;
}

}  // namespace chlorolab
