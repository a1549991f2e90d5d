#ifndef CHLOROLAB_NN_HPP
#define CHLOROLAB_NN_HPP

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "chlorolab/core.hpp"

// Small differentiable building blocks. Feature maps are stored as
// channels x (height * width) matrices with pixels in row-major order.
namespace chlorolab::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Mat<Scalar> im2col3x3(const Mat<Scalar>& x, Eigen::Index h, Eigen::Index w) {
  if (x.cols() != h * w) throw InvalidInput("feature map size mismatch");
  const Eigen::Index c = x.rows();
  Mat<Scalar> cols = Mat<Scalar>::Zero(9 * c, h * w);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ch * 9 + ky * 3 + kx;
        for (Eigen::Index y = 0; y < h; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Eigen::Index xx = 0; xx < w; ++xx) {
            const Eigen::Index sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            cols(row, y * w + xx) = x(ch, sy * w + sx);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col3x3: scatters column gradients back onto the map.
template <typename Scalar>
Mat<Scalar> col2im3x3(const Mat<Scalar>& cols, Eigen::Index channels, Eigen::Index h, Eigen::Index w) {
  Mat<Scalar> x = Mat<Scalar>::Zero(channels, h * w);
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ch * 9 + ky * 3 + kx;
        for (Eigen::Index y = 0; y < h; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Eigen::Index xx = 0; xx < w; ++xx) {
            const Eigen::Index sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            x(ch, sy * w + sx) += cols(row, y * w + xx);
          }
        }
      }
    }
  }
  return x;
}

/// 3x3 convolution with zero "same" padding.
template <typename Scalar>
struct Conv3x3 {
  Mat<Scalar> weight;  // out x (9 * in), rows ordered (in_channel, ky, kx)
  Vec<Scalar> bias;

  static Conv3x3 zeros(Eigen::Index in, Eigen::Index out) {
    return {Mat<Scalar>::Zero(out, 9 * in), Vec<Scalar>::Zero(out)};
  }
  Eigen::Index in_channels() const { return weight.cols() / 9; }
  Eigen::Index out_channels() const { return weight.rows(); }

  Mat<Scalar> forward(const Mat<Scalar>& x, Eigen::Index h, Eigen::Index w, Mat<Scalar>* cols_out) const {
    if (x.rows() != in_channels()) throw InvalidInput("convolution channel mismatch");
    Mat<Scalar> cols = im2col3x3(x, h, w);
    Mat<Scalar> y = weight * cols;
    y.colwise() += bias;
    if (cols_out) *cols_out = std::move(cols);
    return y;
  }

  /// Accumulates parameter gradients into grad and returns d(loss)/d(input).
  Mat<Scalar> backward(const Mat<Scalar>& dy, const Mat<Scalar>& cols, Eigen::Index h, Eigen::Index w,
                       Conv3x3& grad, bool want_input_grad = true) const {
    grad.weight.noalias() += dy * cols.transpose();
    grad.bias += dy.rowwise().sum();
    if (!want_input_grad) return {};
    return col2im3x3<Scalar>(weight.transpose() * dy, in_channels(), h, w);
  }

  template <typename F>
  void visit(F&& f) {
    f("weight", weight);
    f("bias", bias);
  }
};

/// H(x) = F(x) + x with F = tanh . conv . tanh . conv.
template <typename Scalar>
struct ResidualBlock {
  Conv3x3<Scalar> first;
  Conv3x3<Scalar> second;

  struct Cache {
    Mat<Scalar> cols1, t1, cols2, t2;
  };

  static ResidualBlock zeros(Eigen::Index channels) {
    return {Conv3x3<Scalar>::zeros(channels, channels), Conv3x3<Scalar>::zeros(channels, channels)};
  }

  Mat<Scalar> forward(const Mat<Scalar>& x, Eigen::Index h, Eigen::Index w, Cache* cache) const {
    if (first.in_channels() != x.rows() || second.out_channels() != x.rows()) {
      throw InvalidInput("residual block shape mismatch");
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    c.t1 = first.forward(x, h, w, &c.cols1).array().tanh().matrix();
    c.t2 = second.forward(c.t1, h, w, &c.cols2).array().tanh().matrix();
    return c.t2 + x;
  }

  Mat<Scalar> backward(const Mat<Scalar>& dy, const Cache& c, Eigen::Index h, Eigen::Index w,
                       ResidualBlock& grad) const {
    const Mat<Scalar> dc2 = (dy.array() * (Scalar(1) - c.t2.array().square())).matrix();
    const Mat<Scalar> dt1 = second.backward(dc2, c.cols2, h, w, grad.second);
    const Mat<Scalar> dc1 = (dt1.array() * (Scalar(1) - c.t1.array().square())).matrix();
    return first.backward(dc1, c.cols1, h, w, grad.first) + dy;
  }

  template <typename F>
  void visit(F&& f) {
    first.visit(f);
    second.visit(f);
  }
};

template <typename Scalar>
struct Linear {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;

  static Linear zeros(Eigen::Index in, Eigen::Index out) {
    return {Mat<Scalar>::Zero(out, in), Vec<Scalar>::Zero(out)};
  }
  Vec<Scalar> forward(const Vec<Scalar>& x) const { return weight * x + bias; }
  Vec<Scalar> backward(const Vec<Scalar>& x, const Vec<Scalar>& dy, Linear& grad) const {
    grad.weight.noalias() += dy * x.transpose();
    grad.bias += dy;
    return weight.transpose() * dy;
  }

  template <typename F>
  void visit(F&& f) {
    f("weight", weight);
    f("bias", bias);
  }
};

/// LSTM cell parameters with the four gates stacked as blocks of H rows in
/// the order input, forget, output, candidate.
template <typename Scalar>
struct LstmParams {
  Mat<Scalar> W;  // 4H x D
  Mat<Scalar> U;  // 4H x H
  Vec<Scalar> b;  // 4H

  static LstmParams zeros(Eigen::Index input, Eigen::Index hidden) {
    return {Mat<Scalar>::Zero(4 * hidden, input), Mat<Scalar>::Zero(4 * hidden, hidden),
            Vec<Scalar>::Zero(4 * hidden)};
  }
  Eigen::Index hidden() const { return U.cols(); }
  Eigen::Index input() const { return W.cols(); }

  template <typename F>
  void visit(F&& f) {
    f("W", W);
    f("U", U);
    f("b", b);
  }
};

template <typename Scalar>
struct LstmStepCache {
  Vec<Scalar> x, h_prev, c_prev, i, f, o, g, c, tanh_c;
};

template <typename Scalar>
Vec<Scalar> sigmoid(const Vec<Scalar>& z) {
  return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
}

/// One LSTM step; returns (h_t, c_t).
template <typename Scalar>
std::pair<Vec<Scalar>, Vec<Scalar>> lstm_step(const Vec<Scalar>& x, const Vec<Scalar>& h_prev,
                                              const Vec<Scalar>& c_prev, const LstmParams<Scalar>& p,
                                              LstmStepCache<Scalar>* cache = nullptr) {
  const Eigen::Index H = p.hidden();
  if (x.size() != p.input() || h_prev.size() != H || c_prev.size() != H || p.W.rows() != 4 * H ||
      p.b.size() != 4 * H) {
    throw InvalidInput("lstm shape mismatch");
  }
  const Vec<Scalar> z = p.W * x + p.U * h_prev + p.b;
  LstmStepCache<Scalar> local;
  auto& k = cache ? *cache : local;
  k.x = x;
  k.h_prev = h_prev;
  k.c_prev = c_prev;
  k.i = sigmoid<Scalar>(z.segment(0, H));
  k.f = sigmoid<Scalar>(z.segment(H, H));
  k.o = sigmoid<Scalar>(z.segment(2 * H, H));
  k.g = z.segment(3 * H, H).array().tanh().matrix();
  k.c = (k.f.array() * c_prev.array() + k.i.array() * k.g.array()).matrix();
  k.tanh_c = k.c.array().tanh().matrix();
  Vec<Scalar> h = (k.o.array() * k.tanh_c.array()).matrix();
  return {h, k.c};
}

/// Backward through one step given dL/dh_t and dL/dc_t (the latter from the
/// next step only). Returns (dx, dh_prev, dc_prev).
template <typename Scalar>
std::tuple<Vec<Scalar>, Vec<Scalar>, Vec<Scalar>> lstm_step_backward(const Vec<Scalar>& dh,
                                                                    const Vec<Scalar>& dc,
                                                                    const LstmStepCache<Scalar>& k,
                                                                    const LstmParams<Scalar>& p,
                                                                    LstmParams<Scalar>& grad) {
  const Eigen::Index H = p.hidden();
  const auto one = Scalar(1);
  const auto dc_total = (dc.array() + dh.array() * k.o.array() * (one - k.tanh_c.array().square())).eval();
  Vec<Scalar> dz(4 * H);
  dz.segment(0, H) = (dc_total * k.g.array() * k.i.array() * (one - k.i.array())).matrix();
  dz.segment(H, H) = (dc_total * k.c_prev.array() * k.f.array() * (one - k.f.array())).matrix();
  dz.segment(2 * H, H) = (dh.array() * k.tanh_c.array() * k.o.array() * (one - k.o.array())).matrix();
  dz.segment(3 * H, H) = (dc_total * k.i.array() * (one - k.g.array().square())).matrix();
  grad.W.noalias() += dz * k.x.transpose();
  grad.U.noalias() += dz * k.h_prev.transpose();
  grad.b += dz;
  Vec<Scalar> dx = p.W.transpose() * dz;
  Vec<Scalar> dh_prev = p.U.transpose() * dz;
  Vec<Scalar> dc_prev = (dc_total * k.f.array()).matrix();
  return {dx, dh_prev, dc_prev};
}

/// Bidirectional LSTM with a per-step linear head on the concatenated
/// hidden states. Input columns are timesteps.
template <typename Scalar>
struct BiLstm {
  LstmParams<Scalar> fwd;
  LstmParams<Scalar> bwd;
  Linear<Scalar> head;  // 1 x 2H

  struct Cache {
    std::vector<LstmStepCache<Scalar>> f, b;
    Mat<Scalar> hf, hb;  // H x L
  };

  static BiLstm zeros(Eigen::Index input, Eigen::Index hidden) {
    return {LstmParams<Scalar>::zeros(input, hidden), LstmParams<Scalar>::zeros(input, hidden),
            Linear<Scalar>::zeros(2 * hidden, 1)};
  }

  Vec<Scalar> forward(const Mat<Scalar>& seq, Cache* cache) const {
    const Eigen::Index L = seq.cols(), H = fwd.hidden();
    Cache local;
    Cache& c = cache ? *cache : local;
    c.f.assign(static_cast<std::size_t>(L), {});
    c.b.assign(static_cast<std::size_t>(L), {});
    c.hf.resize(H, L);
    c.hb.resize(H, L);
    Vec<Scalar> h = Vec<Scalar>::Zero(H), cell = Vec<Scalar>::Zero(H);
    for (Eigen::Index t = 0; t < L; ++t) {
      std::tie(h, cell) = lstm_step<Scalar>(seq.col(t), h, cell, fwd, &c.f[static_cast<std::size_t>(t)]);
      c.hf.col(t) = h;
    }
    h.setZero();
    cell.setZero();
    for (Eigen::Index t = L - 1; t >= 0; --t) {
      std::tie(h, cell) = lstm_step<Scalar>(seq.col(t), h, cell, bwd, &c.b[static_cast<std::size_t>(t)]);
      c.hb.col(t) = h;
    }
    Vec<Scalar> out(L);
    for (Eigen::Index t = 0; t < L; ++t) {
      Vec<Scalar> both(2 * H);
      both << c.hf.col(t), c.hb.col(t);
      out(t) = head.forward(both)(0);
    }
    return out;
  }

  /// dy holds dL/d(output_t); returns dL/d(seq).
  Mat<Scalar> backward(const Vec<Scalar>& dy, const Cache& c, BiLstm& grad) const {
    const Eigen::Index L = dy.size(), H = fwd.hidden();
    Mat<Scalar> dhf(H, L), dhb(H, L);
    for (Eigen::Index t = 0; t < L; ++t) {
      Vec<Scalar> both(2 * H);
      both << c.hf.col(t), c.hb.col(t);
      const Vec<Scalar> d = head.backward(both, Vec<Scalar>::Constant(1, dy(t)), grad.head);
      dhf.col(t) = d.head(H);
      dhb.col(t) = d.tail(H);
    }
    Mat<Scalar> dseq = Mat<Scalar>::Zero(fwd.input(), L);
    Vec<Scalar> dh = Vec<Scalar>::Zero(H), dc = Vec<Scalar>::Zero(H), dx;
    for (Eigen::Index t = L - 1; t >= 0; --t) {
      std::tie(dx, dh, dc) = lstm_step_backward<Scalar>(Vec<Scalar>(dhf.col(t) + dh), dc,
                                                        c.f[static_cast<std::size_t>(t)], fwd, grad.fwd);
      dseq.col(t) += dx;
    }
    dh.setZero();
    dc.setZero();
    for (Eigen::Index t = 0; t < L; ++t) {
      std::tie(dx, dh, dc) = lstm_step_backward<Scalar>(Vec<Scalar>(dhb.col(t) + dh), dc,
                                                        c.b[static_cast<std::size_t>(t)], bwd, grad.bwd);
      dseq.col(t) += dx;
    }
    return dseq;
  }

  template <typename F>
  void visit(F&& f) {
    fwd.visit(f);
    bwd.visit(f);
    head.visit(f);
  }
};

/// Non-overlapping mean pooling of a square patch by an integer factor.
template <typename Scalar, typename Derived>
Mat<Scalar> average_pool(const Eigen::DenseBase<Derived>& patch, Eigen::Index factor) {
  const Eigen::Index h = patch.rows() / factor, w = patch.cols() / factor;
  if (factor < 1 || h * factor != patch.rows() || w * factor != patch.cols()) {
    throw InvalidInput("pooling factor does not divide the patch");
  }
  Mat<Scalar> out(1, h * w);
  const Scalar inv = Scalar(1) / Scalar(factor * factor);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      out(0, y * w + x) = Scalar(patch.block(y * factor, x * factor, factor, factor).sum()) * inv;
    }
  }
  return out;
}

/// Depth, width and resolution multipliers alpha^phi, beta^phi, gamma^phi.
struct CompoundScaling {
  double alpha = 1.26;
  double beta = 1.26;
  double gamma = 1.26;
  double phi = 0.0;

  /// alpha * beta * gamma within slack of 2.
  bool satisfies_budget(double slack) const { return std::abs(alpha * beta * gamma - 2.0) <= slack; }
};

struct ScaleFactors {
  double depth = 1.0;
  double width = 1.0;
  double resolution = 1.0;
};

inline ScaleFactors compound_scale(const CompoundScaling& s) {
  if (!(s.alpha >= 1.0 && s.beta >= 1.0 && s.gamma >= 1.0 && s.phi >= 0.0)) {
    throw InvalidInput("compound scaling needs alpha, beta, gamma >= 1 and phi >= 0");
  }
  return {std::pow(s.alpha, s.phi), std::pow(s.beta, s.phi), std::pow(s.gamma, s.phi)};
}

/// Fills a tensor with N(0, stddev^2) draws.
template <typename Derived, typename Rng>
void fill_normal(Eigen::MatrixBase<Derived>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> z(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = typename Derived::Scalar(z(rng));
}

}  // namespace chlorolab::nn

#endif
