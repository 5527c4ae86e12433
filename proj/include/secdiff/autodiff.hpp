#ifndef SECDIFF_AUTODIFF_HPP
#define SECDIFF_AUTODIFF_HPP

// Reverse-mode automatic differentiation over row-major matrices.
//
// Activations are 2-D: a batch of B sequences of length S with C channels is
// stored as a (B*S) x C matrix, so linear maps and 1-D convolutions become
// plain GEMMs.  A Tape records one closure per op; backward() replays them
// in reverse.  Leaves created outside any tape (parameters) accumulate
// gradients until cleared.

#include "secdiff/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace secdiff::ad {

template <class T>
struct Node {
  RowMat<T> value;
  RowMat<T> grad;
  bool needs_grad = false;

  RowMat<T>& grad_buffer() {
    if (grad.size() == 0) grad = RowMat<T>::Zero(value.rows(), value.cols());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(RowMat<T> v, bool needs_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->needs_grad = needs_grad;
    return Var(std::move(n));
  }

  const RowMat<T>& value() const { return node_->value; }
  RowMat<T>& mutable_value() { return node_->value; }
  const RowMat<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool needs_grad() const { return node_ && node_->needs_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Per-element source index for Tape::gather; -1 produces a zero.
using IndexMap = std::vector<Eigen::Index>;

template <class T>
class Tape {
 public:
  using Mat = RowMat<T>;
  using V = Var<T>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  V constant(Mat v) const { return V::leaf(std::move(v), false); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and runs all closures backwards.
  void backward(const V& out) {
    if (out.rows() != 1 || out.cols() != 1)
      throw std::invalid_argument("backward: output must be a scalar");
    if (!out.needs_grad()) return;
    out.node()->grad_buffer().setConstant(T(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  // ---- arithmetic -------------------------------------------------------

  V matmul(const V& a, const V& b) {
    V out = make(a.value() * b.value(), {a, b});
    record(out, [a, b, o = out.shared()] {
      if (a.needs_grad()) a.node()->grad_buffer().noalias() += o->grad * b.value().transpose();
      if (b.needs_grad()) b.node()->grad_buffer().noalias() += a.value().transpose() * o->grad;
    });
    return out;
  }

  /// x W + b with b a 1 x out row (or empty for no bias).
  V linear(const V& x, const V& W, const V& b) {
    Mat y = x.value() * W.value();
    if (b) y.rowwise() += b.value().row(0);
    V out = make(std::move(y), {x, W, b});
    record(out, [x, W, b, o = out.shared()] {
      if (x.needs_grad()) x.node()->grad_buffer().noalias() += o->grad * W.value().transpose();
      if (W.needs_grad()) W.node()->grad_buffer().noalias() += x.value().transpose() * o->grad;
      if (b && b.needs_grad()) b.node()->grad_buffer() += o->grad.colwise().sum();
    });
    return out;
  }

  V add(const V& a, const V& b) { return lincomb(a, T(1), b, T(1)); }
  V sub(const V& a, const V& b) { return lincomb(a, T(1), b, T(-1)); }
  V scale(const V& a, T s) {
    V out = make(a.value() * s, {a});
    record(out, [a, s, o = out.shared()] {
      if (a.needs_grad()) a.node()->grad_buffer() += o->grad * s;
    });
    return out;
  }

  /// ca * a + cb * b.
  V lincomb(const V& a, T ca, const V& b, T cb) {
    check_same(a, b, "lincomb");
    V out = make(ca * a.value() + cb * b.value(), {a, b});
    record(out, [a, b, ca, cb, o = out.shared()] {
      if (a.needs_grad()) a.node()->grad_buffer() += ca * o->grad;
      if (b.needs_grad()) b.node()->grad_buffer() += cb * o->grad;
    });
    return out;
  }

  /// x (B*S x C) plus e (B x C) broadcast over the S rows of each sample.
  V add_per_sample(const V& x, const V& e, Eigen::Index S) {
    const Eigen::Index B = e.rows();
    if (x.rows() != B * S || x.cols() != e.cols())
      throw std::invalid_argument("add_per_sample: shape mismatch");
    Mat y = x.value();
    for (Eigen::Index b = 0; b < B; ++b) y.middleRows(b * S, S).rowwise() += e.value().row(b);
    V out = make(std::move(y), {x, e});
    record(out, [x, e, S, B, o = out.shared()] {
      if (x.needs_grad()) x.node()->grad_buffer() += o->grad;
      if (e.needs_grad()) {
        auto& g = e.node()->grad_buffer();
        for (Eigen::Index b = 0; b < B; ++b) g.row(b) += o->grad.middleRows(b * S, S).colwise().sum();
      }
    });
    return out;
  }

  /// x * scale + shift with constant per-column scale and shift.
  V affine_cols(const V& x, const Eigen::Matrix<T, 1, Eigen::Dynamic>& scl,
                const Eigen::Matrix<T, 1, Eigen::Dynamic>& shift) {
    Mat y = x.value();
    y.array().rowwise() *= scl.array();
    y.rowwise() += shift;
    V out = make(std::move(y), {x});
    record(out, [x, scl, o = out.shared()] {
      if (x.needs_grad()) {
        Mat g = o->grad;
        g.array().rowwise() *= scl.array();
        x.node()->grad_buffer() += g;
      }
    });
    return out;
  }

  V silu(const V& x) {
    const Mat sig = (T(1) + (-x.value().array()).exp()).inverse().matrix();
    V out = make((x.value().array() * sig.array()).matrix(), {x});
    record(out, [x, sig, o = out.shared()] {
      if (x.needs_grad())
        x.node()->grad_buffer().array() +=
            o->grad.array() * sig.array() * (T(1) + x.value().array() * (T(1) - sig.array()));
    });
    return out;
  }

  // ---- shape --------------------------------------------------------------

  /// Reinterprets the row-major storage with a new shape.
  V reshape(const V& x, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != x.value().size()) throw std::invalid_argument("reshape: size mismatch");
    Mat y = Eigen::Map<const Mat>(x.value().data(), rows, cols);
    V out = make(std::move(y), {x});
    record(out, [x, o = out.shared()] {
      if (x.needs_grad())
        x.node()->grad_buffer() += Eigen::Map<const Mat>(o->grad.data(), x.rows(), x.cols());
    });
    return out;
  }

  V concat_cols(const V& a, const V& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Mat y(a.rows(), a.cols() + b.cols());
    y << a.value(), b.value();
    V out = make(std::move(y), {a, b});
    record(out, [a, b, o = out.shared()] {
      if (a.needs_grad()) a.node()->grad_buffer() += o->grad.leftCols(a.cols());
      if (b.needs_grad()) b.node()->grad_buffer() += o->grad.rightCols(b.cols());
    });
    return out;
  }

  /// out.data()[i] = x.data()[map[i]] (or 0 for map[i] < 0).
  V gather(const V& x, Eigen::Index rows, Eigen::Index cols, IndexMap map) {
    if (static_cast<Eigen::Index>(map.size()) != rows * cols)
      throw std::invalid_argument("gather: map size mismatch");
    Mat y(rows, cols);
    const T* src = x.value().data();
    for (std::size_t i = 0; i < map.size(); ++i) y.data()[i] = map[i] >= 0 ? src[map[i]] : T(0);
    V out = make(std::move(y), {x});
    record(out, [x, map = std::move(map), o = out.shared()] {
      if (!x.needs_grad()) return;
      T* dst = x.node()->grad_buffer().data();
      for (std::size_t i = 0; i < map.size(); ++i)
        if (map[i] >= 0) dst[map[i]] += o->grad.data()[i];
    });
    return out;
  }

  // ---- layers ---------------------------------------------------------------

  /// Same-length 1-D convolution with zero padding.  x is (B*S x Cin),
  /// W is (k*Cin x Cout) with tap-major rows.
  V conv1d(const V& x, const V& W, const V& b, Eigen::Index S, int k) {
    const Eigen::Index Cin = x.cols();
    const Eigen::Index B = x.rows() / S;
    if (x.rows() != B * S || W.rows() != k * Cin) throw std::invalid_argument("conv1d: shape mismatch");
    const int pad = (k - 1) / 2;
    Mat col = Mat::Zero(B * S, k * Cin);
    for_each_tap(B, S, k, pad, [&](Eigen::Index dst, Eigen::Index src, Eigen::Index n, int tap) {
      col.block(dst, tap * Cin, n, Cin) = x.value().middleRows(src, n);
    });
    Mat y = col * W.value();
    if (b) y.rowwise() += b.value().row(0);
    V out = make(std::move(y), {x, W, b});
    record(out, [x, W, b, col = std::move(col), S, k, B, pad, Cin, o = out.shared()] {
      if (W.needs_grad()) W.node()->grad_buffer().noalias() += col.transpose() * o->grad;
      if (b && b.needs_grad()) b.node()->grad_buffer() += o->grad.colwise().sum();
      if (x.needs_grad()) {
        const Mat dcol = o->grad * W.value().transpose();
        auto& g = x.node()->grad_buffer();
        for_each_tap(B, S, k, pad, [&](Eigen::Index dst, Eigen::Index src, Eigen::Index n, int tap) {
          g.middleRows(src, n) += dcol.block(dst, tap * Cin, n, Cin);
        });
      }
    });
    return out;
  }

  /// Group normalization over (positions, channels-in-group) per sample.
  V group_norm(const V& x, const V& gamma, const V& beta, Eigen::Index S, int groups,
               T eps = T(1e-5)) {
    const Eigen::Index C = x.cols();
    const Eigen::Index B = x.rows() / S;
    if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const Eigen::Index cg = C / groups;
    const T count = T(S * cg);
    Mat xhat(x.rows(), C);
    std::vector<T> rstd(B * groups);
    for (Eigen::Index bb = 0; bb < B; ++bb) {
      for (int g = 0; g < groups; ++g) {
        auto blk = x.value().block(bb * S, g * cg, S, cg);
        const T mean = blk.sum() / count;
        const T var = (blk.array() - mean).square().sum() / count;
        const T r = T(1) / std::sqrt(var + eps);
        rstd[bb * groups + g] = r;
        xhat.block(bb * S, g * cg, S, cg) = ((blk.array() - mean) * r).matrix();
      }
    }
    Mat y = xhat;
    y.array().rowwise() *= gamma.value().row(0).array();
    y.rowwise() += beta.value().row(0);
    V out = make(std::move(y), {x, gamma, beta});
    record(out, [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), S, B, groups, cg,
                  count, o = out.shared()] {
      const Mat& dy = o->grad;
      if (gamma.needs_grad())
        gamma.node()->grad_buffer() += (dy.array() * xhat.array()).matrix().colwise().sum();
      if (beta.needs_grad()) beta.node()->grad_buffer() += dy.colwise().sum();
      if (!x.needs_grad()) return;
      Mat dxhat = dy;
      dxhat.array().rowwise() *= gamma.value().row(0).array();
      auto& gx = x.node()->grad_buffer();
      for (Eigen::Index bb = 0; bb < B; ++bb) {
        for (int g = 0; g < groups; ++g) {
          auto d = dxhat.block(bb * S, g * cg, S, cg).array();
          auto xh = xhat.block(bb * S, g * cg, S, cg).array();
          const T sd = d.sum();
          const T sdx = (d * xh).sum();
          gx.block(bb * S, g * cg, S, cg).array() +=
              (rstd[bb * groups + g] / count) * (count * d - sd - xh * sdx);
        }
      }
    });
    return out;
  }

  /// Multi-head scaled dot-product attention.  q is (B*S x D); k and v are
  /// (B*N x D); every query of sample b attends to the N keys of sample b.
  V attention(const V& q, const V& k, const V& v, Eigen::Index S, Eigen::Index N, int heads) {
    const Eigen::Index D = q.cols();
    const Eigen::Index B = q.rows() / S;
    if (D % heads != 0 || k.rows() != B * N || v.rows() != B * N || k.cols() != D || v.cols() != D)
      throw std::invalid_argument("attention: shape mismatch");
    const Eigen::Index dh = D / heads;
    const T scl = T(1) / std::sqrt(T(dh));
    Mat y(q.rows(), D);
    std::vector<Mat> probs(B * heads);
    for (Eigen::Index bb = 0; bb < B; ++bb) {
      for (int h = 0; h < heads; ++h) {
        const auto Q = q.value().block(bb * S, h * dh, S, dh);
        const auto Kb = k.value().block(bb * N, h * dh, N, dh);
        const auto Vb = v.value().block(bb * N, h * dh, N, dh);
        Mat A = (Q * Kb.transpose()) * scl;
        for (Eigen::Index r = 0; r < S; ++r) {
          const T mx = A.row(r).maxCoeff();
          A.row(r) = (A.row(r).array() - mx).exp().matrix();
          A.row(r) /= A.row(r).sum();
        }
        y.block(bb * S, h * dh, S, dh).noalias() = A * Vb;
        probs[bb * heads + h] = std::move(A);
      }
    }
    V out = make(std::move(y), {q, k, v});
    record(out, [q, k, v, probs = std::move(probs), S, N, B, heads, dh, scl, o = out.shared()] {
      for (Eigen::Index bb = 0; bb < B; ++bb) {
        for (int h = 0; h < heads; ++h) {
          const Mat& A = probs[bb * heads + h];
          const auto dO = o->grad.block(bb * S, h * dh, S, dh);
          const auto Vb = v.value().block(bb * N, h * dh, N, dh);
          if (v.needs_grad()) v.node()->grad_buffer().block(bb * N, h * dh, N, dh).noalias() += A.transpose() * dO;
          if (!q.needs_grad() && !k.needs_grad()) continue;
          const Mat dA = dO * Vb.transpose();
          Mat dS = A.cwiseProduct(dA);
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dS.rowwise().sum();
          dS -= (A.array().colwise() * rs.array()).matrix();
          dS *= scl;
          if (q.needs_grad())
            q.node()->grad_buffer().block(bb * S, h * dh, S, dh).noalias() +=
                dS * k.value().block(bb * N, h * dh, N, dh);
          if (k.needs_grad())
            k.node()->grad_buffer().block(bb * N, h * dh, N, dh).noalias() +=
                dS.transpose() * q.value().block(bb * S, h * dh, S, dh);
        }
      }
    });
    return out;
  }

  // ---- reductions -----------------------------------------------------------

  /// mean over rows of the squared row distance to a constant target.
  V mean_row_sq_error(const V& pred, const Mat& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
      throw std::invalid_argument("mean_row_sq_error: shape mismatch");
    Mat diff = pred.value() - target;
    const T n = T(pred.rows());
    Mat y(1, 1);
    y(0, 0) = diff.squaredNorm() / n;
    V out = make(std::move(y), {pred});
    record(out, [pred, diff = std::move(diff), n, o = out.shared()] {
      if (pred.needs_grad()) pred.node()->grad_buffer() += (T(2) * o->grad(0, 0) / n) * diff;
    });
    return out;
  }

  V mean_all(const V& x) {
    const T n = T(x.value().size());
    Mat y(1, 1);
    y(0, 0) = x.value().sum() / n;
    V out = make(std::move(y), {x});
    record(out, [x, n, o = out.shared()] {
      if (x.needs_grad()) x.node()->grad_buffer().array() += o->grad(0, 0) / n;
    });
    return out;
  }

  /// Applies a scalar function with known gradient to every row: f(row)
  /// returns (value, d value / d row).  Output is (rows x 1).
  using RowFn = std::function<std::pair<T, Eigen::Matrix<T, 1, Eigen::Dynamic>>(
      Eigen::Index, const Eigen::Matrix<T, 1, Eigen::Dynamic>&)>;
  V rowwise(const V& x, const RowFn& f) {
    Mat y(x.rows(), 1);
    Mat g(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      auto [val, grad] = f(r, x.value().row(r));
      y(r, 0) = val;
      g.row(r) = grad;
    }
    V out = make(std::move(y), {x});
    record(out, [x, g = std::move(g), o = out.shared()] {
      if (!x.needs_grad()) return;
      x.node()->grad_buffer() += (g.array().colwise() * o->grad.col(0).array()).matrix();
    });
    return out;
  }

 private:
  V make(Mat value, std::initializer_list<V> inputs) const {
    bool ng = false;
    if (record_)
      for (const V& in : inputs) ng = ng || in.needs_grad();
    return V::leaf(std::move(value), ng);
  }

  template <class F>
  void record(const V& out, F&& f) {
    if (out.needs_grad()) ops_.emplace_back(std::forward<F>(f));
  }

  static void check_same(const V& a, const V& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  // Calls f(dst_row, src_row, count, tap) for every contiguous run of rows
  // that tap `tap` copies within each sample.
  template <class F>
  static void for_each_tap(Eigen::Index B, Eigen::Index S, int k, int pad, F&& f) {
    for (Eigen::Index bb = 0; bb < B; ++bb) {
      for (int tap = 0; tap < k; ++tap) {
        const Eigen::Index off = tap - pad;
        const Eigen::Index s0 = std::max<Eigen::Index>(0, -off);
        const Eigen::Index s1 = std::min<Eigen::Index>(S, S - off);
        if (s1 > s0) f(bb * S + s0, bb * S + s0 + off, s1 - s0, tap);
      }
    }
  }

  bool record_;
  std::vector<std::function<void()>> ops_;
};

}  // namespace secdiff::ad

#endif  // SECDIFF_AUTODIFF_HPP
