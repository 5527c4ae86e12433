#ifndef SECDIFF_NN_HPP
#define SECDIFF_NN_HPP

#include "secdiff/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace secdiff::nn {

using ad::Tape;
using ad::Var;

/// Ordered set of trainable leaves.  Registration order is the checkpoint
/// layout, so modules must register deterministically.
template <class T>
class ParamStore {
 public:
  Var<T> add(std::string name, RowMat<T> init) {
    Var<T> v = Var<T>::leaf(std::move(init), true);
    params_.push_back({std::move(name), v});
    return v;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  struct Entry {
    std::string name;
    Var<T> var;
  };
  std::vector<Entry>& entries() { return params_; }
  const std::vector<Entry>& entries() const { return params_; }

 private:
  std::vector<Entry> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <class T>
RowMat<T> uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double bound = 1.0 / std::sqrt(fan_in);
  RowMat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(bound * u(rng));
  return m;
}

template <class T>
struct Linear {
  Var<T> W, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
         bool zero_init = false) {
    W = ps.add(name + ".W", zero_init ? RowMat<T>::Zero(in, out) : uniform_init<T>(in, out, double(in), rng));
    b = ps.add(name + ".b", zero_init ? RowMat<T>::Zero(1, out) : uniform_init<T>(1, out, double(in), rng));
  }
  Var<T> operator()(Tape<T>& tp, const Var<T>& x) const { return tp.linear(x, W, b); }
};

template <class T>
struct Conv1d {
  Var<T> W, b;
  int k = 3;

  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, int kernel,
         Rng& rng, bool zero_init = false)
      : k(kernel) {
    const double fan = double(in) * kernel;
    W = ps.add(name + ".W", zero_init ? RowMat<T>::Zero(kernel * in, out) : uniform_init<T>(kernel * in, out, fan, rng));
    b = ps.add(name + ".b", zero_init ? RowMat<T>::Zero(1, out) : uniform_init<T>(1, out, fan, rng));
  }
  Var<T> operator()(Tape<T>& tp, const Var<T>& x, Eigen::Index S) const { return tp.conv1d(x, W, b, S, k); }
};

inline int norm_groups(Eigen::Index channels, int wanted) {
  int g = std::max(1, wanted);
  while (channels % g != 0) --g;
  return g;
}

template <class T>
struct GroupNorm {
  Var<T> gamma, beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamStore<T>& ps, const std::string& name, Eigen::Index channels, int wanted_groups)
      : groups(norm_groups(channels, wanted_groups)) {
    gamma = ps.add(name + ".gamma", RowMat<T>::Ones(1, channels));
    beta = ps.add(name + ".beta", RowMat<T>::Zero(1, channels));
  }
  Var<T> operator()(Tape<T>& tp, const Var<T>& x, Eigen::Index S) const {
    return tp.group_norm(x, gamma, beta, S, groups);
  }
};

/// Sinusoidal position code of integer steps: width `dim`, half sines and
/// half cosines over geometric frequencies.
template <class T>
RowMat<T> sinusoidal_embedding(const std::vector<int>& steps, int dim) {
  RowMat<T> out(static_cast<Eigen::Index>(steps.size()), dim);
  const int half = dim / 2;
  for (std::size_t r = 0; r < steps.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
      const double a = steps[r] * freq;
      out(r, i) = T(std::sin(a));
      out(r, half + i) = T(std::cos(a));
    }
    if (dim % 2 == 1) out(r, dim - 1) = T(0);
  }
  return out;
}

/// Adam with bias correction.
template <class T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

  void step(ParamStore<T>& ps) {
    auto& es = ps.entries();
    if (m_.empty()) {
      for (auto& e : es) {
        m_.push_back(RowMat<T>::Zero(e.var.rows(), e.var.cols()));
        v_.push_back(RowMat<T>::Zero(e.var.rows(), e.var.cols()));
      }
    }
    ++t_;
    const T c1 = T(1.0 - std::pow(b1_, double(t_)));
    const T c2 = T(1.0 - std::pow(b2_, double(t_)));
    const T b1 = T(b1_), b2 = T(b2_), lr = T(lr_), eps = T(eps_);
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (!es[i].var.has_grad()) continue;
      const RowMat<T>& g = es[i].var.grad();
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
      es[i].var.mutable_value().array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<RowMat<T>> m_, v_;
};

}  // namespace secdiff::nn

#endif  // SECDIFF_NN_HPP
