#ifndef SECDIFF_SECRECY_METRICS_HPP
#define SECDIFF_SECRECY_METRICS_HPP

#include "secdiff/wireless_env.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace secdiff {

/// Joint transmit design: beamformers W (M x K) and AN precoder V (M x J),
/// both in units of the total power budget.
struct Strategy {
  CMatrix W;
  CMatrix V;

  static Strategy zeros(const SystemConfig& cfg) {
    return {CMatrix::Zero(cfg.M, cfg.K), CMatrix::Zero(cfg.M, cfg.J)};
  }
};

enum class RateMode { exact, smooth };

struct RateReport {
  std::vector<double> R_user;          // K
  Eigen::MatrixXd R_eve;               // L x K
  std::vector<double> R_sec;           // K
  double R_sum = 0.0;
  RateMode mode = RateMode::exact;
};

inline double total_power(const Strategy& s) { return s.W.squaredNorm() + s.V.squaredNorm(); }

/// Scales onto the unit power ball; feasible inputs pass through untouched.
inline Strategy project_power(const Strategy& s) {
  const double p = total_power(s);
  if (p <= 1.0) return s;
  const double scale = 1.0 / std::sqrt(p);
  Strategy out{s.W * scale, s.V * scale};
  // Rounding can leave the scaled power a few ulps above one.
  while (total_power(out) > 1.0) {
    out.W *= 1.0 - 1e-15;
    out.V *= 1.0 - 1e-15;
  }
  return out;
}

/// z = [Re(u); Im(u)] with u = [w_1; ...; w_K; v_1; ...; v_J].
inline RVector strategy_to_real(const Strategy& s) {
  const Eigen::Index M = s.W.rows() > 0 ? s.W.rows() : s.V.rows();
  const Eigen::Index cols = s.W.cols() + s.V.cols();
  const Eigen::Index n = M * cols;
  RVector z(2 * n);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index m = 0; m < M; ++m) {
      const cplx v = c < s.W.cols() ? s.W(m, c) : s.V(m, c - s.W.cols());
      z(c * M + m) = v.real();
      z(n + c * M + m) = v.imag();
    }
  }
  return z;
}

inline Strategy real_to_strategy(const RVector& z, const SystemConfig& cfg) {
  const Eigen::Index n = cfg.strategy_dim();
  if (z.size() != 2 * n) throw std::invalid_argument("real_to_strategy: length mismatch");
  Strategy s = Strategy::zeros(cfg);
  for (int c = 0; c < cfg.K + cfg.J; ++c) {
    for (int m = 0; m < cfg.M; ++m) {
      const cplx v(z(c * cfg.M + m), z(n + c * cfg.M + m));
      if (c < cfg.K)
        s.W(m, c) = v;
      else
        s.V(m, c - cfg.K) = v;
    }
  }
  return s;
}

namespace detail {

/// Received-gain table for a set of receivers: gains(r, i) = h_r^H x_i over
/// all K + J transmit columns.
inline CMatrix receiver_gains(const CMatrix& H, const Strategy& s) {
  CMatrix U(s.W.rows(), s.W.cols() + s.V.cols());
  U << s.W, s.V;
  return H.conjugate() * U;
}

inline double interference_plus_noise(const CMatrix& G, Eigen::Index r, Eigen::Index k,
                                      double noise) {
  double acc = noise;
  for (Eigen::Index i = 0; i < G.cols(); ++i)
    if (i != k) acc += std::norm(G(r, i));
  return acc;
}

/// log2(1 + |g_k|^2 / (sum_{i != k} |g_i|^2 + noise)) for one gain row.
inline double rate_from_gains(const CMatrix& G, Eigen::Index r, Eigen::Index k, double noise) {
  const double signal = std::norm(G(r, k));
  return std::log2(1.0 + signal / interference_plus_noise(G, r, k, noise));
}

inline void check_index(int idx, int bound, const char* what) {
  if (idx < 0 || idx >= bound) throw std::out_of_range(std::string(what) + " index out of range");
}

/// alpha * log(sum exp(x / alpha)) evaluated with the max shifted out.
inline double log_sum_exp(const std::vector<double>& x, double alpha) {
  double mx = x.front();
  for (double v : x) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : x) acc += std::exp((v - mx) / alpha);
  return mx + alpha * std::log(acc);
}

}  // namespace detail

inline double user_rate(const ChannelSet& cs, const Strategy& s, int k, const SystemConfig& cfg) {
  detail::check_index(k, cfg.K, "user");
  const CMatrix G = detail::receiver_gains(cs.H_users.row(k), s);
  return detail::rate_from_gains(G, 0, k, cfg.noise_ratio());
}

inline double eve_rate(const ChannelSet& cs, const Strategy& s, int l, int k, const SystemConfig& cfg) {
  detail::check_index(l, cfg.L, "eavesdropper");
  detail::check_index(k, cfg.K, "user");
  const CMatrix G = detail::receiver_gains(cs.H_eves.row(l), s);
  return detail::rate_from_gains(G, 0, k, cfg.noise_ratio());
}

/// Secrecy rate before the (.)^+ clamp.  Smooth mode replaces the max over
/// eavesdroppers with alpha * LogSumExp(R / alpha).
inline double secrecy_margin(double r_user, const std::vector<double>& r_eves, RateMode mode,
                             double alpha) {
  if (r_eves.empty()) return r_user;
  if (mode == RateMode::exact) {
    double mx = r_eves.front();
    for (double v : r_eves) mx = std::max(mx, v);
    return r_user - mx;
  }
  return r_user - detail::log_sum_exp(r_eves, alpha);
}

inline RateReport sum_secrecy(const ChannelSet& cs, const Strategy& s, const SystemConfig& cfg,
                              RateMode mode) {
  const double noise = cfg.noise_ratio();
  const CMatrix Gu = detail::receiver_gains(cs.H_users, s);
  const CMatrix Ge = detail::receiver_gains(cs.H_eves, s);
  RateReport rep;
  rep.mode = mode;
  rep.R_eve.resize(cfg.L, cfg.K);
  std::vector<double> eves(cfg.L);
  for (int k = 0; k < cfg.K; ++k) {
    const double ru = detail::rate_from_gains(Gu, k, k, noise);
    for (int l = 0; l < cfg.L; ++l) {
      eves[l] = detail::rate_from_gains(Ge, l, k, noise);
      rep.R_eve(l, k) = eves[l];
    }
    const double sec = std::max(secrecy_margin(ru, eves, mode, cfg.alpha), 0.0);
    rep.R_user.push_back(ru);
    rep.R_sec.push_back(sec);
    rep.R_sum += sec;
  }
  return rep;
}

inline double secrecy_rate(const ChannelSet& cs, const Strategy& s, int k, const SystemConfig& cfg,
                           RateMode mode) {
  detail::check_index(k, cfg.K, "user");
  std::vector<double> eves;
  for (int l = 0; l < cfg.L; ++l) eves.push_back(eve_rate(cs, s, l, k, cfg));
  return std::max(secrecy_margin(user_rate(cs, s, k, cfg), eves, mode, cfg.alpha), 0.0);
}

/// Smooth-mode R_sum and its gradient with respect to the real encoding z.
/// Users whose secrecy margin is clamped contribute zero gradient.
struct SmoothObjective {
  double value = 0.0;
  RVector grad;
};

inline SmoothObjective smooth_sum_secrecy_with_grad(const ChannelSet& cs, const RVector& z,
                                                    const SystemConfig& cfg) {
  const Strategy s = real_to_strategy(z, cfg);
  const double noise = cfg.noise_ratio();
  const int cols = cfg.K + cfg.J;
  const Eigen::Index n = cfg.strategy_dim();
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  const CMatrix Gu = detail::receiver_gains(cs.H_users, s);
  const CMatrix Ge = detail::receiver_gains(cs.H_eves, s);

  // Complex gradient d/da + j d/db accumulated per transmit column.
  CMatrix gradU = CMatrix::Zero(cfg.M, cols);
  // d rate(r, k) / d x_i = (1/ln2) (1/T - [i != k]/(T - S_k)) * 2 g_ri h_r
  auto add_rate_grad = [&](const CMatrix& G, const CMatrix& H, Eigen::Index r, Eigen::Index k,
                           double weight) {
    const double rest = detail::interference_plus_noise(G, r, k, noise);
    const double total = rest + std::norm(G(r, k));
    for (int i = 0; i < cols; ++i) {
      const double coef = inv_ln2 * (1.0 / total - (i == k ? 0.0 : 1.0 / rest));
      gradU.col(i) += (weight * 2.0 * coef) * G(r, i) * H.row(r).transpose();
    }
  };

  SmoothObjective out;
  std::vector<double> eves(cfg.L), soft(cfg.L);
  for (int k = 0; k < cfg.K; ++k) {
    const double ru = detail::rate_from_gains(Gu, k, k, noise);
    for (int l = 0; l < cfg.L; ++l) eves[l] = detail::rate_from_gains(Ge, l, k, noise);
    const double margin = secrecy_margin(ru, eves, RateMode::smooth, cfg.alpha);
    if (margin <= 0.0) continue;
    out.value += margin;
    add_rate_grad(Gu, cs.H_users, k, k, 1.0);
    if (cfg.L > 0) {
      const double lse = detail::log_sum_exp(eves, cfg.alpha);
      for (int l = 0; l < cfg.L; ++l) soft[l] = std::exp((eves[l] - lse) / cfg.alpha);
      for (int l = 0; l < cfg.L; ++l) add_rate_grad(Ge, cs.H_eves, l, k, -soft[l]);
    }
  }
  out.grad.resize(2 * n);
  for (int c = 0; c < cols; ++c) {
    for (int m = 0; m < cfg.M; ++m) {
      out.grad(c * cfg.M + m) = gradU(m, c).real();
      out.grad(n + c * cfg.M + m) = gradU(m, c).imag();
    }
  }
  return out;
}

inline RVector grad_sum_secrecy(const ChannelSet& cs, const RVector& z, const SystemConfig& cfg) {
  return smooth_sum_secrecy_with_grad(cs, z, cfg).grad;
}

/// Exact-mode R_sum of a real-encoded strategy.
inline double exact_rsum(const ChannelSet& cs, const RVector& z, const SystemConfig& cfg) {
  return sum_secrecy(cs, real_to_strategy(z, cfg), cfg, RateMode::exact).R_sum;
}

}  // namespace secdiff

#endif  // SECDIFF_SECRECY_METRICS_HPP
