#ifndef SECDIFF_BASELINES_HPP
#define SECDIFF_BASELINES_HPP

#include "secdiff/secrecy_metrics.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace secdiff {

/// Maximum-ratio transmission with an equal 1/K power split and no AN.
inline Strategy mrt(const ChannelSet& cs, const SystemConfig& cfg) {
  if (cfg.K < 1) throw std::invalid_argument("mrt: K must be >= 1");
  Strategy s = Strategy::zeros(cfg);
  const double share = std::sqrt(1.0 / cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    const CVector h = cs.H_users.row(k).transpose();
    const double nrm = h.norm();
    if (nrm > 0.0) s.W.col(k) = h * (share / nrm);
  }
  return s;
}

/// Orthonormal basis of {v : h_k^H v = 0 for all users}; empty when K >= M.
inline CMatrix user_null_space(const ChannelSet& cs) {
  const CMatrix Hc = cs.H_users.conjugate();  // rows h_k^H
  const Eigen::Index M = Hc.cols();
  const Eigen::Index K = Hc.rows();
  if (K >= M) return CMatrix(M, 0);
  Eigen::JacobiSVD<CMatrix> svd(Hc, Eigen::ComputeFullV);
  return svd.matrixV().rightCols(M - K);
}

/// Regularized zero-forcing data beams carrying a fraction rho of the power,
/// with the rest spread evenly over J orthonormal null-space AN directions.
/// Without room for J null-space streams all power goes to data.
inline Strategy rzf_ns(const ChannelSet& cs, const SystemConfig& cfg, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rzf_ns: rho must be in [0, 1]");
  Strategy s = Strategy::zeros(cfg);
  const CMatrix Hc = cs.H_users.conjugate();
  const double kappa = cfg.K * cfg.noise_ratio();
  const bool has_null = cfg.J > 0 && cfg.J <= cfg.M - cfg.K;
  if (!has_null) rho = 1.0;

  const CMatrix gram = Hc * Hc.adjoint() + kappa * CMatrix::Identity(cfg.K, cfg.K);
  CMatrix W = Hc.adjoint() * gram.ldlt().solve(CMatrix::Identity(cfg.K, cfg.K));
  const double wn = W.squaredNorm();
  if (wn > 0.0) s.W = W * std::sqrt(rho / wn);

  if (has_null && rho < 1.0) {
    const CMatrix null = user_null_space(cs);
    s.V = null.leftCols(cfg.J) * std::sqrt((1.0 - rho) / cfg.J);
  }
  return project_power(s);
}

inline constexpr std::array<double, 5> kRzfRhoGrid{0.5, 0.6, 0.7, 0.8, 0.9};

/// RZF-NS with the data/AN split picked per instance from kRzfRhoGrid by
/// exact-mode R_sum.
inline Strategy rzf_ns_best(const ChannelSet& cs, const SystemConfig& cfg) {
  Strategy best;
  double best_r = -1.0;
  for (double rho : kRzfRhoGrid) {
    Strategy s = rzf_ns(cs, cfg, rho);
    const double r = sum_secrecy(cs, s, cfg, RateMode::exact).R_sum;
    if (r > best_r) {
      best_r = r;
      best = std::move(s);
    }
  }
  return best;
}

enum class OracleInit { zero, mrt_plus_noise, random };

/// Projected-ascent settings.  The update rule is Adam on the smooth R_sum
/// with a cosine-decayed step from lr_start to lr_end, followed by
/// projection onto the unit power ball.  With warm_start the first restart
/// begins at the best RZF-NS point instead of `init`.
struct OracleOptions {
  int restarts = 8;
  int max_iters = 500;
  std::string step_rule = "adam-cosine";
  double tol = 1e-6;
  OracleInit init = OracleInit::mrt_plus_noise;
  double lr_start = 1e-2;
  double lr_end = 1e-5;
  double init_noise = 0.3;
  bool warm_start = true;

  void validate() const {
    if (restarts < 1) throw config_error("oracle: restarts must be >= 1");
    if (max_iters < 0) throw config_error("oracle: max_iters must be >= 0");
    if (!(tol > 0.0)) throw config_error("oracle: tol must be > 0");
    if (step_rule != "adam-cosine") throw config_error("oracle: unknown step rule " + step_rule);
  }
};

inline std::string to_string(OracleInit i) {
  switch (i) {
    case OracleInit::zero: return "zero";
    case OracleInit::mrt_plus_noise: return "mrt_plus_noise";
    case OracleInit::random: return "random";
  }
  return "?";
}

inline OracleInit oracle_init_from_string(const std::string& s) {
  if (s == "zero") return OracleInit::zero;
  if (s == "mrt_plus_noise") return OracleInit::mrt_plus_noise;
  if (s == "random") return OracleInit::random;
  throw config_error("unknown oracle init: " + s);
}

inline void to_json(nlohmann::json& j, const OracleOptions& o) {
  j = nlohmann::json{{"restarts", o.restarts}, {"max_iters", o.max_iters}, {"step_rule", o.step_rule},
                     {"tol", o.tol},           {"init", to_string(o.init)}, {"lr_start", o.lr_start},
                     {"lr_end", o.lr_end},     {"init_noise", o.init_noise}, {"warm_start", o.warm_start}};
}

inline void from_json(const nlohmann::json& j, OracleOptions& o) {
  const OracleOptions d;
  o.restarts = j.value("restarts", d.restarts);
  o.max_iters = j.value("max_iters", d.max_iters);
  o.step_rule = j.value("step_rule", d.step_rule);
  o.tol = j.value("tol", d.tol);
  o.init = oracle_init_from_string(j.value("init", to_string(d.init)));
  o.lr_start = j.value("lr_start", d.lr_start);
  o.lr_end = j.value("lr_end", d.lr_end);
  o.init_noise = j.value("init_noise", d.init_noise);
  o.warm_start = j.value("warm_start", d.warm_start);
}

struct OracleResult {
  Strategy strategy;
  double rsum = 0.0;  // exact mode
  int iterations = 0;
};

namespace detail {

inline RVector project_ball(RVector z) {
  const double p = z.squaredNorm();
  if (p > 1.0) z /= std::sqrt(p);
  return z;
}

inline RVector oracle_start(const ChannelSet& cs, const SystemConfig& cfg, const OracleOptions& opts,
                            Rng& rng) {
  const Eigen::Index d = cfg.real_strategy_dim();
  RVector z = RVector::Zero(d);
  if (opts.init == OracleInit::zero) return z;
  if (opts.init == OracleInit::mrt_plus_noise) z = strategy_to_real(mrt(cs, cfg));
  const double sd = opts.init == OracleInit::random ? 1.0 / std::sqrt(double(d)) : opts.init_noise / std::sqrt(double(d));
  for (Eigen::Index i = 0; i < d; ++i) z(i) += sd * normal(rng);
  return project_ball(z);
}

}  // namespace detail

/// Maximizes the smooth sum-secrecy surrogate over the unit power ball by
/// projected Adam ascent from several starts.  Returns the best strategy by
/// exact R_sum, never worse than MRT or RZF-NS(0.5) on the same instance.
inline OracleResult oracle_optimize(const ChannelSet& cs, const SystemConfig& cfg,
                                    const OracleOptions& opts, Rng& rng) {
  opts.validate();
  OracleResult best;
  best.rsum = -1.0;
  auto consider = [&](const Strategy& s, int iters) {
    const double r = sum_secrecy(cs, s, cfg, RateMode::exact).R_sum;
    if (r > best.rsum) best = {s, r, iters};
  };

  const double b1 = 0.9, b2 = 0.999, eps = 1e-12;
  for (int rs = 0; rs < opts.restarts; ++rs) {
    RVector z = rs == 0 && opts.warm_start ? strategy_to_real(rzf_ns_best(cs, cfg))
                                           : detail::oracle_start(cs, cfg, opts, rng);
    RVector m = RVector::Zero(z.size()), v = RVector::Zero(z.size());
    RVector best_z = z;
    double best_obj = -1.0;
    int it = 0;
    for (; it < opts.max_iters; ++it) {
      const SmoothObjective obj = smooth_sum_secrecy_with_grad(cs, z, cfg);
      if (obj.value > best_obj) {
        best_obj = obj.value;
        best_z = z;
      }
      const double frac = opts.max_iters > 1 ? double(it) / (opts.max_iters - 1) : 1.0;
      const double lr =
          opts.lr_end + 0.5 * (opts.lr_start - opts.lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
      // On the sphere the outward radial part is cancelled by the projection.
      // Dropping it before the diagonal preconditioner keeps the fixed point
      // at a zero tangent gradient.
      RVector g = obj.grad;
      const double zz = z.squaredNorm();
      if (zz >= 1.0 - 1e-12 && g.dot(z) > 0.0) g -= (g.dot(z) / zz) * z;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
      const RVector step = lr * (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
      const RVector next = detail::project_ball(z + step);
      const double moved = (next - z).norm();
      z = next;
      if (moved < opts.tol) break;
    }
    if (smooth_sum_secrecy_with_grad(cs, z, cfg).value > best_obj) best_z = z;
    consider(real_to_strategy(best_z, cfg), it);
  }
  consider(mrt(cs, cfg), 0);
  consider(rzf_ns(cs, cfg, 0.5), 0);
  return best;
}

}  // namespace secdiff

#endif  // SECDIFF_BASELINES_HPP
