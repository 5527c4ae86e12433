#ifndef SECDIFF_DIFFUSION_HPP
#define SECDIFF_DIFFUSION_HPP

#include "secdiff/common.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace secdiff {

/// Linear variance schedule with 1-based steps; alpha_bar(0) = 1.
struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0, beta_max = 0.0;
  std::vector<double> beta, alpha, alpha_bar_;

  double b(int t) const { return beta.at(check(t) - 1); }
  double a(int t) const { return alpha.at(check(t) - 1); }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar_.at(check(t) - 1);
  }

  int check(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("schedule step " + std::to_string(t) + " outside [1, T]");
    return t;
  }
};

inline NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * double(t - 1) / double(T - 1);
    s.beta.push_back(beta);
    s.alpha.push_back(1.0 - beta);
    prod *= 1.0 - beta;
    s.alpha_bar_.push_back(prod);
  }
  return s;
}

inline void to_json(nlohmann::json& j, const NoiseSchedule& s) {
  j = nlohmann::json{{"T", s.T}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"kind", "linear"}};
}
inline void from_json(const nlohmann::json& j, NoiseSchedule& s) {
  s = make_schedule(j.at("T").get<int>(), j.at("beta_min").get<double>(), j.at("beta_max").get<double>());
}

inline RVector q_sample(const RVector& z0, int t, const RVector& eps, const NoiseSchedule& sch) {
  if (z0.size() != eps.size()) throw std::invalid_argument("q_sample: length mismatch");
  const double ab = sch.alpha_bar(sch.check(t));
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

inline RVector posterior_mean(const RVector& z_t, int t, const RVector& eps_hat, const NoiseSchedule& sch) {
  if (z_t.size() != eps_hat.size()) throw std::invalid_argument("posterior_mean: length mismatch");
  const double a = sch.a(t), ab = sch.alpha_bar(t);
  return (z_t - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
}

/// Batched noise predictor: rows of z are samples, all at step t.
using EpsFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& z, int t)>;

enum class SamplerKind { ddpm, ddim };

/// Reverse-step variance of the ancestral sampler.  `beta` is the default;
/// `posterior` uses the true posterior variance (1-abar_{t-1})/(1-abar_t) beta_t,
/// which is the law that DDIM with eta = 1 reproduces.
enum class ReverseVariance { beta, posterior };

struct SamplerOptions {
  SamplerKind kind = SamplerKind::ddim;
  int ddim_steps = 50;
  double ddim_eta = 0.0;
  int batch = 8;
  ReverseVariance ddpm_variance = ReverseVariance::beta;

  void validate(int T) const {
    if (ddim_steps < 1 || ddim_steps > T) throw config_error("sampler: ddim_steps must lie in [1, T]");
    if (!(ddim_eta >= 0.0 && ddim_eta <= 1.0)) throw config_error("sampler: eta must lie in [0, 1]");
    if (batch < 1) throw config_error("sampler: batch must be >= 1");
  }
};

/// Evenly strided increasing steps that include 1 and T.
inline std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("ddim_timesteps: steps must lie in [1, T]");
  if (steps == 1) return {T};
  std::vector<int> out;
  for (int i = 0; i < steps; ++i)
    out.push_back(1 + static_cast<int>(std::llround(double(i) * double(T - 1) / double(steps - 1))));
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1]) throw std::invalid_argument("ddim_timesteps: sub-schedule not strictly increasing");
  return out;
}

/// Coefficients of one DDIM move from t to t_prev:
/// z_prev = c_x * z_t + c_e * eps_hat + sigma * xi.
struct DdimCoeffs {
  double c_x, c_e, sigma;
};

inline DdimCoeffs ddim_coeffs(const NoiseSchedule& sch, int t, int t_prev, double eta) {
  const double ab = sch.alpha_bar(t), ab_prev = sch.alpha_bar(t_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  const double r = std::sqrt(ab_prev / ab);
  return {r, dir - r * std::sqrt(1.0 - ab), sigma};
}

namespace detail {

inline Eigen::MatrixXd draw_rows(std::vector<Rng>& rngs, Eigen::Index D) {
  Eigen::MatrixXd xi(static_cast<Eigen::Index>(rngs.size()), D);
  for (std::size_t r = 0; r < rngs.size(); ++r)
    for (Eigen::Index d = 0; d < D; ++d) xi(static_cast<Eigen::Index>(r), d) = normal(rngs[r]);
  return xi;
}

inline void check_rows(const Eigen::MatrixXd& z_T, const std::vector<Rng>& rngs) {
  if (static_cast<std::size_t>(z_T.rows()) != rngs.size())
    throw std::invalid_argument("sampler: need one noise stream per row");
}

}  // namespace detail

/// Per-row starting points z_T ~ N(0, I), drawn from each row's own stream so
/// a sample does not depend on which batch it shares.
inline Eigen::MatrixXd initial_noise(std::vector<Rng>& rngs, Eigen::Index D) { return detail::draw_rows(rngs, D); }

/// Ancestral sampler from z_T down to z_0.  Noise is drawn only for t > 1.
/// When `trajectory` is non-null it receives z_T, z_{T-1}, ..., z_0.
inline Eigen::MatrixXd ddpm_sample(const EpsFn& eps, Eigen::MatrixXd z, const NoiseSchedule& sch,
                                   std::vector<Rng>& rngs, ReverseVariance var = ReverseVariance::beta,
                                   std::vector<Eigen::MatrixXd>* trajectory = nullptr) {
  detail::check_rows(z, rngs);
  if (trajectory) trajectory->push_back(z);
  for (int t = sch.T; t >= 1; --t) {
    const Eigen::MatrixXd e = eps(z, t);
    const double a = sch.a(t), ab = sch.alpha_bar(t);
    z = (z - ((1.0 - a) / std::sqrt(1.0 - ab)) * e) / std::sqrt(a);
    if (t > 1) {
      const double v = var == ReverseVariance::beta ? sch.b(t)
                                                    : (1.0 - sch.alpha_bar(t - 1)) / (1.0 - ab) * sch.b(t);
      z += std::sqrt(v) * detail::draw_rows(rngs, z.cols());
    }
    if (trajectory) trajectory->push_back(z);
  }
  return z;
}

/// Strided DDIM sampler.  With eta = 0 no noise is drawn and the result is a
/// deterministic function of z_T.
inline Eigen::MatrixXd ddim_sample(const EpsFn& eps, Eigen::MatrixXd z, const NoiseSchedule& sch,
                                   const SamplerOptions& opts, std::vector<Rng>& rngs,
                                   std::vector<Eigen::MatrixXd>* trajectory = nullptr) {
  opts.validate(sch.T);
  detail::check_rows(z, rngs);
  const std::vector<int> ts = ddim_timesteps(sch.T, opts.ddim_steps);
  if (trajectory) trajectory->push_back(z);
  for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
    const int t = ts[i], t_prev = i > 0 ? ts[i - 1] : 0;
    const DdimCoeffs c = ddim_coeffs(sch, t, t_prev, opts.ddim_eta);
    z = c.c_x * z + c.c_e * eps(z, t);
    if (c.sigma > 0.0) z += c.sigma * detail::draw_rows(rngs, z.cols());
    if (trajectory) trajectory->push_back(z);
  }
  return z;
}

/// Dispatches on opts.kind.
inline Eigen::MatrixXd sample(const EpsFn& eps, const Eigen::MatrixXd& z_T, const NoiseSchedule& sch,
                              const SamplerOptions& opts, std::vector<Rng>& rngs) {
  if (opts.kind == SamplerKind::ddpm) return ddpm_sample(eps, z_T, sch, rngs, opts.ddpm_variance);
  return ddim_sample(eps, z_T, sch, opts, rngs);
}

}  // namespace secdiff

#endif  // SECDIFF_DIFFUSION_HPP
