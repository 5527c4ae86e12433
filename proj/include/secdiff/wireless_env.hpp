#ifndef SECDIFF_WIRELESS_ENV_HPP
#define SECDIFF_WIRELESS_ENV_HPP

#include "secdiff/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace secdiff {

/// Physical scenario of one single-cell downlink: array size, node counts,
/// power budget and the large-scale propagation model.
struct SystemConfig {
  int M = 8;   // BS antennas
  int K = 4;   // legitimate users
  int L = 2;   // eavesdroppers
  int J = 4;   // AN streams
  double P_dbm = 20.0;
  double noise_dbm = -100.0;
  double alpha = 0.01;  // LogSumExp temperature
  double pathloss_ref_db = -30.0;
  double pathloss_exp = 2.2;
  double ref_dist_m = 1.0;
  double user_dist_min_m = 50.0;
  double user_dist_max_m = 80.0;
  double eve_radius_m = 5.0;
  std::uint64_t seed = 1;

  static int default_an_streams(int M, int K) { return std::max(M - K, 1); }

  int channel_dim() const { return M * (K + L); }    // complex length of h
  int strategy_dim() const { return M * (K + J); }   // complex length of u
  int real_strategy_dim() const { return 2 * strategy_dim(); }
  int real_channel_dim() const { return 2 * channel_dim(); }

  void validate() const;
  double power_watt() const;
  double noise_watt() const;
  /// sigma0^2 / P, the noise term of every SINR.
  double noise_ratio() const { return noise_watt() / power_watt(); }
};

inline double dbm_to_watt(double x_dbm) {
  if (!std::isfinite(x_dbm)) throw std::invalid_argument("dbm_to_watt: non-finite power");
  return std::pow(10.0, (x_dbm - 30.0) / 10.0);
}

inline double SystemConfig::power_watt() const { return dbm_to_watt(P_dbm); }
inline double SystemConfig::noise_watt() const { return dbm_to_watt(noise_dbm); }

inline void SystemConfig::validate() const {
  if (M < 1) throw config_error("M must be >= 1");
  if (K < 1) throw config_error("K must be >= 1");
  if (L < 0) throw config_error("L must be >= 0");
  if (J < 0) throw config_error("J must be >= 0");
  if (!std::isfinite(P_dbm) || !std::isfinite(noise_dbm))
    throw config_error("P_dbm and noise_dbm must be finite");
  if (!(alpha > 0.0)) throw config_error("alpha must be > 0");
  if (!(ref_dist_m > 0.0)) throw config_error("ref_dist_m must be > 0");
  if (!(user_dist_min_m > 0.0) || user_dist_min_m > user_dist_max_m)
    throw config_error("user distance ring must satisfy 0 < min <= max");
  if (!(eve_radius_m >= 0.0)) throw config_error("eve_radius_m must be >= 0");
}

inline void to_json(nlohmann::json& j, const SystemConfig& c) {
  j = nlohmann::json{{"M", c.M},
                     {"K", c.K},
                     {"L", c.L},
                     {"J", c.J},
                     {"P_dbm", c.P_dbm},
                     {"noise_dbm", c.noise_dbm},
                     {"alpha", c.alpha},
                     {"pathloss_ref_db", c.pathloss_ref_db},
                     {"pathloss_exp", c.pathloss_exp},
                     {"ref_dist_m", c.ref_dist_m},
                     {"user_dist_min_m", c.user_dist_min_m},
                     {"user_dist_max_m", c.user_dist_max_m},
                     {"eve_radius_m", c.eve_radius_m},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults; a missing J follows max(M - K, 1).
inline void from_json(const nlohmann::json& j, SystemConfig& c) {
  SystemConfig d;
  c.M = j.value("M", d.M);
  c.K = j.value("K", d.K);
  c.L = j.value("L", d.L);
  c.J = j.contains("J") ? j.at("J").get<int>() : SystemConfig::default_an_streams(c.M, c.K);
  c.P_dbm = j.value("P_dbm", d.P_dbm);
  c.noise_dbm = j.value("noise_dbm", d.noise_dbm);
  c.alpha = j.value("alpha", d.alpha);
  c.pathloss_ref_db = j.value("pathloss_ref_db", d.pathloss_ref_db);
  c.pathloss_exp = j.value("pathloss_exp", d.pathloss_exp);
  c.ref_dist_m = j.value("ref_dist_m", d.ref_dist_m);
  c.user_dist_min_m = j.value("user_dist_min_m", d.user_dist_min_m);
  c.user_dist_max_m = j.value("user_dist_max_m", d.user_dist_max_m);
  c.eve_radius_m = j.value("eve_radius_m", d.eve_radius_m);
  c.seed = j.value("seed", d.seed);
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Node positions in the plane, BS at the origin.
struct Placement {
  std::vector<Point2> user_pos;
  std::vector<Point2> eve_pos;
  std::vector<double> user_dist;
  std::vector<double> eve_dist;
  std::vector<int> eve_anchor;
};

/// Users uniform in area on the annulus [min, max]; each eavesdropper
/// uniform in area on the disk of radius eve_radius_m around a random user.
inline Placement sample_placement(const SystemConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  Placement p;
  const double r0 = cfg.user_dist_min_m * cfg.user_dist_min_m;
  const double r1 = cfg.user_dist_max_m * cfg.user_dist_max_m;
  for (int k = 0; k < cfg.K; ++k) {
    double r = std::sqrt(r0 + (r1 - r0) * unit(rng));
    r = std::clamp(r, cfg.user_dist_min_m, cfg.user_dist_max_m);
    const double phi = two_pi * unit(rng);
    p.user_pos.push_back({r * std::cos(phi), r * std::sin(phi)});
    p.user_dist.push_back(r);
  }
  std::uniform_int_distribution<int> pick(0, cfg.K - 1);
  for (int l = 0; l < cfg.L; ++l) {
    const int anchor = pick(rng);
    const double rho = cfg.eve_radius_m * std::sqrt(unit(rng));
    const double phi = two_pi * unit(rng);
    const Point2 u = p.user_pos[anchor];
    const Point2 e{u.x + rho * std::cos(phi), u.y + rho * std::sin(phi)};
    p.eve_pos.push_back(e);
    p.eve_anchor.push_back(anchor);
    // Guard against a zero distance when the radius exceeds the ring.
    p.eve_dist.push_back(std::max(distance(e, {}), 1e-3));
  }
  return p;
}

/// Large-scale path loss in dB (a negative gain).
inline double path_loss_db(double d1, const SystemConfig& cfg) {
  if (!(d1 > 0.0)) throw std::invalid_argument("path_loss_db: distance must be > 0");
  return cfg.pathloss_ref_db - 10.0 * cfg.pathloss_exp * std::log10(d1 / cfg.ref_dist_m);
}

/// User and eavesdropper channels of one realization; row r is the channel
/// vector of node r.
struct ChannelSet {
  CMatrix H_users;  // K x M
  CMatrix H_eves;   // L x M
  CVector h_composite;
};

/// Users first, then eavesdroppers, each row in antenna order.
inline CVector composite_channel(const ChannelSet& cs) {
  const auto M = std::max(cs.H_users.cols(), cs.H_eves.cols());
  const auto rows = cs.H_users.rows() + cs.H_eves.rows();
  CVector h(M * rows);
  Eigen::Index at = 0;
  for (Eigen::Index r = 0; r < cs.H_users.rows(); ++r)
    for (Eigen::Index m = 0; m < M; ++m) h(at++) = cs.H_users(r, m);
  for (Eigen::Index r = 0; r < cs.H_eves.rows(); ++r)
    for (Eigen::Index m = 0; m < M; ++m) h(at++) = cs.H_eves(r, m);
  return h;
}

inline ChannelSet make_channel_set(CMatrix users, CMatrix eves) {
  ChannelSet cs{std::move(users), std::move(eves), {}};
  if (cs.H_eves.size() == 0) cs.H_eves.resize(0, cs.H_users.cols());
  cs.h_composite = composite_channel(cs);
  return cs;
}

/// Inverse of composite_channel for known (M, K, L).
inline ChannelSet channel_set_from_composite(const CVector& h, int M, int K, int L) {
  if (h.size() != static_cast<Eigen::Index>(M) * (K + L))
    throw std::invalid_argument("channel_set_from_composite: length mismatch");
  CMatrix users(K, M), eves(L, M);
  for (int k = 0; k < K; ++k)
    for (int m = 0; m < M; ++m) users(k, m) = h(k * M + m);
  for (int l = 0; l < L; ++l)
    for (int m = 0; m < M; ++m) eves(l, m) = h((K + l) * M + m);
  return make_channel_set(std::move(users), std::move(eves));
}

/// Rayleigh fading scaled by the distance-dependent path loss.
inline ChannelSet sample_channels(const SystemConfig& cfg, const Placement& placement, Rng& rng) {
  if (static_cast<int>(placement.user_dist.size()) != cfg.K ||
      static_cast<int>(placement.eve_dist.size()) != cfg.L)
    throw std::invalid_argument("sample_channels: placement does not match config");
  auto draw = [&](double dist) {
    const double amp = std::sqrt(std::pow(10.0, path_loss_db(dist, cfg) / 10.0));
    CVector row(cfg.M);
    for (int m = 0; m < cfg.M; ++m) row(m) = amp * complex_normal(rng);
    return row;
  };
  CMatrix users(cfg.K, cfg.M), eves(cfg.L, cfg.M);
  for (int k = 0; k < cfg.K; ++k) users.row(k) = draw(placement.user_dist[k]).transpose();
  for (int l = 0; l < cfg.L; ++l) eves.row(l) = draw(placement.eve_dist[l]).transpose();
  return make_channel_set(std::move(users), std::move(eves));
}

/// One realization keyed by (seed, index): the same key always yields the
/// same channels regardless of which other records were generated.
inline ChannelSet draw_realization(const SystemConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  Rng place_rng = make_stream(seed, index, salt::placement);
  Rng fade_rng = make_stream(seed, index, salt::fading);
  const Placement p = sample_placement(cfg, place_rng);
  return sample_channels(cfg, p, fade_rng);
}

/// Real embedding [Re(h); Im(h)].
inline RVector real_embedding(const CVector& h) {
  RVector x(2 * h.size());
  x.head(h.size()) = h.real();
  x.tail(h.size()) = h.imag();
  return x;
}

}  // namespace secdiff

#endif  // SECDIFF_WIRELESS_ENV_HPP
