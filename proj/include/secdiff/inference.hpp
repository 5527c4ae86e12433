#ifndef SECDIFF_INFERENCE_HPP
#define SECDIFF_INFERENCE_HPP

#include "secdiff/checkpoint.hpp"
#include "secdiff/secrecy_metrics.hpp"

#include <algorithm>
#include <vector>

namespace secdiff {

struct InferenceOptions {
  int candidates = 8;
  SamplerOptions sampler;
  std::uint64_t seed = 0;
  int batch_rows = 256;
};

struct ChannelResult {
  double best_rsum = 0.0;
  Strategy best;
  std::vector<double> candidate_rsum;
};

/// Standardized-space sample rows -> projected strategy.
inline Strategy decode_strategy(const Checkpoint& ck, const RVector& z_std) {
  const RVector z = standardize(z_std, ck.z_standardizer, Direction::invert);
  return project_power(real_to_strategy(z, ck.cfg));
}

/// Best-of-B sampling.  Candidate b of channel n always starts from the
/// stream keyed (seed, n, b), so results do not depend on batching and the
/// first B candidates are shared between runs with different B.
inline std::vector<ChannelResult> infer(const Checkpoint& ck, const std::vector<ChannelSet>& channels,
                                        const InferenceOptions& opts) {
  if (opts.candidates < 1) throw std::invalid_argument("infer: candidates must be >= 1");
  opts.sampler.validate(ck.schedule.T);
  const int B = opts.candidates;
  const Eigen::Index D = ck.spec.input_dim();
  std::vector<ChannelResult> out(channels.size());
  for (auto& r : out) {
    r.best_rsum = -1.0;
    r.candidate_rsum.assign(static_cast<std::size_t>(B), 0.0);
  }
  std::vector<CVector> hs;
  for (const auto& cs : channels) hs.push_back(cs.h_composite);
  const RowMat<float> emb = channels.empty() ? RowMat<float>() : embed_channels(ck, hs);

  const std::size_t total = channels.size() * static_cast<std::size_t>(B);
  const auto step = static_cast<std::size_t>(std::max(1, opts.batch_rows));
  for (std::size_t lo = 0; lo < total; lo += step) {
    const std::size_t hi = std::min(total, lo + step);
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    RowMat<float> cond(rows, emb.cols());
    std::vector<Rng> rngs;
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t n = i / B, b = i % B;
      cond.row(static_cast<Eigen::Index>(i - lo)) = emb.row(static_cast<Eigen::Index>(n));
      rngs.push_back(make_stream(stream_key(opts.seed, n, salt::sampler), b, salt::sampler));
    }
    const Eigen::MatrixXd zT = initial_noise(rngs, D);
    const Eigen::MatrixXd z0 = sample(make_eps_fn(ck, std::move(cond)), zT, ck.schedule, opts.sampler, rngs);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t n = i / B, b = i % B;
      Strategy s = decode_strategy(ck, z0.row(static_cast<Eigen::Index>(i - lo)).transpose());
      if (total_power(s) > 1.0 + 1e-6) throw stage_error("infer", "projected strategy exceeds the power budget");
      const double r = sum_secrecy(channels[n], s, ck.cfg, RateMode::exact).R_sum;
      out[n].candidate_rsum[b] = r;
      if (r > out[n].best_rsum) {
        out[n].best_rsum = r;
        out[n].best = std::move(s);
      }
    }
  }
  return out;
}

inline double mean_best(const std::vector<ChannelResult>& rs) {
  if (rs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rs) s += r.best_rsum;
  return s / double(rs.size());
}

}  // namespace secdiff

#endif  // SECDIFF_INFERENCE_HPP
