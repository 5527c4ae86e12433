#ifndef SECDIFF_FINETUNE_HPP
#define SECDIFF_FINETUNE_HPP

#include "secdiff/inference.hpp"
#include "secdiff/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <vector>

namespace secdiff {

struct FinetuneConfig {
  double lambda = 0.001;
  double delta = 1.0;
  int epochs = 60;
  int chain_len = 10;
  int ddim_steps = 50;
  int batch_size = 64;
  int steps_per_epoch = 4;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  int monitor_channels = 128;

  void validate(int T) const {
    if (!(lambda >= 0.0)) throw config_error("finetune: lambda must be >= 0");
    if (!(delta > 0.0)) throw config_error("finetune: delta must be > 0");
    if (chain_len < 1 || chain_len > ddim_steps) throw config_error("finetune: chain_len must lie in [1, ddim_steps]");
    if (ddim_steps < 1 || ddim_steps > T) throw config_error("finetune: ddim_steps must lie in [1, T]");
    if (epochs < 0 || batch_size < 1 || steps_per_epoch < 1 || monitor_channels < 1)
      throw config_error("finetune: counts must be positive");
    if (!(learning_rate >= 0.0)) throw config_error("finetune: learning_rate must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},         {"delta", c.delta},
                     {"epochs", c.epochs},         {"chain_len", c.chain_len},
                     {"ddim_steps", c.ddim_steps}, {"batch_size", c.batch_size},
                     {"steps_per_epoch", c.steps_per_epoch}, {"learning_rate", c.learning_rate},
                     {"seed", c.seed},             {"monitor_channels", c.monitor_channels}};
}

inline void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  const FinetuneConfig d;
  c.lambda = j.value("lambda", d.lambda);
  c.delta = j.value("delta", d.delta);
  c.epochs = j.value("epochs", d.epochs);
  c.chain_len = j.value("chain_len", d.chain_len);
  c.ddim_steps = j.value("ddim_steps", d.ddim_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
  c.monitor_channels = j.value("monitor_channels", d.monitor_channels);
}

/// Per-record loss -R_sum^smooth(z) + lambda (||z|| - delta)^2 and its gradient.
inline std::pair<double, RVector> finetune_record_loss(const ChannelSet& cs, const RVector& z,
                                                       const SystemConfig& cfg, double lambda, double delta) {
  const SmoothObjective obj = smooth_sum_secrecy_with_grad(cs, z, cfg);
  const double nrm = z.norm();
  double value = -obj.value + lambda * (nrm - delta) * (nrm - delta);
  RVector grad = -obj.grad;
  if (nrm > 0.0) grad += (2.0 * lambda * (nrm - delta) / nrm) * z;
  return {value, grad};
}

/// Batch mean of finetune_record_loss over de-standardized strategies.
inline double finetune_loss(const std::vector<RVector>& u0, const std::vector<ChannelSet>& h,
                            const SystemConfig& cfg, const FinetuneConfig& fc) {
  if (u0.size() != h.size() || u0.empty()) throw std::invalid_argument("finetune_loss: batches must align");
  double s = 0.0;
  for (std::size_t i = 0; i < u0.size(); ++i) s += finetune_record_loss(h[i], u0[i], cfg, fc.lambda, fc.delta).first;
  return s / double(u0.size());
}

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<double> secrecy_curve;  // per-epoch mean exact R_sum on the monitor set
  std::vector<double> norm_gap_curve; // per-epoch mean | ||u0|| - delta |
  std::vector<double> loss_curve;
};

namespace detail {

/// One differentiable pass: deterministic DDIM from z_T, gradients kept only
/// through the last chain_len steps, then the secrecy loss on the result.
/// Returns the scalar loss variable and fills the de-standardized samples.
inline ad::Var<float> finetune_pass(ad::Tape<float>& tp, const Checkpoint& ck, const std::vector<ChannelSet>& chans,
                                    const RowMat<float>& h_feat, RowMat<float> z, const FinetuneConfig& fc,
                                    std::vector<RVector>* samples) {
  const std::vector<int> ts = ddim_timesteps(ck.schedule.T, fc.ddim_steps);
  const auto B = z.rows();
  const int n = static_cast<int>(ts.size());
  {
    ad::Tape<float> free(false);
    const auto c = ck.net->embed_channel(free, free.constant(h_feat));
    for (int i = n - 1; i >= fc.chain_len; --i) {
      const DdimCoeffs k = ddim_coeffs(ck.schedule, ts[i], ts[i - 1], 0.0);
      const auto e = ck.net->forward(free, free.constant(z), std::vector<int>(B, ts[i]), c);
      z = float(k.c_x) * z + float(k.c_e) * e.value();
    }
  }
  const auto c = ck.net->embed_channel(tp, tp.constant(h_feat));
  ad::Var<float> zv = tp.constant(std::move(z));
  for (int i = std::min(fc.chain_len, n) - 1; i >= 0; --i) {
    const DdimCoeffs k = ddim_coeffs(ck.schedule, ts[i], i > 0 ? ts[i - 1] : 0, 0.0);
    const auto e = ck.net->forward(tp, zv, std::vector<int>(B, ts[i]), c);
    zv = tp.lincomb(zv, float(k.c_x), e, float(k.c_e));
  }
  const Eigen::Matrix<float, 1, Eigen::Dynamic> scl = ck.z_standardizer.std.transpose().cast<float>();
  const Eigen::Matrix<float, 1, Eigen::Dynamic> sh = ck.z_standardizer.mean.transpose().cast<float>();
  const ad::Var<float> u = tp.affine_cols(zv, scl, sh);
  if (samples) {
    samples->clear();
    for (Eigen::Index r = 0; r < B; ++r) samples->push_back(u.value().row(r).transpose().cast<double>());
  }
  const ad::Var<float> per = tp.rowwise(u, [&](Eigen::Index r, const Eigen::Matrix<float, 1, Eigen::Dynamic>& row) {
    auto [v, g] = finetune_record_loss(chans[r], row.transpose().cast<double>(), ck.cfg, fc.lambda, fc.delta);
    return std::make_pair(float(v), Eigen::Matrix<float, 1, Eigen::Dynamic>(g.transpose().cast<float>()));
  });
  return tp.mean_all(per);
}

}  // namespace detail

/// Secrecy-guided fine-tuning.  Works on a deep copy, so the input checkpoint
/// is never modified.  Each step draws fresh channels and fresh z_T.
inline FinetuneResult finetune(const Checkpoint& base, const FinetuneConfig& fc, const EpochCallback& on_epoch = {}) {
  fc.validate(base.schedule.T);
  FinetuneResult res;
  res.checkpoint = base.clone();
  Checkpoint& ck = res.checkpoint;
  ck.stage = "finetune";
  ck.extra["finetune"] = fc;
  const SystemConfig& cfg = ck.cfg;
  const Eigen::Index D = ck.spec.input_dim();

  InferenceOptions mon;
  mon.candidates = 1;
  mon.sampler.ddim_steps = fc.ddim_steps;
  mon.seed = stream_key(fc.seed, 1, salt::finetune);
  const std::vector<ChannelSet> monitor = test_channels(cfg, static_cast<std::size_t>(fc.monitor_channels),
                                                        stream_key(fc.seed, 2, salt::finetune));

  nn::Adam<float> opt(fc.learning_rate);
  for (int epoch = 1; epoch <= fc.epochs; ++epoch) {
    double loss_sum = 0.0, gap_sum = 0.0;
    for (int s = 0; s < fc.steps_per_epoch; ++s) {
      const std::uint64_t key = stream_key(fc.seed, std::uint64_t(epoch) * 1000003u + std::uint64_t(s), salt::finetune);
      std::vector<ChannelSet> chans;
      RowMat<float> feat(fc.batch_size, ck.spec.channel_input_dim());
      for (int b = 0; b < fc.batch_size; ++b) {
        chans.push_back(draw_realization(cfg, key, std::uint64_t(b)));
        feat.row(b) = channel_features<float>(chans.back().h_composite, ck.h_standardizer);
      }
      std::vector<Rng> rngs;
      for (int b = 0; b < fc.batch_size; ++b) rngs.push_back(make_stream(key, std::uint64_t(b), salt::sampler));
      const RowMat<float> zT = initial_noise(rngs, D).cast<float>();
      std::vector<RVector> samples;
      ad::Tape<float> tp(true);
      const ad::Var<float> loss = detail::finetune_pass(tp, ck, chans, feat, zT, fc, &samples);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw stage_error("finetune", "non-finite loss at epoch " + std::to_string(epoch));
      ck.net->params().zero_grad();
      tp.backward(loss);
      opt.step(ck.net->params());
      loss_sum += lv;
      for (const auto& u : samples) gap_sum += std::abs(u.norm() - fc.delta) / double(samples.size());
    }
    ck.net->params().zero_grad();
    res.loss_curve.push_back(loss_sum / fc.steps_per_epoch);
    res.norm_gap_curve.push_back(gap_sum / fc.steps_per_epoch);
    res.secrecy_curve.push_back(mean_best(infer(ck, monitor, mon)));
    ck.epochs = base.epochs + epoch;
    if (on_epoch) on_epoch(epoch, res.secrecy_curve.back());
  }
  return res;
}

}  // namespace secdiff

#endif  // SECDIFF_FINETUNE_HPP
