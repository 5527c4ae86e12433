#ifndef SECDIFF_TRAINER_HPP
#define SECDIFF_TRAINER_HPP

#include "secdiff/checkpoint.hpp"
#include "secdiff/datagen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <vector>

namespace secdiff {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 128;
  double learning_rate = 1e-4;
  int T = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int eval_every = 0;  // 0: never
  std::uint64_t seed = 0;
  Backbone backbone = Backbone::unet;
  bool cosine_lr = false;
  double ema_decay = 0.0;  // 0: off

  void validate() const {
    if (epochs < 1) throw config_error("train: epochs must be >= 1");
    if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw config_error("train: learning_rate must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw config_error("train: ema_decay must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                     {"T", c.T},                 {"beta_min", c.beta_min},     {"beta_max", c.beta_max},
                     {"eval_every", c.eval_every}, {"seed", c.seed},           {"backbone", to_string(c.backbone)},
                     {"cosine_lr", c.cosine_lr}, {"ema_decay", c.ema_decay}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.T = j.value("T", d.T);
  c.beta_min = j.value("beta_min", d.beta_min);
  c.beta_max = j.value("beta_max", d.beta_max);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.seed = j.value("seed", d.seed);
  c.backbone = backbone_from_string(j.value("backbone", to_string(d.backbone)));
  c.cosine_lr = j.value("cosine_lr", d.cosine_lr);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
}

/// Uniform steps and standard normal noise for a batch.
struct NoiseDraw {
  std::vector<int> t;
  RowMat<float> eps;
};

inline NoiseDraw draw_noise(Eigen::Index rows, Eigen::Index dim, int T, Rng& rng) {
  std::uniform_int_distribution<int> step(1, T);
  NoiseDraw d{std::vector<int>(static_cast<std::size_t>(rows)), RowMat<float>(rows, dim)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    d.t[r] = step(rng);
    for (Eigen::Index c = 0; c < dim; ++c) d.eps(r, c) = float(normal(rng));
  }
  return d;
}

/// Mean over the batch of ||eps - eps_net(sqrt(abar_t) z0 + sqrt(1-abar_t) eps, t)||^2.
/// `net(tape, z_t, steps)` returns the predicted noise; the condition is
/// captured by the caller and never touches the forward process.
template <class T, class Net>
ad::Var<T> training_loss(ad::Tape<T>& tp, Net&& net, const RowMat<T>& z0, const std::vector<int>& steps,
                         const RowMat<T>& eps, const NoiseSchedule& sch) {
  if (z0.rows() == 0) throw std::invalid_argument("training_loss: empty batch");
  if (eps.rows() != z0.rows() || eps.cols() != z0.cols() || static_cast<Eigen::Index>(steps.size()) != z0.rows())
    throw std::invalid_argument("training_loss: batch shape mismatch");
  RowMat<T> zt(z0.rows(), z0.cols());
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    const double ab = sch.alpha_bar(steps[r]);
    zt.row(r) = T(std::sqrt(ab)) * z0.row(r) + T(std::sqrt(1.0 - ab)) * eps.row(r);
  }
  return tp.mean_row_sq_error(net(tp, tp.constant(std::move(zt)), steps), eps);
}

/// Standardized float views of a bundle.
struct TrainingArrays {
  RowMat<float> h, z;
};

inline TrainingArrays standardized_arrays(const DatasetBundle& b, const Standardizer& hs, const Standardizer& zs) {
  TrainingArrays a{RowMat<float>(b.H.rows(), b.H.cols()), RowMat<float>(b.Z.rows(), b.Z.cols())};
  for (Eigen::Index n = 0; n < b.H.rows(); ++n) {
    a.h.row(n) = standardize(b.H.row(n).transpose(), hs, Direction::apply).transpose().cast<float>();
    a.z.row(n) = standardize(b.Z.row(n).transpose(), zs, Direction::apply).transpose().cast<float>();
  }
  return a;
}

inline ad::Var<float> checkpoint_loss(ad::Tape<float>& tp, const Checkpoint& ck, const RowMat<float>& h,
                                      const RowMat<float>& z0, const NoiseDraw& d) {
  const ad::Var<float> c = ck.net->embed_channel(tp, tp.constant(h));
  auto net = [&](ad::Tape<float>& t, const ad::Var<float>& zt, const std::vector<int>& steps) {
    return ck.net->forward(t, zt, steps, c);
  };
  return training_loss(tp, net, z0, d.t, d.eps, ck.schedule);
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_curve;  // per-epoch mean
};

using EpochCallback = std::function<void(int epoch, double value)>;

inline RowMat<float> gather_rows(const RowMat<float>& m, const std::vector<Eigen::Index>& idx, std::size_t lo,
                                 std::size_t hi) {
  RowMat<float> out(static_cast<Eigen::Index>(hi - lo), m.cols());
  for (std::size_t i = lo; i < hi; ++i) out.row(static_cast<Eigen::Index>(i - lo)) = m.row(idx[i]);
  return out;
}

/// Stage-1 denoising training with Adam.  Deterministic given (bundle,
/// spec, tc): batch order and noise come from per-epoch streams of tc.seed.
inline TrainResult train(const DatasetBundle& bundle, const DenoiserSpec& spec_in, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  tc.validate();
  DenoiserSpec spec = spec_in.with_system(bundle.cfg);
  spec.backbone = tc.backbone;
  if (spec.channel_input_dim() != bundle.cfg.real_channel_dim() || spec.input_dim() != bundle.cfg.real_strategy_dim())
    throw stage_error("train", "denoiser dimensions do not match the dataset");

  TrainResult res;
  Checkpoint& ck = res.checkpoint;
  ck.cfg = bundle.cfg;
  ck.spec = spec;
  ck.schedule = make_schedule(tc.T, tc.beta_min, tc.beta_max);
  ck.h_standardizer = bundle.h_standardizer;
  ck.z_standardizer = bundle.z_standardizer;
  ck.seed = tc.seed;
  ck.net = std::make_shared<Denoiser<float>>(spec, tc.seed);
  ck.spec = ck.net->spec();  // resolved MLP width
  ck.extra = {{"train", tc}};

  const TrainingArrays data = standardized_arrays(bundle, ck.h_standardizer, ck.z_standardizer);
  const auto N = static_cast<std::size_t>(data.z.rows());
  nn::Adam<float> opt(tc.learning_rate);
  std::vector<RowMat<float>> ema;
  if (tc.ema_decay > 0.0)
    for (const auto& e : ck.net->params().entries()) ema.push_back(e.var.value());

  std::vector<Eigen::Index> order(N);
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    if (tc.cosine_lr)
      opt.set_lr(0.5 * tc.learning_rate * (1.0 + std::cos(std::numbers::pi * double(epoch - 1) / tc.epochs)));
    Rng rng = make_stream(tc.seed, static_cast<std::uint64_t>(epoch), salt::training);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t lo = 0; lo < N; lo += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t hi = std::min(N, lo + static_cast<std::size_t>(tc.batch_size));
      const RowMat<float> h = gather_rows(data.h, order, lo, hi);
      const RowMat<float> z = gather_rows(data.z, order, lo, hi);
      const NoiseDraw d = draw_noise(z.rows(), z.cols(), tc.T, rng);
      ad::Tape<float> tp(true);
      const ad::Var<float> loss = checkpoint_loss(tp, ck, h, z, d);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw stage_error("train", "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                       std::to_string(lo));
      ck.net->params().zero_grad();
      tp.backward(loss);
      opt.step(ck.net->params());
      if (!ema.empty()) {
        auto& es = ck.net->params().entries();
        for (std::size_t i = 0; i < es.size(); ++i)
          ema[i] = float(tc.ema_decay) * ema[i] + float(1.0 - tc.ema_decay) * es[i].var.value();
      }
      total += lv * double(hi - lo);
    }
    res.loss_curve.push_back(total / double(N));
    ck.epochs = epoch;
    if (on_epoch) on_epoch(epoch, res.loss_curve.back());
  }
  if (!ema.empty()) {
    auto& es = ck.net->params().entries();
    for (std::size_t i = 0; i < es.size(); ++i) es[i].var.mutable_value() = ema[i];
  }
  ck.net->params().zero_grad();
  return res;
}

/// Held-out denoising MSE with a (t, eps) stream fixed per record, so the
/// value does not depend on batching and is comparable across checkpoints.
inline double evaluate_denoising(const Checkpoint& ck, const DatasetBundle& held_out, std::uint64_t seed,
                                 int batch = 256) {
  const TrainingArrays data = standardized_arrays(held_out, ck.h_standardizer, ck.z_standardizer);
  const Eigen::Index N = data.z.rows(), D = data.z.cols();
  if (D != ck.spec.input_dim()) throw std::invalid_argument("evaluate_denoising: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index lo = 0; lo < N; lo += batch) {
    const Eigen::Index n = std::min<Eigen::Index>(batch, N - lo);
    NoiseDraw d{std::vector<int>(static_cast<std::size_t>(n)), RowMat<float>(n, D)};
    for (Eigen::Index r = 0; r < n; ++r) {
      Rng rng = make_stream(seed, static_cast<std::uint64_t>(lo + r), salt::training + 100);
      NoiseDraw one = draw_noise(1, D, ck.schedule.T, rng);
      d.t[r] = one.t[0];
      d.eps.row(r) = one.eps.row(0);
    }
    ad::Tape<float> tp(false);
    const auto loss = checkpoint_loss(tp, ck, data.h.middleRows(lo, n), data.z.middleRows(lo, n), d);
    total += double(loss.value()(0, 0)) * double(n);
  }
  return total / double(N);
}

inline void write_curve_csv(const std::filesystem::path& path, const std::string& value_name,
                            const std::vector<double>& values) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch," << value_name << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i + 1) << ',' << values[i] << '\n';
}

}  // namespace secdiff

#endif  // SECDIFF_TRAINER_HPP
