#ifndef SECDIFF_DENOISER_HPP
#define SECDIFF_DENOISER_HPP

#include "secdiff/nn.hpp"
#include "secdiff/standardizer.hpp"
#include "secdiff/wireless_env.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace secdiff {

enum class Backbone { unet, mlp };

inline std::string to_string(Backbone b) { return b == Backbone::unet ? "unet" : "mlp"; }
inline Backbone backbone_from_string(const std::string& s) {
  if (s == "unet") return Backbone::unet;
  if (s == "mlp") return Backbone::mlp;
  throw config_error("unknown backbone: " + s);
}

/// Architecture of the conditional noise predictor.
///
/// The strategy vector z = [Re(u); Im(u)] enters the U-Net as a sequence of
/// M(K+J) positions with two channels (Re, Im), zero-padded to seq_len[0].
/// Level i runs at length seq_len[i] with channels[i]; consecutive levels
/// are 4x apart.  Each level interleaves n_conv[i] residual blocks with
/// n_attn[i] cross-attention layers whose keys and values come from the
/// channel embedding split into cond_tokens tokens.
struct DenoiserSpec {
  int M = 8, K = 4, L = 2, J = 4;
  std::vector<int> seq_len{64, 16, 4};
  std::vector<int> channels{64, 128, 256};
  std::vector<int> n_conv{2, 2, 2};
  std::vector<int> n_attn{2, 2, 2};
  std::vector<int> kernel{3, 3, 3};
  int cond_dim = 256;
  int cond_tokens = 4;
  int time_dim = 128;
  int embed_hidden = 256;
  int heads = 4;
  int groups = 8;
  Backbone backbone = Backbone::unet;
  int mlp_depth = 4;
  int mlp_width = 0;  // 0: matched to the U-Net parameter count

  int blocks() const { return static_cast<int>(channels.size()); }
  int positions() const { return M * (K + J); }
  int input_dim() const { return 2 * positions(); }
  int channel_input_dim() const { return 2 * M * (K + L); }

  void validate() const {
    const auto I = channels.size();
    if (I == 0) throw config_error("denoiser: need at least one block");
    if (seq_len.size() != I || n_conv.size() != I || n_attn.size() != I || kernel.size() != I)
      throw config_error("denoiser: per-block lists must have equal length");
    for (std::size_t i = 0; i < I; ++i) {
      if (seq_len[i] < 1 || channels[i] < 1 || n_conv[i] < 1 || n_attn[i] < 1 || kernel[i] < 1)
        throw config_error("denoiser: all block counts must be >= 1");
      if (kernel[i] % 2 == 0) throw config_error("denoiser: kernel sizes must be odd");
      if (i > 0 && seq_len[i] * 4 != seq_len[i - 1])
        throw config_error("denoiser: sequence lengths must shrink 4x per block");
    }
    if (seq_len[0] < positions()) throw config_error("denoiser: seq_len[0] shorter than M(K+J)");
    if (cond_tokens < 1 || cond_dim % cond_tokens != 0)
      throw config_error("denoiser: cond_dim must split evenly into cond_tokens");
    if (time_dim < 2 || embed_hidden < 1 || heads < 1 || groups < 1 || mlp_depth < 1)
      throw config_error("denoiser: invalid embedding or head settings");
    if (M < 1 || K < 1 || L < 0 || J < 0) throw config_error("denoiser: invalid system dims");
  }

  /// The ladder for a given system: positions padded to a multiple of
  /// 4^(blocks-1), then divided by 4 per block.
  static std::vector<int> ladder_for(int positions, int blocks) {
    int unit = 1;
    for (int i = 1; i < blocks; ++i) unit *= 4;
    int s = (positions + unit - 1) / unit * unit;
    std::vector<int> out;
    for (int i = 0; i < blocks; ++i, s /= 4) out.push_back(s);
    return out;
  }

  /// Copies the system dimensions from cfg and rebuilds the length ladder.
  DenoiserSpec with_system(const SystemConfig& cfg) const {
    DenoiserSpec s = *this;
    s.M = cfg.M;
    s.K = cfg.K;
    s.L = cfg.L;
    s.J = cfg.J;
    s.seq_len = ladder_for(s.positions(), s.blocks());
    return s;
  }
};

inline void to_json(nlohmann::json& j, const DenoiserSpec& s) {
  j = nlohmann::json{{"M", s.M},         {"K", s.K},
                     {"L", s.L},         {"J", s.J},
                     {"seq_len", s.seq_len}, {"channels", s.channels},
                     {"n_conv", s.n_conv},   {"n_attn", s.n_attn},
                     {"kernel", s.kernel},   {"cond_dim", s.cond_dim},
                     {"cond_tokens", s.cond_tokens}, {"time_dim", s.time_dim},
                     {"embed_hidden", s.embed_hidden}, {"heads", s.heads},
                     {"groups", s.groups},   {"backbone", to_string(s.backbone)},
                     {"mlp_depth", s.mlp_depth}, {"mlp_width", s.mlp_width}};
}

inline void from_json(const nlohmann::json& j, DenoiserSpec& s) {
  DenoiserSpec d;
  s.M = j.value("M", d.M);
  s.K = j.value("K", d.K);
  s.L = j.value("L", d.L);
  s.J = j.value("J", d.J);
  s.channels = j.value("channels", d.channels);
  s.n_conv = j.value("n_conv", std::vector<int>(s.channels.size(), 2));
  s.n_attn = j.value("n_attn", std::vector<int>(s.channels.size(), 2));
  s.kernel = j.value("kernel", std::vector<int>(s.channels.size(), 3));
  s.seq_len = j.contains("seq_len") ? j.at("seq_len").get<std::vector<int>>()
                                    : DenoiserSpec::ladder_for(s.positions(), static_cast<int>(s.channels.size()));
  s.cond_dim = j.value("cond_dim", d.cond_dim);
  s.cond_tokens = j.value("cond_tokens", d.cond_tokens);
  s.time_dim = j.value("time_dim", d.time_dim);
  s.embed_hidden = j.value("embed_hidden", d.embed_hidden);
  s.heads = j.value("heads", d.heads);
  s.groups = j.value("groups", d.groups);
  s.backbone = backbone_from_string(j.value("backbone", std::string("unet")));
  s.mlp_depth = j.value("mlp_depth", d.mlp_depth);
  s.mlp_width = j.value("mlp_width", d.mlp_width);
}

/// Per-timestep operation counts of the U-Net: convolutional terms
/// sum_i N_conv,i S_i C_i^2 K_i^2 and attention terms
/// sum_i N_attn,i (S_i^2 C_i + S_i C_i^2).
struct ComplexityEstimate {
  double conv_terms = 0.0;
  double attn_terms = 0.0;
  double per_step() const { return conv_terms + attn_terms; }
  double training_total(double epochs, double records) const { return epochs * records * per_step(); }
  double inference_total(double ddim_steps) const { return ddim_steps * per_step(); }
};

inline ComplexityEstimate complexity_estimate(const DenoiserSpec& spec) {
  spec.validate();
  ComplexityEstimate e;
  for (int i = 0; i < spec.blocks(); ++i) {
    const double S = spec.seq_len[i], C = spec.channels[i], Kk = spec.kernel[i];
    e.conv_terms += spec.n_conv[i] * S * C * C * Kk * Kk;
    e.attn_terms += spec.n_attn[i] * (S * S * C + S * C * C);
  }
  return e;
}

namespace net {

using nn::Conv1d;
using nn::GroupNorm;
using nn::Linear;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

template <class T>
struct ResBlock {
  GroupNorm<T> norm1, norm2;
  Conv1d<T> conv1, conv2;
  Linear<T> time_proj;
  Linear<T> skip;  // only when channels change
  bool has_skip = false;

  ResBlock(ParamStore<T>& ps, const std::string& name, int in, int out, int time_dim, int kernel,
           int groups, Rng& rng)
      : norm1(ps, name + ".norm1", in, groups),
        norm2(ps, name + ".norm2", out, groups),
        conv1(ps, name + ".conv1", in, out, kernel, rng),
        conv2(ps, name + ".conv2", out, out, kernel, rng),
        time_proj(ps, name + ".time", time_dim, out, rng),
        has_skip(in != out) {
    if (has_skip) skip = Linear<T>(ps, name + ".skip", in, out, rng);
  }

  Var<T> operator()(Tape<T>& tp, const Var<T>& x, Eigen::Index S, const Var<T>& temb) const {
    Var<T> h = conv1(tp, tp.silu(norm1(tp, x, S)), S);
    h = tp.add_per_sample(h, time_proj(tp, temb), S);
    h = conv2(tp, tp.silu(norm2(tp, h, S)), S);
    return tp.add(has_skip ? skip(tp, x) : x, h);
  }
};

/// Features query the channel tokens; residual output.
template <class T>
struct CrossAttention {
  GroupNorm<T> norm;
  Linear<T> q, k, v, o;
  int heads = 1;

  CrossAttention(ParamStore<T>& ps, const std::string& name, int channels, int token_dim, int heads_wanted,
                 int groups, Rng& rng)
      : norm(ps, name + ".norm", channels, groups),
        q(ps, name + ".q", channels, channels, rng),
        k(ps, name + ".k", token_dim, channels, rng),
        v(ps, name + ".v", token_dim, channels, rng),
        o(ps, name + ".o", channels, channels, rng),
        heads(nn::norm_groups(channels, heads_wanted)) {}

  Var<T> operator()(Tape<T>& tp, const Var<T>& x, Eigen::Index S, const Var<T>& tokens, Eigen::Index N) const {
    const Var<T> a = tp.attention(q(tp, norm(tp, x, S)), k(tp, tokens), v(tp, tokens), S, N, heads);
    return tp.add(x, o(tp, a));
  }
};

/// One resolution level: residual blocks interleaved with cross-attention.
template <class T>
struct Level {
  std::vector<ResBlock<T>> res;
  std::vector<CrossAttention<T>> attn;

  Var<T> operator()(Tape<T>& tp, Var<T> x, Eigen::Index S, const Var<T>& temb, const Var<T>& tokens,
                    Eigen::Index N) const {
    const std::size_t steps = std::max(res.size(), attn.size());
    for (std::size_t j = 0; j < steps; ++j) {
      if (j < res.size()) x = res[j](tp, x, S, temb);
      if (j < attn.size()) x = attn[j](tp, x, S, tokens, N);
    }
    return x;
  }
};

}  // namespace net

/// Conditional noise predictor eps(z_t, t, c) with either backbone, plus the
/// channel and time embeddings it owns.
template <class T>
class Denoiser {
 public:
  using Mat = RowMat<T>;

  Denoiser(const DenoiserSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng = make_stream(seed, 0, salt::init);
    build_embeddings(rng);
    if (spec_.backbone == Backbone::unet) {
      build_unet(rng);
    } else {
      if (spec_.mlp_width <= 0) spec_.mlp_width = matched_mlp_width(spec_);
      build_mlp(rng);
    }
  }

  const DenoiserSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  /// Two-layer map of standardized [Re(h); Im(h)] rows to d_c features.
  nn::Var<T> embed_channel(nn::Tape<T>& tp, const nn::Var<T>& h_std) const {
    if (h_std.cols() != spec_.channel_input_dim())
      throw std::invalid_argument("embed_channel: expected " + std::to_string(spec_.channel_input_dim()) +
                                  " inputs");
    return cond2_(tp, tp.silu(cond1_(tp, h_std)));
  }

  nn::Var<T> embed_time(nn::Tape<T>& tp, const std::vector<int>& steps) const {
    for (int t : steps)
      if (t < 1) throw std::out_of_range("embed_time: step must be >= 1");
    const nn::Var<T> s = tp.constant(nn::sinusoidal_embedding<T>(steps, spec_.time_dim));
    return time2_(tp, tp.silu(time1_(tp, s)));
  }

  /// Predicted noise for a batch: z_t is (B x 2M(K+J)), c is (B x d_c).
  nn::Var<T> forward(nn::Tape<T>& tp, const nn::Var<T>& z_t, const std::vector<int>& steps,
                     const nn::Var<T>& c) const {
    if (z_t.cols() != spec_.input_dim())
      throw std::invalid_argument("denoise: expected strategy length " + std::to_string(spec_.input_dim()));
    if (static_cast<Eigen::Index>(steps.size()) != z_t.rows() || c.rows() != z_t.rows() ||
        c.cols() != spec_.cond_dim)
      throw std::invalid_argument("denoise: batch shape mismatch");
    const nn::Var<T> temb = embed_time(tp, steps);
    return spec_.backbone == Backbone::unet ? forward_unet(tp, z_t, temb, c) : forward_mlp(tp, z_t, temb, c);
  }

  /// MLP width whose total parameter count is closest to the U-Net's.
  static int matched_mlp_width(const DenoiserSpec& spec) {
    DenoiserSpec u = spec;
    u.backbone = Backbone::unet;
    const double target = double(Denoiser<T>(u, 0).parameter_count()) - shared_count(spec);
    const double in = spec.input_dim() + spec.time_dim + spec.cond_dim;
    const double out = spec.input_dim();
    const double depth = spec.mlp_depth;
    // (in+1) w + (depth-1)(w+1) w + (w+1) out = target
    const double a = depth - 1, b = in + 1 + (depth - 1) + out, c0 = out - target;
    double w = a > 0 ? (-b + std::sqrt(b * b - 4 * a * c0)) / (2 * a) : -c0 / b;
    return std::max(8, static_cast<int>(std::lround(w)));
  }

 private:
  static double shared_count(const DenoiserSpec& s) {
    const double cin = s.channel_input_dim();
    return (cin + 1) * s.embed_hidden + (s.embed_hidden + 1) * s.cond_dim +
           2.0 * (s.time_dim + 1) * s.time_dim;
  }

  void build_embeddings(Rng& rng) {
    cond1_ = nn::Linear<T>(params_, "cond.fc1", spec_.channel_input_dim(), spec_.embed_hidden, rng);
    cond2_ = nn::Linear<T>(params_, "cond.fc2", spec_.embed_hidden, spec_.cond_dim, rng);
    time1_ = nn::Linear<T>(params_, "time.fc1", spec_.time_dim, spec_.time_dim, rng);
    time2_ = nn::Linear<T>(params_, "time.fc2", spec_.time_dim, spec_.time_dim, rng);
  }

  void build_unet(Rng& rng) {
    const int I = spec_.blocks();
    const int tok = spec_.cond_dim / spec_.cond_tokens;
    const auto& C = spec_.channels;
    auto make_level = [&](const std::string& name, int i, int in_first) {
      net::Level<T> lv;
      for (int j = 0; j < spec_.n_conv[i]; ++j)
        lv.res.emplace_back(params_, name + ".res" + std::to_string(j), j == 0 ? in_first : C[i], C[i],
                            spec_.time_dim, spec_.kernel[i], spec_.groups, rng);
      for (int j = 0; j < spec_.n_attn[i]; ++j)
        lv.attn.emplace_back(params_, name + ".attn" + std::to_string(j), C[i], tok, spec_.heads,
                             spec_.groups, rng);
      return lv;
    };
    in_conv_ = nn::Conv1d<T>(params_, "in", 2, C[0], spec_.kernel[0], rng);
    for (int i = 0; i < I; ++i) {
      encoder_.push_back(make_level("enc" + std::to_string(i), i, C[i]));
      if (i + 1 < I) down_.emplace_back(params_, "down" + std::to_string(i), 4 * C[i], C[i + 1], rng);
    }
    {
      net::Level<T> mid;
      mid.res.emplace_back(params_, "mid.res0", C[I - 1], C[I - 1], spec_.time_dim, spec_.kernel[I - 1],
                           spec_.groups, rng);
      mid.attn.emplace_back(params_, "mid.attn0", C[I - 1], tok, spec_.heads, spec_.groups, rng);
      mid.res.emplace_back(params_, "mid.res1", C[I - 1], C[I - 1], spec_.time_dim, spec_.kernel[I - 1],
                           spec_.groups, rng);
      mid_ = std::move(mid);
    }
    for (int i = I - 1; i >= 0; --i) {
      decoder_.push_back(make_level("dec" + std::to_string(i), i, 2 * C[i]));
      if (i > 0) up_.emplace_back(params_, "up" + std::to_string(i), C[i], 4 * C[i - 1], rng);
    }
    out_norm_ = nn::GroupNorm<T>(params_, "out.norm", C[0], spec_.groups);
    out_conv_ = nn::Conv1d<T>(params_, "out.conv", C[0], 2, spec_.kernel[0], rng, /*zero_init=*/true);
  }

  void build_mlp(Rng& rng) {
    const int in = spec_.input_dim() + spec_.time_dim + spec_.cond_dim;
    int prev = in;
    for (int d = 0; d < spec_.mlp_depth; ++d) {
      mlp_.emplace_back(params_, "mlp.fc" + std::to_string(d), prev, spec_.mlp_width, rng);
      prev = spec_.mlp_width;
    }
    mlp_out_ = nn::Linear<T>(params_, "mlp.out", prev, spec_.input_dim(), rng, /*zero_init=*/true);
  }

  // Row (b, p) of the sequence holds (Re, Im) of coefficient p of sample b.
  ad::IndexMap to_sequence_map(Eigen::Index B) const {
    const Eigen::Index n = spec_.positions(), S = spec_.seq_len[0], D = spec_.input_dim();
    ad::IndexMap map(B * S * 2, -1);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index p = 0; p < n; ++p) {
        map[(b * S + p) * 2 + 0] = b * D + p;
        map[(b * S + p) * 2 + 1] = b * D + n + p;
      }
    return map;
  }

  ad::IndexMap from_sequence_map(Eigen::Index B) const {
    const Eigen::Index n = spec_.positions(), S = spec_.seq_len[0], D = spec_.input_dim();
    ad::IndexMap map(B * D);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index p = 0; p < n; ++p) {
        map[b * D + p] = (b * S + p) * 2 + 0;
        map[b * D + n + p] = (b * S + p) * 2 + 1;
      }
    return map;
  }

  nn::Var<T> forward_unet(nn::Tape<T>& tp, const nn::Var<T>& z_t, const nn::Var<T>& temb_raw,
                          const nn::Var<T>& c) const {
    const Eigen::Index B = z_t.rows();
    const int I = spec_.blocks();
    const auto& S = spec_.seq_len;
    const auto& C = spec_.channels;
    const Eigen::Index N = spec_.cond_tokens;
    const nn::Var<T> temb = tp.silu(temb_raw);
    const nn::Var<T> tokens = tp.reshape(c, B * N, spec_.cond_dim / N);

    nn::Var<T> x = tp.gather(z_t, B * S[0], 2, to_sequence_map(B));
    x = in_conv_(tp, x, S[0]);
    std::vector<nn::Var<T>> skips;
    for (int i = 0; i < I; ++i) {
      x = encoder_[i](tp, x, S[i], temb, tokens, N);
      skips.push_back(x);
      if (i + 1 < I) x = down_[i](tp, tp.reshape(x, B * S[i] / 4, 4 * C[i]));
    }
    x = mid_(tp, x, S[I - 1], temb, tokens, N);
    for (int d = 0; d < I; ++d) {
      const int i = I - 1 - d;
      x = tp.concat_cols(x, skips[i]);
      x = decoder_[d](tp, x, S[i], temb, tokens, N);
      if (i > 0) x = tp.reshape(up_[d](tp, x), B * S[i - 1], C[i - 1]);
    }
    x = out_conv_(tp, tp.silu(out_norm_(tp, x, S[0])), S[0]);
    return tp.gather(x, B, spec_.input_dim(), from_sequence_map(B));
  }

  nn::Var<T> forward_mlp(nn::Tape<T>& tp, const nn::Var<T>& z_t, const nn::Var<T>& temb,
                         const nn::Var<T>& c) const {
    nn::Var<T> x = tp.concat_cols(tp.concat_cols(z_t, temb), c);
    for (const auto& layer : mlp_) x = tp.silu(layer(tp, x));
    return mlp_out_(tp, x);
  }

  DenoiserSpec spec_;
  nn::ParamStore<T> params_;
  nn::Linear<T> cond1_, cond2_, time1_, time2_;
  // U-Net
  nn::Conv1d<T> in_conv_;
  std::vector<net::Level<T>> encoder_, decoder_;
  std::vector<nn::Linear<T>> down_, up_;
  net::Level<T> mid_;
  nn::GroupNorm<T> out_norm_;
  nn::Conv1d<T> out_conv_;
  // MLP
  std::vector<nn::Linear<T>> mlp_;
  nn::Linear<T> mlp_out_;
};

/// Standardized real embedding of one composite channel, as a 1-row matrix.
template <class T>
RowMat<T> channel_features(const CVector& h, const Standardizer& s) {
  const RVector x = standardize(real_embedding(h), s, Direction::apply);
  return x.transpose().cast<T>();
}

}  // namespace secdiff

#endif  // SECDIFF_DENOISER_HPP
