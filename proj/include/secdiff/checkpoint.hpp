#ifndef SECDIFF_CHECKPOINT_HPP
#define SECDIFF_CHECKPOINT_HPP

#include "secdiff/denoiser.hpp"
#include "secdiff/diffusion.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

namespace secdiff {

inline constexpr int kCheckpointVersion = 1;

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A trained noise predictor together with everything needed to sample from
/// it: architecture, schedule, standardizers and the system it was trained on.
struct Checkpoint {
  SystemConfig cfg;
  DenoiserSpec spec;
  NoiseSchedule schedule;
  Standardizer h_standardizer, z_standardizer;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string stage = "stage1";
  nlohmann::json extra = nlohmann::json::object();
  std::shared_ptr<Denoiser<float>> net;

  /// Deep copy: parameters are duplicated, not shared.
  Checkpoint clone() const {
    Checkpoint c = *this;
    c.net = std::make_shared<Denoiser<float>>(spec, seed);
    copy_params(*net, *c.net);
    return c;
  }

  static void copy_params(const Denoiser<float>& from, Denoiser<float>& to) {
    const auto& a = from.params().entries();
    auto& b = to.params().entries();
    if (a.size() != b.size()) throw checkpoint_error("parameter layout mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].var.rows() != b[i].var.rows() || a[i].var.cols() != b[i].var.cols())
        throw checkpoint_error("parameter shape mismatch at " + a[i].name);
      b[i].var.mutable_value() = a[i].var.value();
    }
  }
};

namespace detail {

inline constexpr char kParamMagic[4] = {'S', 'D', 'P', 'R'};

inline std::uint32_t to_le(std::uint32_t u) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(u);
  return u;
}

}  // namespace detail

/// Writes `params.bin` (magic, count, float32 little-endian values in
/// registration order) and `model.json`.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::uint32_t> words;
  std::uint64_t count = 0;
  for (const auto& e : ck.net->params().entries()) {
    const auto& v = e.var.value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint32_t u;
      const float f = v.data()[i];
      std::memcpy(&u, &f, 4);
      words.push_back(detail::to_le(u));
    }
    count += static_cast<std::uint64_t>(v.size());
  }
  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot write " + (dir / "params.bin").string());
    out.write(detail::kParamMagic, 4);
    const std::uint32_t lo = detail::to_le(std::uint32_t(count & 0xffffffffu));
    const std::uint32_t hi = detail::to_le(std::uint32_t(count >> 32));
    out.write(reinterpret_cast<const char*>(&lo), 4);
    out.write(reinterpret_cast<const char*>(&hi), 4);
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  }
  nlohmann::json names = nlohmann::json::array();
  for (const auto& e : ck.net->params().entries())
    names.push_back({{"name", e.name}, {"shape", {e.var.rows(), e.var.cols()}}});
  nlohmann::json m{{"version", kCheckpointVersion},
                   {"cfg", ck.cfg},
                   {"spec", ck.spec},
                   {"schedule", ck.schedule},
                   {"standardizers", {{"h", ck.h_standardizer}, {"z", ck.z_standardizer}}},
                   {"seed", ck.seed},
                   {"epochs", ck.epochs},
                   {"stage", ck.stage},
                   {"param_count", count},
                   {"params_file", "params.bin"},
                   {"params", names},
                   {"extra", ck.extra}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw checkpoint_error("cannot write model.json");
  out << m.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = dir / "model.json";
  if (!std::filesystem::exists(mpath)) throw checkpoint_error("missing checkpoint: " + mpath.string());
  nlohmann::json m;
  Checkpoint ck;
  std::uint64_t count = 0;
  try {
    std::ifstream in(mpath);
    m = nlohmann::json::parse(in);
    if (m.at("version").get<int>() != kCheckpointVersion) throw checkpoint_error("checkpoint version mismatch");
    ck.cfg = m.at("cfg").get<SystemConfig>();
    ck.spec = m.at("spec").get<DenoiserSpec>();
    ck.schedule = m.at("schedule").get<NoiseSchedule>();
    ck.h_standardizer = m.at("standardizers").at("h").get<Standardizer>();
    ck.z_standardizer = m.at("standardizers").at("z").get<Standardizer>();
    ck.seed = m.at("seed").get<std::uint64_t>();
    ck.epochs = m.at("epochs").get<int>();
    ck.stage = m.value("stage", std::string("stage1"));
    ck.extra = m.value("extra", nlohmann::json::object());
    count = m.at("param_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(std::string("malformed model.json: ") + e.what());
  }
  ck.net = std::make_shared<Denoiser<float>>(ck.spec, ck.seed);
  if (ck.net->parameter_count() != count) throw checkpoint_error("parameter count disagrees with spec");

  std::ifstream in(dir / "params.bin", std::ios::binary);
  if (!in) throw checkpoint_error("missing params.bin");
  char magic[4];
  std::uint32_t lo = 0, hi = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&lo), 4);
  in.read(reinterpret_cast<char*>(&hi), 4);
  if (!in || std::memcmp(magic, detail::kParamMagic, 4) != 0) throw checkpoint_error("bad params.bin header");
  const std::uint64_t stored = (std::uint64_t(detail::to_le(hi)) << 32) | detail::to_le(lo);
  if (stored != count) throw checkpoint_error("params.bin count disagrees with model.json");
  for (auto& e : ck.net->params().entries()) {
    auto& v = e.var.mutable_value();
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(v.size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw checkpoint_error("params.bin truncated at " + e.name);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const std::uint32_t u = detail::to_le(buf[i]);
      std::memcpy(v.data() + i, &u, 4);
    }
  }
  return ck;
}

/// Noise predictor in the original (double) sample space for a fixed set of
/// per-row conditions; rows of z must align with rows of `cond`.
inline EpsFn make_eps_fn(const Checkpoint& ck, RowMat<float> cond) {
  auto net = ck.net;
  auto c = std::make_shared<RowMat<float>>(std::move(cond));
  return [net, c](const Eigen::MatrixXd& z, int t) -> Eigen::MatrixXd {
    if (z.rows() != c->rows()) throw std::invalid_argument("eps_fn: batch does not match conditions");
    nn::Tape<float> tp(false);
    const auto out = net->forward(tp, tp.constant(z.cast<float>()), std::vector<int>(z.rows(), t),
                                  tp.constant(*c));
    return out.value().cast<double>();
  };
}

/// Channel embeddings for a list of composite channels.
inline RowMat<float> embed_channels(const Checkpoint& ck, const std::vector<CVector>& hs) {
  RowMat<float> x(static_cast<Eigen::Index>(hs.size()), ck.spec.channel_input_dim());
  for (std::size_t i = 0; i < hs.size(); ++i) x.row(i) = channel_features<float>(hs[i], ck.h_standardizer);
  nn::Tape<float> tp(false);
  return ck.net->embed_channel(tp, tp.constant(std::move(x))).value();
}

}  // namespace secdiff

#endif  // SECDIFF_CHECKPOINT_HPP
