#ifndef SECDIFF_DATAGEN_HPP
#define SECDIFF_DATAGEN_HPP

#include "secdiff/baselines.hpp"
#include "secdiff/standardizer.hpp"

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace secdiff {

inline constexpr int kDatasetVersion = 1;

struct dataset_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// manifest.json absent or not parseable.
struct manifest_error : dataset_error {
  using dataset_error::dataset_error;
};
/// Binary payload truncated, inconsistent across files, or non-finite.
struct corrupt_data_error : dataset_error {
  using dataset_error::dataset_error;
};
/// Manifest counts or dimensions disagree with the payload or the config.
struct shape_mismatch_error : dataset_error {
  using dataset_error::dataset_error;
};
struct version_mismatch_error : dataset_error {
  using dataset_error::dataset_error;
};

/// Rewrites a strategy into a rate-equivalent canonical form so that the
/// learned map from channels to labels is single-valued:
/// each w_k is rotated so that h_k^H w_k is real and non-negative, and V is
/// replaced by the lower-trapezoidal factor R^H of V V^H (QR of V^H) with a
/// non-negative real diagonal.  Every rate depends on V only through V V^H.
inline Strategy canonicalize(const ChannelSet& cs, const Strategy& s) {
  Strategy out = s;
  for (Eigen::Index k = 0; k < out.W.cols(); ++k) {
    const cplx gain = (cs.H_users.row(k).conjugate() * out.W.col(k))(0);  // h_k^H w_k
    if (std::abs(gain) > 0.0) out.W.col(k) *= std::conj(gain) / std::abs(gain);
  }
  const Eigen::Index J = out.V.cols(), M = out.V.rows();
  if (J > 0 && J <= M) {
    Eigen::HouseholderQR<CMatrix> qr(out.V.adjoint());
    CMatrix R = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < J; ++j) {
      const cplx d = R(j, j);
      if (std::abs(d) > 0.0) R.row(j) *= std::conj(d) / std::abs(d);
    }
    out.V = R.adjoint();
  }
  return out;
}

/// Paired channel/strategy records with float32-representable payloads.
/// Row n of H is [Re(h_n); Im(h_n)], row n of Z is z_n = [Re(u_n); Im(u_n)].
struct DatasetBundle {
  SystemConfig cfg;
  OracleOptions oracle;
  RowMat<double> H;
  RowMat<double> Z;
  RVector rsum;
  Standardizer h_standardizer, z_standardizer;
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> seeds;  // per-record keys into draw_realization
  double min_label = -std::numeric_limits<double>::infinity();

  std::size_t size() const { return static_cast<std::size_t>(H.rows()); }
  CVector channel(std::size_t n) const {
    const Eigen::Index d = cfg.channel_dim();
    CVector h(d);
    for (Eigen::Index i = 0; i < d; ++i) h(i) = cplx(H(n, i), H(n, d + i));
    return h;
  }
  ChannelSet channel_set(std::size_t n) const { return channel_set_from_composite(channel(n), cfg.M, cfg.K, cfg.L); }
  RVector strategy_vec(std::size_t n) const { return Z.row(static_cast<Eigen::Index>(n)).transpose(); }
};

struct DatasetOptions {
  std::size_t N = 4096;
  OracleOptions oracle;
  bool canonical_labels = true;
  double min_label = -std::numeric_limits<double>::infinity();  // records below are dropped
  std::uint64_t index_offset = 0;
};

namespace detail {

inline RVector round_to_float(const RVector& x) { return x.cast<float>().cast<double>(); }

/// Float-rounded z whose power stays within the unit budget.
inline RVector feasible_float(RVector z) {
  RVector zf = round_to_float(z);
  while (zf.squaredNorm() > 1.0) {
    z *= 1.0 - 1e-7;
    zf = round_to_float(z);
  }
  return zf;
}

inline std::vector<RVector> rows_of(const RowMat<double>& m) {
  std::vector<RVector> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m.row(r).transpose());
  return out;
}

}  // namespace detail

/// One labeled record keyed by (seed, index).
struct LabeledRecord {
  RVector h, z;
  double rsum = 0.0;
};

inline LabeledRecord label_record(const SystemConfig& cfg, std::uint64_t seed, std::uint64_t index,
                                  const OracleOptions& oracle, bool canonical) {
  const ChannelSet cs0 = draw_realization(cfg, seed, index);
  LabeledRecord rec;
  rec.h = detail::round_to_float(real_embedding(cs0.h_composite));
  const ChannelSet cs = channel_set_from_composite(
      [&] {
        CVector h(cfg.channel_dim());
        const Eigen::Index d = cfg.channel_dim();
        for (Eigen::Index i = 0; i < d; ++i) h(i) = cplx(rec.h(i), rec.h(d + i));
        return h;
      }(),
      cfg.M, cfg.K, cfg.L);
  Rng rng = make_stream(seed, index, salt::oracle);
  Strategy s = oracle_optimize(cs, cfg, oracle, rng).strategy;
  if (canonical) s = canonicalize(cs, s);
  rec.z = detail::feasible_float(strategy_to_real(s));
  rec.rsum = double(float(exact_rsum(cs, rec.z, cfg)));
  return rec;
}

/// Draws channels, labels them with the oracle, and fits both standardizers.
/// Each record depends only on (cfg.seed, index), so generation order is
/// irrelevant.
inline DatasetBundle generate_dataset(const SystemConfig& cfg, const DatasetOptions& opts) {
  cfg.validate();
  opts.oracle.validate();
  if (opts.N < 1) throw std::invalid_argument("generate_dataset: N must be >= 1");
  DatasetBundle b;
  b.cfg = cfg;
  b.oracle = opts.oracle;
  b.root_seed = cfg.seed;
  b.min_label = opts.min_label;
  std::vector<LabeledRecord> recs;
  for (std::size_t n = 0; n < opts.N; ++n) {
    const std::uint64_t idx = opts.index_offset + n;
    LabeledRecord r = label_record(cfg, cfg.seed, idx, opts.oracle, opts.canonical_labels);
    if (r.rsum < opts.min_label) continue;
    recs.push_back(std::move(r));
    b.seeds.push_back(idx);
  }
  if (recs.empty()) throw std::runtime_error("generate_dataset: min_label filtered every record");
  const auto N = static_cast<Eigen::Index>(recs.size());
  b.H.resize(N, cfg.real_channel_dim());
  b.Z.resize(N, cfg.real_strategy_dim());
  b.rsum.resize(N);
  for (Eigen::Index n = 0; n < N; ++n) {
    b.H.row(n) = recs[n].h.transpose();
    b.Z.row(n) = recs[n].z.transpose();
    b.rsum(n) = recs[n].rsum;
  }
  if (N >= 2) {
    b.h_standardizer = fit_standardizer(detail::rows_of(b.H));
    b.z_standardizer = fit_standardizer(detail::rows_of(b.Z));
  } else {
    // A single record has no spread; use an identity-scale standardizer.
    b.h_standardizer = {b.H.row(0).transpose(), RVector::Ones(b.H.cols()), 1e-8};
    b.z_standardizer = {b.Z.row(0).transpose(), RVector::Ones(b.Z.cols()), 1e-8};
  }
  return b;
}

namespace detail {

inline void write_f32(const std::filesystem::path& p, const double* data, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : buf) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + p.string());
}

inline std::vector<double> read_f32(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw corrupt_data_error("missing data file " + p.filename().string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw corrupt_data_error(p.filename().string() + ": size not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    float f;
    std::memcpy(&f, &u, 4);
    if (!std::isfinite(f)) throw corrupt_data_error(p.filename().string() + ": non-finite value");
    out[i] = f;
  }
  return out;
}

}  // namespace detail

inline void save_dataset(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t N = b.size();
  detail::write_f32(dir / "h.f32", b.H.data(), static_cast<std::size_t>(b.H.size()));
  detail::write_f32(dir / "z.f32", b.Z.data(), static_cast<std::size_t>(b.Z.size()));
  detail::write_f32(dir / "rsum.f32", b.rsum.data(), static_cast<std::size_t>(b.rsum.size()));
  nlohmann::json m;
  m["version"] = kDatasetVersion;
  m["cfg"] = b.cfg;
  m["oracle"] = b.oracle;
  m["N"] = N;
  m["dims"] = {{"h", b.H.cols()}, {"z", b.Z.cols()}, {"rsum", 1}};
  m["standardizers"] = {{"h", b.h_standardizer}, {"z", b.z_standardizer}};
  m["seeds"] = {{"root", b.root_seed}, {"record_index", b.seeds}};
  m["min_label"] = std::isfinite(b.min_label) ? nlohmann::json(b.min_label) : nlohmann::json(nullptr);
  m["encoding"] = "float32 little-endian, record-major";
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

inline DatasetBundle load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw manifest_error("missing manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    std::ifstream in(mpath);
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(std::string("unparseable manifest: ") + e.what());
  }
  DatasetBundle b;
  std::size_t N = 0;
  Eigen::Index dh = 0, dz = 0;
  try {
    if (m.at("version").get<int>() != kDatasetVersion)
      throw version_mismatch_error("dataset version " + m.at("version").dump() + ", expected " +
                                   std::to_string(kDatasetVersion));
    b.cfg = m.at("cfg").get<SystemConfig>();
    b.oracle = m.value("oracle", OracleOptions{});
    N = m.at("N").get<std::size_t>();
    dh = m.at("dims").at("h").get<Eigen::Index>();
    dz = m.at("dims").at("z").get<Eigen::Index>();
    b.h_standardizer = m.at("standardizers").at("h").get<Standardizer>();
    b.z_standardizer = m.at("standardizers").at("z").get<Standardizer>();
    b.root_seed = m.at("seeds").at("root").get<std::uint64_t>();
    b.seeds = m.at("seeds").at("record_index").get<std::vector<std::uint64_t>>();
    if (m.contains("min_label") && !m["min_label"].is_null()) b.min_label = m["min_label"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(std::string("malformed manifest: ") + e.what());
  }
  if (dh != b.cfg.real_channel_dim() || dz != b.cfg.real_strategy_dim())
    throw shape_mismatch_error("manifest dims disagree with its cfg");
  if (b.seeds.size() != N) throw shape_mismatch_error("manifest N disagrees with its seed list");
  if (b.h_standardizer.dim() != dh || b.z_standardizer.dim() != dz)
    throw shape_mismatch_error("standardizer length disagrees with dims");

  const auto h = detail::read_f32(dir / "h.f32");
  const auto z = detail::read_f32(dir / "z.f32");
  const auto r = detail::read_f32(dir / "rsum.f32");
  if (h.size() % static_cast<std::size_t>(dh) != 0 || z.size() % static_cast<std::size_t>(dz) != 0)
    throw corrupt_data_error("payload is not a whole number of records");
  const std::size_t nh = h.size() / dh, nz = z.size() / dz, nr = r.size();
  if (nh != nz || nz != nr) throw corrupt_data_error("payload files disagree on the record count");
  if (nh != N)
    throw shape_mismatch_error("manifest N=" + std::to_string(N) + " but payload holds " + std::to_string(nh));

  b.H = Eigen::Map<const RowMat<double>>(h.data(), static_cast<Eigen::Index>(N), dh);
  b.Z = Eigen::Map<const RowMat<double>>(z.data(), static_cast<Eigen::Index>(N), dz);
  b.rsum = Eigen::Map<const RVector>(r.data(), static_cast<Eigen::Index>(N));
  return b;
}

/// Held-out channels drawn from a stream disjoint from any training set.
inline std::vector<ChannelSet> test_channels(const SystemConfig& cfg, std::size_t count, std::uint64_t seed) {
  const std::uint64_t key = stream_key(seed, 0, salt::test_split);
  std::vector<ChannelSet> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) out.push_back(draw_realization(cfg, key, n));
  return out;
}

}  // namespace secdiff

#endif  // SECDIFF_DATAGEN_HPP
