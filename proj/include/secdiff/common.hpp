#ifndef SECDIFF_COMMON_HPP
#define SECDIFF_COMMON_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace secdiff {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Raised when a configuration (system, training, sweep) is invalid.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a stage of an experiment fails after its inputs validated.
class stage_error : public std::runtime_error {
 public:
  stage_error(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Key for an independent random stream derived from a root seed, a record
/// index and a purpose tag.  Streams with distinct keys never share state, so
/// records can be generated in any order.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index,
                                std::uint64_t salt = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ (salt * 0xd1b54a32d192ed03ULL));
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  const std::uint64_t key = stream_key(seed, index, salt);
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

// Purpose tags so that different consumers of one record key never collide.
namespace salt {
inline constexpr std::uint64_t placement = 1;
inline constexpr std::uint64_t fading = 2;
inline constexpr std::uint64_t oracle = 3;
inline constexpr std::uint64_t test_split = 4;
inline constexpr std::uint64_t sampler = 5;
inline constexpr std::uint64_t training = 6;
inline constexpr std::uint64_t finetune = 7;
inline constexpr std::uint64_t init = 8;
inline constexpr std::uint64_t sweep = 9;
}  // namespace salt

/// Draws a standard normal value.
inline double normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

/// Draws a circularly-symmetric complex Gaussian with unit variance.
inline cplx complex_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(0.5));
  const double re = dist(rng);
  const double im = dist(rng);
  return {re, im};
}

}  // namespace secdiff

#endif  // SECDIFF_COMMON_HPP
