// Reference implementations written directly from the scalar formulas, used
// to cross-check the library.  Deliberately loop-based and free of the
// library's helpers.
#ifndef SECDIFF_TEST_ORACLES_HPP
#define SECDIFF_TEST_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

namespace oracle {

using cd = std::complex<double>;
using CVec = std::vector<cd>;

// h^H x
inline cd inner(const CVec& h, const CVec& x) {
  cd s = 0.0;
  for (std::size_t m = 0; m < h.size(); ++m) s += std::conj(h[m]) * x[m];
  return s;
}

struct Problem {
  std::vector<CVec> users, eves;  // channel vectors
  std::vector<CVec> w, v;         // beam and AN columns
  double noise_ratio = 1.0;       // sigma^2 / P
};

// log2(1 + |h^H w_k|^2 / (sum_{i!=k} |h^H w_i|^2 + sum_j |h^H v_j|^2 + noise))
inline double rate(const Problem& p, const CVec& h, std::size_t k) {
  const double sig = std::norm(inner(h, p.w[k]));
  double den = p.noise_ratio;
  for (std::size_t i = 0; i < p.w.size(); ++i)
    if (i != k) den += std::norm(inner(h, p.w[i]));
  for (const auto& vj : p.v) den += std::norm(inner(h, vj));
  return std::log2(1.0 + sig / den);
}

inline double exact_secrecy(const Problem& p, std::size_t k) {
  double worst = 0.0;
  bool any = false;
  for (const auto& e : p.eves) {
    const double r = rate(p, e, k);
    worst = any ? std::max(worst, r) : r;
    any = true;
  }
  return std::max(0.0, rate(p, p.users[k], k) - (any ? worst : 0.0));
}

// Unclamped smooth margin with the LogSumExp evaluated in extended precision.
inline double smooth_margin(const Problem& p, std::size_t k, double alpha) {
  if (p.eves.empty()) return rate(p, p.users[k], k);
  long double mx = -std::numeric_limits<long double>::infinity();
  std::vector<long double> r;
  for (const auto& e : p.eves) {
    r.push_back(rate(p, e, k));
    mx = std::max(mx, r.back());
  }
  long double s = 0.0L;
  for (long double x : r) s += std::exp((x - mx) / alpha);
  return rate(p, p.users[k], k) - static_cast<double>(mx + alpha * std::log(s));
}

inline double exact_sum(const Problem& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.users.size(); ++k) s += exact_secrecy(p, k);
  return s;
}

inline double smooth_sum(const Problem& p, double alpha) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.users.size(); ++k) s += std::max(0.0, smooth_margin(p, k, alpha));
  return s;
}

}  // namespace oracle

#endif
