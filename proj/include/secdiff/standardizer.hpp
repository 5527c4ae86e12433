#ifndef SECDIFF_STANDARDIZER_HPP
#define SECDIFF_STANDARDIZER_HPP

#include "secdiff/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace secdiff {

/// Feature-wise affine normalization fitted on a dataset.
struct Standardizer {
  RVector mean;
  RVector std;
  double epsilon = 1e-8;

  Eigen::Index dim() const { return mean.size(); }
};

enum class Direction { apply, invert };

/// Population mean and std per dimension; std is floored at epsilon.
inline Standardizer fit_standardizer(const std::vector<RVector>& values, double epsilon = 1e-8) {
  if (values.size() < 2) throw std::invalid_argument("fit_standardizer: need at least two vectors");
  const Eigen::Index d = values.front().size();
  Standardizer s;
  s.epsilon = epsilon;
  s.mean = RVector::Zero(d);
  for (const auto& v : values) {
    if (v.size() != d) throw std::invalid_argument("fit_standardizer: ragged input");
    s.mean += v;
  }
  s.mean /= double(values.size());
  RVector var = RVector::Zero(d);
  for (const auto& v : values) var += (v - s.mean).cwiseAbs2();
  var /= double(values.size());
  s.std = var.cwiseSqrt().cwiseMax(epsilon);
  return s;
}

inline RVector standardize(const RVector& x, const Standardizer& s, Direction dir) {
  if (x.size() != s.dim()) throw std::invalid_argument("standardize: length mismatch");
  if (dir == Direction::apply) return (x - s.mean).cwiseQuotient(s.std);
  return x.cwiseProduct(s.std) + s.mean;
}

inline void to_json(nlohmann::json& j, const Standardizer& s) {
  j = nlohmann::json{{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                     {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())},
                     {"epsilon", s.epsilon}};
}

inline void from_json(const nlohmann::json& j, Standardizer& s) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto d = j.at("std").get<std::vector<double>>();
  if (m.size() != d.size()) throw std::invalid_argument("standardizer: mean/std length mismatch");
  s.mean = Eigen::Map<const RVector>(m.data(), static_cast<Eigen::Index>(m.size()));
  s.std = Eigen::Map<const RVector>(d.data(), static_cast<Eigen::Index>(d.size()));
  s.epsilon = j.value("epsilon", 1e-8);
}

}  // namespace secdiff

#endif  // SECDIFF_STANDARDIZER_HPP
