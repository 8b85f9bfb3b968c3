#include "emag/ego_motion.hpp"

#include "emag/errors.hpp"

#include <cmath>

namespace emag::ego {

StandardizationStats StandardizationStats::fit(std::span<const Eigen::VectorXd> rows, double floor) {
  if (rows.empty()) throw ValidationError("standardization stats of an empty split");
  const Eigen::Index d = rows.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("standardization rows differ in dimension");
    sum += r;
  }
  const double n = static_cast<double>(rows.size());
  StandardizationStats s;
  s.mean = sum / n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& r : rows) var += (r - s.mean).cwiseAbs2();
  s.std = (var / n).cwiseSqrt().cwiseMax(floor);
  return s;
}

StandardizationStats StandardizationStats::identity(Eigen::Index dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Eigen::VectorXd StandardizationStats::standardize(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw DimensionError("standardize: dimension mismatch");
  return (v - mean).cwiseQuotient(std);
}

Eigen::VectorXd StandardizationStats::inverse_standardize(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw DimensionError("inverse_standardize: dimension mismatch");
  return v.cwiseProduct(std) + mean;
}

}  // namespace emag::ego
