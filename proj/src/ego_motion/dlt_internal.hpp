#pragma once

#include "emag/ego_motion.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace emag::ego::detail {

// Similarity that moves the centroid to the origin and scales the mean
// distance to sqrt(2). Empty when every point coincides.
template <typename PointAt>
std::optional<Eigen::Matrix3d> hartley_transform(std::size_t n, PointAt point) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < n; ++i) centroid += point(i);
  centroid /= static_cast<double>(n);
  double mean_dist = 0;
  for (std::size_t i = 0; i < n; ++i) mean_dist += (point(i) - centroid).norm();
  mean_dist /= static_cast<double>(n);
  if (!(mean_dist > 1e-12)) return std::nullopt;
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return t;
}

inline Eigen::Vector2d apply(const Eigen::Matrix3d& t, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = t * p.homogeneous();
  return q.hnormalized();
}

}  // namespace emag::ego::detail
