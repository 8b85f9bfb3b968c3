#include "emag/ego_motion.hpp"

#include "dlt_internal.hpp"
#include "emag/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace emag::ego {

void FlowField::validate() const {
  if (width < 0 || height < 0) throw ValidationError("flow grid has negative size");
  if (vectors.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ValidationError("flow grid " + std::to_string(width) + "x" + std::to_string(height) +
                          " holds " + std::to_string(vectors.size()) + " vectors");
  }
  if (!(cell_w > 0) || !(cell_h > 0)) throw ValidationError("flow cell size must be positive");
  for (const auto& v : vectors) {
    if (!v.allFinite()) throw ValidationError("flow grid contains non-finite displacement");
  }
}

std::vector<Correspondence> flow_to_correspondences(const FlowField& flow, int stride) {
  if (flow.empty()) return {};
  if (stride < 1 || stride > std::min(flow.width, flow.height)) {
    throw ValidationError("correspondence stride " + std::to_string(stride) +
                          " outside [1, " + std::to_string(std::min(flow.width, flow.height)) +
                          "]");
  }
  std::vector<Correspondence> out;
  out.reserve(static_cast<std::size_t>((flow.width + stride - 1) / stride) *
              static_cast<std::size_t>((flow.height + stride - 1) / stride));
  for (int j = 0; j < flow.height; j += stride) {
    for (int i = 0; i < flow.width; i += stride) {
      const Eigen::Vector2d src = flow.center(i, j);
      out.push_back({src, src + flow.at(i, j)});
    }
  }
  return out;
}

Homography solve_homography_dlt(std::span<const Correspondence> corrs) {
  const std::size_t n = corrs.size();
  if (n < 4) {
    throw InsufficientDataError("DLT needs at least 4 correspondences, got " + std::to_string(n));
  }
  const auto ts = detail::hartley_transform(n, [&](std::size_t i) { return corrs[i].src; });
  const auto td = detail::hartley_transform(n, [&](std::size_t i) { return corrs[i].dst; });
  if (!ts || !td) throw DegenerateGeometryError("DLT: all points coincide");

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d p = detail::apply(*ts, corrs[i].src);
    const Eigen::Vector2d q = detail::apply(*td, corrs[i].dst);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(r + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  // Eight independent constraints are needed for a unique null vector.
  if (s.size() < 8 || !(s(7) > 1e-10 * s(0))) {
    throw DegenerateGeometryError("DLT: correspondence set is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Homography hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Homography full = td->inverse() * hn * (*ts);
  if (!full.allFinite()) throw DegenerateGeometryError("DLT: non-finite solution");
  return normalize_homography(full);
}

double reprojection_error(const Homography& h, const Correspondence& c) {
  const Eigen::Vector3d q = h * c.src.homogeneous();
  if (std::abs(q.z()) <= 1e-12) throw ProjectionError("point projects to infinity");
  return (q.hnormalized() - c.dst).norm();
}

Homography normalize_homography(const Homography& h) {
  const double pivot = h(2, 2);
  if (!(std::abs(pivot) > 1e-12)) {
    throw NormalizationError("homography h33 too close to zero to normalize");
  }
  Homography out = h / pivot;
  out(2, 2) = 1.0;
  return out;
}

FrameEgoMotion estimate_frame_homography(const FlowField& flow, const RansacParams& params) {
  try {
    const auto corrs = flow_to_correspondences(flow, params.stride);
    const auto fit = ransac_homography(corrs, params.iterations, params.inlier_threshold_px,
                                       params.seed);
    return {normalize_homography(fit.model), false};
  } catch (const InsufficientDataError&) {
  } catch (const DegenerateGeometryError&) {
  } catch (const NormalizationError&) {
  }
  return {Homography::Identity(), true};
}

Eigen::Vector2d background_flow_ego(const FlowField& flow, std::span<const Box> hand_boxes) {
  if (flow.empty()) throw ValidationError("background flow of an empty flow grid");
  Eigen::Vector2d outside = Eigen::Vector2d::Zero();
  Eigen::Vector2d all = Eigen::Vector2d::Zero();
  std::size_t n_outside = 0;
  for (int j = 0; j < flow.height; ++j) {
    for (int i = 0; i < flow.width; ++i) {
      const Eigen::Vector2d c = flow.center(i, j);
      const Eigen::Vector2d& d = flow.at(i, j);
      all += d;
      const bool covered = std::any_of(hand_boxes.begin(), hand_boxes.end(),
                                       [&](const Box& b) { return b.contains(c); });
      if (!covered) {
        outside += d;
        ++n_outside;
      }
    }
  }
  if (n_outside == 0) return all / static_cast<double>(flow.vectors.size());
  return outside / static_cast<double>(n_outside);
}

}  // namespace emag::ego
