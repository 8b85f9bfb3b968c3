#pragma once

// Ego-motion from dense optical flow: flow grid -> point correspondences ->
// RANSAC over minimal four-point homographies -> normalized DLT refit.

#include "emag/geometry.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <span>
#include <vector>

namespace emag::ego {

// Dense grid of per-cell pixel displacements between two frames. Cell (i, j)
// covers pixels [i * cell_w, (i + 1) * cell_w) x [j * cell_h, (j + 1) * cell_h).
struct FlowField {
  int width = 0;
  int height = 0;
  double cell_w = 1.0;
  double cell_h = 1.0;
  // Row-major: vectors[j * width + i]
  std::vector<Eigen::Vector2d> vectors;

  bool empty() const { return vectors.empty(); }
  Eigen::Vector2d center(int i, int j) const { return {(i + 0.5) * cell_w, (j + 0.5) * cell_h}; }
  const Eigen::Vector2d& at(int i, int j) const { return vectors[static_cast<std::size_t>(j) * width + i]; }

  // Throws ValidationError when the vector count or values are invalid.
  void validate() const;
};

struct Correspondence {
  Eigen::Vector2d src;
  Eigen::Vector2d dst;
};

std::vector<Correspondence> flow_to_correspondences(const FlowField& flow, int stride);

// Least-squares homography via Hartley-normalized DLT, scaled so h33 = 1.
Homography solve_homography_dlt(std::span<const Correspondence> corrs);

// Distance between the dehomogenized projection of c.src and c.dst.
double reprojection_error(const Homography& h, const Correspondence& c);

Homography normalize_homography(const Homography& h);

struct RansacParams {
  int iterations = 500;
  double inlier_threshold_px = 1.0;
  // Grid cells between sampled correspondences.
  int stride = 4;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography model = Homography::Identity();
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
};

// Per-iteration record, for diagnostics and tests.
struct RansacTrace {
  std::vector<int> candidate_inliers;
  int degenerate_iterations = 0;
};

// Consensus estimate over minimal four-point samples. The winner (most
// inliers, then lowest mean inlier error) is refit on its inliers; the refit
// is kept only if it retains at least as many inliers as the winner.
RansacResult ransac_homography(std::span<const Correspondence> corrs, int iterations,
                               double inlier_threshold_px, std::uint64_t rng_seed,
                               RansacTrace* trace = nullptr);

struct FrameEgoMotion {
  Homography h = Homography::Identity();
  // Estimation failed and h is the identity substitute.
  bool failed = false;
};

// flow -> correspondences -> RANSAC -> normalize; failures yield identity.
FrameEgoMotion estimate_frame_homography(const FlowField& flow, const RansacParams& params);

// Mean displacement of cells whose centers lie outside every box (pixel
// units). Falls back to all cells when the boxes cover the whole grid.
Eigen::Vector2d background_flow_ego(const FlowField& flow, std::span<const Box> hand_boxes);

// Per-dimension mean / standard deviation with a floor on the deviation.
struct StandardizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static constexpr double kStdFloor = 1e-6;

  static StandardizationStats fit(std::span<const Eigen::VectorXd> rows, double floor = kStdFloor);
  static StandardizationStats identity(Eigen::Index dim);

  Eigen::Index dim() const { return mean.size(); }
  Eigen::VectorXd standardize(const Eigen::VectorXd& v) const;
  Eigen::VectorXd inverse_standardize(const Eigen::VectorXd& v) const;
};

}  // namespace emag::ego
