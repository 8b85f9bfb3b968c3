#pragma once

// Training-free hand trajectory baselines: constant velocity and a SORT-style
// Kalman box tracker.

#include "emag/geometry.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace emag::baselines {

enum class HandSide { kLeft, kRight };

// Observed history of one hand in normalized image coordinates (height = 1).
struct HandTrack {
  HandSide side = HandSide::kLeft;
  std::vector<std::optional<Eigen::Vector2d>> centers;
  std::vector<std::optional<Box>> boxes;

  static HandTrack from_boxes(HandSide side, const std::vector<std::optional<Box>>& boxes);

  std::size_t steps() const { return centers.size(); }
  bool forecastable() const;
};

// nullopt marks an unforecastable track (no observation at all).
using Trajectory = std::vector<Eigen::Vector2d>;

// p(T) + f * (p(T) - p(T-1)); repeats the last observed position when the
// two final steps are not both observed.
std::optional<Trajectory> cvm_forecast(const HandTrack& track, int future_steps);

struct KalmanParams {
  // Diagonal of R for (cx, cy, s, r).
  Eigen::Vector4d measurement_noise{1e-2, 1e-2, 1e-1, 1e-1};
  // Multiplies the SORT process-noise pattern diag(1,1,1,1,1e-2,1e-2,1e-4).
  double process_noise_scale = 1.0;
  double initial_covariance = 10.0;
  double initial_velocity_inflation = 1000.0;
  // Box assumed for steps that carry a center but no box.
  double default_box_size = 0.1;
};

// Constant-velocity filter over (cx, cy, s, r, vcx, vcy, vs); the aspect
// ratio r has no velocity term.
class KalmanBoxFilter {
 public:
  using State = Eigen::Matrix<double, 7, 1>;
  using Covariance = Eigen::Matrix<double, 7, 7>;

  KalmanBoxFilter(const Box& first, const KalmanParams& params);

  void predict();
  void update(const Box& box);

  const State& state() const { return x_; }
  const Covariance& covariance() const { return p_; }
  Eigen::Vector2d center() const { return x_.head<2>(); }

  static Eigen::Vector4d to_measurement(const Box& b);

 private:
  State x_;
  Covariance p_;
  Covariance f_;
  Covariance q_;
  Eigen::Matrix<double, 4, 7> h_;
  Eigen::Matrix4d r_;
};

// Initializes on the first observation, predict+update on later observed
// steps, predict-only on gaps, then F further predictions.
std::optional<Trajectory> kalman_forecast(const HandTrack& track, int future_steps,
                                          const KalmanParams& params = {});

}  // namespace emag::baselines
