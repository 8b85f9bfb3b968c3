#include "emag/baselines.hpp"

#include "emag/errors.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace emag::baselines {

Eigen::Vector4d KalmanBoxFilter::to_measurement(const Box& b) {
  const double w = b.width(), h = b.height();
  return {b.x1 + 0.5 * w, b.y1 + 0.5 * h, w * h, w / h};
}

KalmanBoxFilter::KalmanBoxFilter(const Box& first, const KalmanParams& params) {
  f_.setIdentity();
  f_(0, 4) = f_(1, 5) = f_(2, 6) = 1.0;
  h_.setZero();
  h_.leftCols<4>().setIdentity();
  r_ = params.measurement_noise.asDiagonal();

  Eigen::Matrix<double, 7, 1> q;
  q << 1, 1, 1, 1, 1e-2, 1e-2, 1e-4;
  q_ = (params.process_noise_scale * q).asDiagonal();

  p_ = Covariance::Identity() * params.initial_covariance;
  p_.bottomRightCorner<3, 3>() *= params.initial_velocity_inflation;

  x_.setZero();
  x_.head<4>() = to_measurement(first);
}

void KalmanBoxFilter::predict() {
  // Keep the predicted area non-negative.
  if (x_(6) + x_(2) <= 0) x_(6) = 0;
  x_ = f_ * x_;
  p_ = f_ * p_ * f_.transpose() + q_;
  p_ = 0.5 * (p_ + p_.transpose());
}

void KalmanBoxFilter::update(const Box& box) {
  const Eigen::Vector4d z = to_measurement(box);
  const Eigen::Matrix4d s = h_ * p_ * h_.transpose() + r_;
  const Eigen::Matrix<double, 7, 4> k = p_ * h_.transpose() * s.inverse();
  x_ += k * (z - h_ * x_);
  // Joseph form keeps P symmetric positive-definite.
  const Covariance i_kh = Covariance::Identity() - k * h_;
  p_ = i_kh * p_ * i_kh.transpose() + k * r_ * k.transpose();
  p_ = 0.5 * (p_ + p_.transpose());
}

std::optional<Trajectory> kalman_forecast(const HandTrack& track, int future_steps,
                                          const KalmanParams& params) {
  if (future_steps < 1) throw ValidationError("forecast horizon must be >= 1");
  auto box_at = [&](std::size_t t) -> std::optional<Box> {
    if (t < track.boxes.size() && track.boxes[t]) return track.boxes[t];
    if (track.centers[t]) {
      const Eigen::Vector2d c = *track.centers[t];
      const double h = 0.5 * params.default_box_size;
      return Box{c.x() - h, c.y() - h, c.x() + h, c.y() + h};
    }
    return std::nullopt;
  };

  std::optional<KalmanBoxFilter> kf;
  for (std::size_t t = 0; t < track.steps(); ++t) {
    const auto box = box_at(t);
    if (!kf) {
      if (box) kf.emplace(*box, params);
      continue;
    }
    kf->predict();
    if (box) kf->update(*box);
  }
  if (!kf) return std::nullopt;
  Trajectory out;
  for (int f = 0; f < future_steps; ++f) {
    kf->predict();
    out.push_back(kf->center());
  }
  return out;
}

}  // namespace emag::baselines
