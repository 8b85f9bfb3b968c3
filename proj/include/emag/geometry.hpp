#pragma once

#include <Eigen/Core>

#include <array>

namespace emag {

// Axis-aligned box in top-left / bottom-right form.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x1 < x2 && y1 < y2; }
  Eigen::Vector2d center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= x1 && p.x() <= x2 && p.y() >= y1 && p.y() <= y2;
  }
  Box scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }

  friend bool operator==(const Box&, const Box&) = default;
};

using Homography = Eigen::Matrix3d;

// Row-major 9-element form used in files and model inputs.
inline std::array<double, 9> flatten(const Homography& h) {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[3 * r + c] = h(r, c);
  return out;
}

template <typename Range>
Homography unflatten(const Range& v) {
  Homography h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h(r, c) = v[3 * r + c];
  return h;
}

}  // namespace emag
