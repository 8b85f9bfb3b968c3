#include "emag/baselines.hpp"

#include "emag/errors.hpp"

#include <algorithm>

namespace emag::baselines {

HandTrack HandTrack::from_boxes(HandSide side, const std::vector<std::optional<Box>>& boxes) {
  HandTrack t;
  t.side = side;
  t.boxes = boxes;
  t.centers.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (b && !b->valid()) throw ValidationError("hand box with x1 >= x2 or y1 >= y2");
    t.centers.push_back(b ? std::optional<Eigen::Vector2d>(b->center()) : std::nullopt);
  }
  return t;
}

bool HandTrack::forecastable() const {
  return std::any_of(centers.begin(), centers.end(), [](const auto& c) { return c.has_value(); });
}

std::optional<Trajectory> cvm_forecast(const HandTrack& track, int future_steps) {
  if (future_steps < 1) throw ValidationError("forecast horizon must be >= 1");
  const auto& c = track.centers;
  const std::size_t n = c.size();
  if (n >= 2 && c[n - 1] && c[n - 2]) {
    const Eigen::Vector2d last = *c[n - 1];
    const Eigen::Vector2d v = last - *c[n - 2];
    Trajectory out;
    for (int f = 1; f <= future_steps; ++f) out.push_back(last + f * v);
    return out;
  }
  const auto last = std::find_if(c.rbegin(), c.rend(), [](const auto& p) { return p.has_value(); });
  if (last == c.rend()) return std::nullopt;
  return Trajectory(static_cast<std::size_t>(future_steps), **last);
}

}  // namespace emag::baselines
