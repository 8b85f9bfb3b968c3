#include "emag/errors.hpp"
#include "emag/synth.hpp"

#include <cmath>
#include <numbers>

namespace emag::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Eigen::MatrixXd gaussian_matrix(std::uint64_t seed, int rows, int cols) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

Eigen::Vector2d project(const Homography& cum, const Eigen::Vector2d& world) {
  return (cum * (world * kImageSizePx).homogeneous()).hnormalized() / kImageSizePx;
}

Box project_box(const Homography& cum, const Box& b) {
  const Eigen::Vector2d corners[4] = {{b.x1, b.y1}, {b.x2, b.y1}, {b.x1, b.y2}, {b.x2, b.y2}};
  Box out{1e9, 1e9, -1e9, -1e9};
  for (const auto& c : corners) {
    const Eigen::Vector2d p = project(cum, c);
    out.x1 = std::min(out.x1, p.x());
    out.y1 = std::min(out.y1, p.y());
    out.x2 = std::max(out.x2, p.x());
    out.y2 = std::max(out.y2, p.y());
  }
  return out;
}

bool in_image(const Eigen::Vector2d& p) { return p.x() >= 0 && p.x() <= 1 && p.y() >= 0 && p.y() <= 1; }

Box centered_box(const Eigen::Vector2d& c, double size) {
  const double hw = 0.5 * size, hh = 0.6 * size;
  return {c.x() - hw, c.y() - hh, c.x() + hw, c.y() + hh};
}

double quantize(double v) { return std::round(v * 1000.0) / 1000.0; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct HandWalker {
  Eigen::Vector2d pos;
  Eigen::Vector2d vel = Eigen::Vector2d::Zero();
  int target = 0;
  double speed = 0;
  int pause = 0;
};

}  // namespace

Eigen::Matrix3d intrinsics() {
  Eigen::Matrix3d k;
  k << kImageSizePx, 0, kImageSizePx / 2, 0, kImageSizePx, kImageSizePx / 2, 0, 0, 1;
  return k;
}

Eigen::Matrix3d rotation_from_angles(const Eigen::Vector3d& ypr) {
  const Eigen::AngleAxisd yaw(ypr.x() * kDeg, Eigen::Vector3d::UnitY());
  const Eigen::AngleAxisd pitch(ypr.y() * kDeg, Eigen::Vector3d::UnitX());
  const Eigen::AngleAxisd roll(ypr.z() * kDeg, Eigen::Vector3d::UnitZ());
  return (roll * pitch * yaw).toRotationMatrix();
}

Homography rotation_homography(const Eigen::Matrix3d& r) {
  const Eigen::Matrix3d k = intrinsics();
  const Homography h = k * r * k.inverse();
  return h / h(2, 2);
}

CameraTrack simulate_camera(const ScenarioConfig& config, int steps, Rng& rng) {
  const auto& cam = config.camera;
  const double innovation = std::sqrt(1.0 - cam.smoothing * cam.smoothing);
  std::normal_distribution<double> n(0.0, 1.0);
  CameraTrack out;
  Eigen::Vector3d dev;
  for (int i = 0; i < 3; ++i) dev[i] = cam.rate_std_deg[i] * n(rng);
  for (int t = 0; t < steps; ++t) {
    if (t > 0) {
      for (int i = 0; i < 3; ++i) dev[i] = cam.smoothing * dev[i] + innovation * cam.rate_std_deg[i] * n(rng);
    }
    const Eigen::Vector3d rate = cam.rate_mean_deg + dev;
    out.rates_deg.push_back(rate);
    out.homographies.push_back(rotation_homography(rotation_from_angles(rate)));
  }
  return out;
}

std::vector<FrameTruth> simulate_hands(const ScenarioConfig& config, std::span<const Homography> camera, Rng& rng) {
  const auto& hc = config.hands;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  std::vector<Eigen::Vector2d> objects;
  std::vector<Box> object_world;
  for (int i = 0; i < hc.attractor_count; ++i) {
    objects.emplace_back(uniform(0.15, 0.85), uniform(0.35, 0.85));
    object_world.push_back(centered_box(objects.back(), config.object_box_size));
  }
  std::uniform_int_distribution<int> pick(0, hc.attractor_count - 1);
  auto new_speed = [&] { return uniform(hc.speed_min, hc.speed_max); };

  HandWalker walkers[2];
  walkers[0].pos = {uniform(0.15, 0.45), uniform(0.5, 0.9)};
  walkers[1].pos = {uniform(0.55, 0.85), uniform(0.5, 0.9)};
  for (auto& w : walkers) {
    w.target = pick(rng);
    w.speed = new_speed();
  }

  std::vector<FrameTruth> frames;
  Homography cum = Homography::Identity();
  Eigen::Vector2d prev_image[2];
  for (std::size_t t = 0; t <= camera.size(); ++t) {
    if (t > 0) {
      cum = camera[t - 1] * cum;
      cum /= cum(2, 2);
      for (auto& w : walkers) {
        Eigen::Vector2d desired = Eigen::Vector2d::Zero();
        if (w.pause > 0) {
          --w.pause;
        } else {
          const Eigen::Vector2d to_target = objects[w.target] - w.pos;
          const double dist = to_target.norm();
          if (dist <= w.speed) {
            if (u01(rng) < hc.pause_prob && hc.pause_max > 0) {
              w.pause = std::uniform_int_distribution<int>(1, hc.pause_max)(rng);
            }
            if (hc.attractor_count > 1) {
              int next = pick(rng);
              while (next == w.target) next = pick(rng);
              w.target = next;
            }
            w.speed = new_speed();
            desired = to_target;
          } else {
            desired = to_target / dist * w.speed;
          }
        }
        w.vel = hc.inertia * w.vel + (1.0 - hc.inertia) * desired;
        w.pos += w.vel;
      }
    }
    FrameTruth f;
    HandState* states[2] = {&f.left, &f.right};
    for (int h = 0; h < 2; ++h) {
      auto& s = *states[h];
      s.world = walkers[h].pos;
      s.image = project(cum, walkers[h].pos);
      s.image_velocity = t > 0 ? Eigen::Vector2d(s.image - prev_image[h]) : Eigen::Vector2d::Zero();
      s.target_image = project(cum, objects[walkers[h].target]);
      s.in_view = in_image(s.image);
      prev_image[h] = s.image;
    }
    for (const auto& b : object_world) f.object_boxes.push_back(project_box(cum, b));
    frames.push_back(std::move(f));
  }
  return frames;
}

ego::FlowField render_flow(const Homography& h, std::span<const HandMotion> hands, int grid,
                           double outlier_fraction, Rng& rng) {
  ego::FlowField f;
  f.width = f.height = grid;
  f.cell_w = f.cell_h = kImageSizePx / grid;
  f.vectors.resize(static_cast<std::size_t>(grid) * grid);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> random_disp(-20.0, 20.0);
  for (int j = 0; j < grid; ++j) {
    for (int i = 0; i < grid; ++i) {
      const Eigen::Vector2d p = f.center(i, j);
      Eigen::Vector2d d = (h * p.homogeneous()).hnormalized() - p;
      for (const auto& hand : hands) {
        if (hand.box.contains(p / kImageSizePx)) d = hand.displacement * kImageSizePx;
      }
      if (outlier_fraction > 0 && u01(rng) < outlier_fraction) {
        const double dx = random_disp(rng);
        d = {dx, random_disp(rng)};
      }
      f.vectors[static_cast<std::size_t>(j) * grid + i] = {quantize(d.x()), quantize(d.y())};
    }
  }
  return f;
}

FrameFeatures render_features(const ScenarioConfig& config, const FrameTruth& frame,
                              const Eigen::Vector3d& camera_rate_deg, const ego::FlowField& flow, Rng& rng) {
  Eigen::VectorXd shared(8);
  shared << (frame.left.image.array() - 0.5) * 4, (frame.right.image.array() - 0.5) * 4,
      frame.left.image_velocity * 50, frame.right.image_velocity * 50;
  Eigen::VectorXd scene(7);
  scene << (frame.left.target_image.array() - 0.5) * 4, (frame.right.target_image.array() - 0.5) * 4,
      camera_rate_deg;

  double mean_mag = 0, sq_mag = 0;
  for (const auto& v : flow.vectors) {
    const double m = v.norm();
    mean_mag += m;
    sq_mag += m * m;
  }
  const double n = std::max<double>(1.0, static_cast<double>(flow.vectors.size()));
  mean_mag /= n;
  const double std_mag = std::sqrt(std::max(0.0, sq_mag / n - mean_mag * mean_mag));
  Eigen::VectorXd flow_stats(6);
  flow_stats << frame.left.image_velocity * kImageSizePx / 5, frame.right.image_velocity * kImageSizePx / 5,
      mean_mag / 5, std_mag / 5;

  const Eigen::MatrixXd w_shared = gaussian_matrix(config.shared_projection_seed, config.rgb_dim, 8);
  const Eigen::MatrixXd w_flow = gaussian_matrix(config.shared_projection_seed ^ 0xf10f, config.flow_dim, 6);
  const Eigen::MatrixXd w_scene = gaussian_matrix(config.scene_projection_seed, config.rgb_dim, 7);

  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::VectorXd rgb = Eigen::Map<const Eigen::VectorXd>(config.domain_signature.data(), config.rgb_dim) +
                        w_shared * shared + config.scene_gain * (w_scene * scene);
  Eigen::VectorXd fl = w_flow * flow_stats;
  for (auto& v : rgb) v += config.feature_noise_std * noise(rng);
  for (auto& v : fl) v += config.feature_noise_std * noise(rng);
  return {{rgb.begin(), rgb.end()}, {fl.begin(), fl.end()}};
}

std::uint64_t sequence_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (index + 1));
}

data::SequenceSample generate_sequence(const ScenarioConfig& config, std::uint64_t index) {
  config.validate();
  Rng rng(sequence_seed(config.seed, index));
  const int T = config.observed_steps, F = config.future_steps;
  const auto camera = simulate_camera(config, T + F, rng);
  const auto truth = simulate_hands(config, camera.homographies, rng);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> det_noise(0.0, config.detection_noise_std);
  auto jitter = [&](const Box& b) {
    const double dx = det_noise(rng), dy = det_noise(rng);
    return Box{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
  };

  data::SequenceSample s;
  s.id = config.domain + "-" + std::to_string(config.seed) + "-" + std::to_string(index);
  s.domain = config.domain;
  for (int t = 1; t <= T; ++t) {
    const auto& prev = truth[t - 1];
    const auto& cur = truth[t];
    const HandMotion motions[2] = {
        {centered_box(prev.left.image, config.hands.box_size), cur.left.image - prev.left.image},
        {centered_box(prev.right.image, config.hands.box_size), cur.right.image - prev.right.image}};
    const Homography& h = camera.homographies[t - 1];
    auto flow = render_flow(h, motions, config.flow_grid, config.flow_outlier_fraction, rng);
    auto features = render_features(config, cur, camera.rates_deg[t - 1], flow, rng);

    data::ObservedFrame o;
    o.rgb_feat = std::move(features.rgb);
    o.flow_feat = std::move(features.flow);
    const HandState* hands[2] = {&cur.left, &cur.right};
    std::optional<Box>* slots[2] = {&o.left_hand, &o.right_hand};
    for (int k = 0; k < 2; ++k) {
      const bool dropped = u01(rng) < config.hands.missing_prob;
      if (hands[k]->in_view && !dropped) *slots[k] = jitter(centered_box(hands[k]->image, config.hands.box_size));
    }
    for (const auto& b : cur.object_boxes) {
      const double conf = 0.5 + 0.5 * u01(rng);
      if (in_image(b.center())) o.objects.push_back({jitter(b), conf});
    }
    for (int d = 0; d < config.distractor_count; ++d) {
      const Eigen::Vector2d c(u01(rng), u01(rng));
      const double conf = 0.05 + 0.44 * u01(rng);
      o.objects.push_back({centered_box(c, config.object_box_size), conf});
    }
    o.true_homography = h;
    if (config.include_flow_grids) o.flow = std::move(flow);
    s.observed.push_back(std::move(o));
  }
  for (int f = 1; f <= F; ++f) {
    const auto& cur = truth[T + f];
    data::FutureFrame fu;
    if (cur.left.in_view) fu.left = cur.left.image;
    if (cur.right.in_view) fu.right = cur.right.image;
    fu.homography = camera.homographies[T + f - 1];
    s.future.push_back(fu);
  }
  return s;
}

std::vector<data::SequenceSample> generate_dataset(const ScenarioConfig& config, int n_sequences) {
  if (n_sequences < 1) throw ValidationError("generate_dataset: need at least one sequence");
  config.validate();
  std::vector<data::SequenceSample> out;
  out.reserve(static_cast<std::size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) out.push_back(generate_sequence(config, static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace emag::synth
