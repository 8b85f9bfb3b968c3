#pragma once

// Seeded synthetic egocentric scenarios: a rotating head-mounted camera,
// hands moving between objects in the world, rendered flow grids and
// feature vectors standing in for CNN embeddings.

#include "emag/data.hpp"
#include "emag/ego_motion.hpp"
#include "emag/geometry.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace emag::synth {

using Rng = std::mt19937_64;

inline constexpr double kImageSizePx = data::kImageSizePx;

// Focal length equal to the image height, principal point at the center.
Eigen::Matrix3d intrinsics();

// Rotation about the camera axes (degrees): yaw about y, pitch about x, roll
// about z, composed as R = Rz(roll) * Rx(pitch) * Ry(yaw).
Eigen::Matrix3d rotation_from_angles(const Eigen::Vector3d& yaw_pitch_roll_deg);

// K * R * K^-1 normalized to h33 = 1.
Homography rotation_homography(const Eigen::Matrix3d& r);

struct CameraConfig {
  // Per-frame angular-velocity innovation std (yaw, pitch, roll), degrees.
  Eigen::Vector3d rate_std_deg = Eigen::Vector3d::Zero();
  // Constant angular velocity added every frame, degrees.
  Eigen::Vector3d rate_mean_deg = Eigen::Vector3d::Zero();
  // AR(1) coefficient of the angular velocity in [0, 1).
  double smoothing = 0.8;
};

struct HandConfig {
  int attractor_count = 4;
  // Speed range of hand motion, normalized units per frame.
  double speed_min = 0.01;
  double speed_max = 0.03;
  // Probability of pausing on reaching a target, and the longest pause.
  double pause_prob = 0.3;
  int pause_max = 3;
  // Velocity low-pass coefficient in [0, 1).
  double inertia = 0.5;
  double box_size = 0.12;
  double missing_prob = 0.05;
};

struct ScenarioConfig {
  std::string domain = "custom";
  CameraConfig camera;
  HandConfig hands;
  double object_box_size = 0.1;
  int distractor_count = 2;
  double detection_noise_std = 0.003;

  int rgb_dim = 32;
  int flow_dim = 32;
  std::vector<double> domain_signature;  // rgb_dim values
  // Seed of the domain-specific scene projection inside rgb features.
  std::uint64_t scene_projection_seed = 0;
  // Seed of the projections shared across domains.
  std::uint64_t shared_projection_seed = 0x5eed;
  double scene_gain = 1.0;
  double feature_noise_std = 0.1;

  int flow_grid = 32;
  double flow_outlier_fraction = 0.1;

  int observed_steps = 8;
  int future_steps = 4;
  bool include_flow_grids = true;
  std::uint64_t seed = 0;

  // Throws ValidationError on out-of-range probabilities, negative stds or
  // inconsistent sizes.
  void validate() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
// Fields absent from j keep the values already in c.
void from_json(const nlohmann::json& j, ScenarioConfig& c);

std::vector<std::string> builtin_domains();
// Throws ValidationError naming the built-ins for unknown domains.
ScenarioConfig builtin_scenario(const std::string& domain);

struct CameraTrack {
  // Frame-pair homographies H(t-1 -> t) for t = 1..steps.
  std::vector<Homography> homographies;
  // Angular velocity used for each pair, degrees.
  std::vector<Eigen::Vector3d> rates_deg;
};

CameraTrack simulate_camera(const ScenarioConfig& config, int steps, Rng& rng);

struct HandState {
  Eigen::Vector2d world;
  Eigen::Vector2d image;
  // Image-space displacement from the previous frame.
  Eigen::Vector2d image_velocity = Eigen::Vector2d::Zero();
  Eigen::Vector2d target_image;
  bool in_view = true;
};

struct FrameTruth {
  HandState left;
  HandState right;
  std::vector<Box> object_boxes;  // image-space boxes of the real objects
};

// Ground-truth states for frames 0..camera.size(). World coordinates are the
// normalized image coordinates of frame 0.
std::vector<FrameTruth> simulate_hands(const ScenarioConfig& config, std::span<const Homography> camera, Rng& rng);

struct HandMotion {
  Box box;  // normalized, previous frame
  Eigen::Vector2d displacement;  // normalized
};

// Background cells get H p - p, cells inside a hand box the hand displacement,
// and an outlier_fraction of cells a uniform random displacement. Values are
// rounded to 1e-3 px.
ego::FlowField render_flow(const Homography& h, std::span<const HandMotion> hands, int grid,
                           double outlier_fraction, Rng& rng);

struct FrameFeatures {
  std::vector<double> rgb;
  std::vector<double> flow;
};

// rgb = domain signature + shared state embedding + domain-specific scene
// embedding + noise; flow = shared embedding of flow statistics + noise.
FrameFeatures render_features(const ScenarioConfig& config, const FrameTruth& frame,
                              const Eigen::Vector3d& camera_rate_deg, const ego::FlowField& flow, Rng& rng);

// Per-sequence seed: splitmix64(seed + 0x9E3779B97F4A7C15 * (index + 1)).
std::uint64_t sequence_seed(std::uint64_t seed, std::uint64_t index);

data::SequenceSample generate_sequence(const ScenarioConfig& config, std::uint64_t index);

std::vector<data::SequenceSample> generate_dataset(const ScenarioConfig& config, int n_sequences);

}  // namespace emag::synth
