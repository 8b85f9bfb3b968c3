#include "emag/errors.hpp"
#include "emag/synth.hpp"

#include <sstream>

namespace emag::synth {

using nlohmann::json;

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0 && p <= 1)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
}

void check_nonnegative(double v, const char* name) {
  if (!(v >= 0)) throw ValidationError(std::string(name) + " must be non-negative");
}

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

void read_vec3(const json& j, const char* key, Eigen::Vector3d& v) {
  if (!j.contains(key)) return;
  const auto a = j.at(key).get<std::vector<double>>();
  if (a.size() != 3) throw ValidationError(std::string(key) + ": expected 3 numbers");
  v = {a[0], a[1], a[2]};
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

std::vector<double> signature(std::uint64_t seed, int dim, double scale) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (double& v : out) v = n(rng);
  return out;
}

}  // namespace

void ScenarioConfig::validate() const {
  check_probability(hands.pause_prob, "hands.pause_prob");
  check_probability(hands.missing_prob, "hands.missing_prob");
  check_probability(flow_outlier_fraction, "flow_outlier_fraction");
  if (!(camera.smoothing >= 0 && camera.smoothing < 1)) throw ValidationError("camera.smoothing must lie in [0, 1)");
  if (!(hands.inertia >= 0 && hands.inertia < 1)) throw ValidationError("hands.inertia must lie in [0, 1)");
  for (int i = 0; i < 3; ++i) check_nonnegative(camera.rate_std_deg[i], "camera.rate_std_deg");
  check_nonnegative(detection_noise_std, "detection_noise_std");
  check_nonnegative(feature_noise_std, "feature_noise_std");
  check_nonnegative(hands.speed_min, "hands.speed_min");
  if (hands.speed_max < hands.speed_min) throw ValidationError("hands.speed_max must be >= hands.speed_min");
  if (hands.attractor_count < 1) throw ValidationError("hands.attractor_count must be >= 1");
  if (hands.pause_max < 0) throw ValidationError("hands.pause_max must be >= 0");
  if (!(hands.box_size > 0) || !(object_box_size > 0)) throw ValidationError("box sizes must be positive");
  if (distractor_count < 0) throw ValidationError("distractor_count must be >= 0");
  if (rgb_dim < 1 || flow_dim < 1) throw ValidationError("feature dimensions must be >= 1");
  if (static_cast<int>(domain_signature.size()) != rgb_dim) {
    throw ValidationError("domain_signature has " + std::to_string(domain_signature.size()) +
                          " values, rgb_dim is " + std::to_string(rgb_dim));
  }
  if (flow_grid < 4) throw ValidationError("flow_grid must be >= 4");
  if (observed_steps < 2 || future_steps < 1) throw ValidationError("need >= 2 observed and >= 1 future steps");
}

void to_json(json& j, const ScenarioConfig& c) {
  j = {{"domain", c.domain},
       {"camera",
        {{"rate_std_deg", vec3(c.camera.rate_std_deg)},
         {"rate_mean_deg", vec3(c.camera.rate_mean_deg)},
         {"smoothing", c.camera.smoothing}}},
       {"hands",
        {{"attractor_count", c.hands.attractor_count},
         {"speed_min", c.hands.speed_min},
         {"speed_max", c.hands.speed_max},
         {"pause_prob", c.hands.pause_prob},
         {"pause_max", c.hands.pause_max},
         {"inertia", c.hands.inertia},
         {"box_size", c.hands.box_size},
         {"missing_prob", c.hands.missing_prob}}},
       {"object_box_size", c.object_box_size},
       {"distractor_count", c.distractor_count},
       {"detection_noise_std", c.detection_noise_std},
       {"rgb_dim", c.rgb_dim},
       {"flow_dim", c.flow_dim},
       {"domain_signature", c.domain_signature},
       {"scene_projection_seed", c.scene_projection_seed},
       {"shared_projection_seed", c.shared_projection_seed},
       {"scene_gain", c.scene_gain},
       {"feature_noise_std", c.feature_noise_std},
       {"flow_grid", c.flow_grid},
       {"flow_outlier_fraction", c.flow_outlier_fraction},
       {"observed_steps", c.observed_steps},
       {"future_steps", c.future_steps},
       {"include_flow_grids", c.include_flow_grids},
       {"seed", c.seed}};
}

void from_json(const json& j, ScenarioConfig& c) {
  read(j, "domain", c.domain);
  if (j.contains("camera")) {
    const auto& cam = j.at("camera");
    read_vec3(cam, "rate_std_deg", c.camera.rate_std_deg);
    read_vec3(cam, "rate_mean_deg", c.camera.rate_mean_deg);
    read(cam, "smoothing", c.camera.smoothing);
  }
  if (j.contains("hands")) {
    const auto& h = j.at("hands");
    read(h, "attractor_count", c.hands.attractor_count);
    read(h, "speed_min", c.hands.speed_min);
    read(h, "speed_max", c.hands.speed_max);
    read(h, "pause_prob", c.hands.pause_prob);
    read(h, "pause_max", c.hands.pause_max);
    read(h, "inertia", c.hands.inertia);
    read(h, "box_size", c.hands.box_size);
    read(h, "missing_prob", c.hands.missing_prob);
  }
  read(j, "object_box_size", c.object_box_size);
  read(j, "distractor_count", c.distractor_count);
  read(j, "detection_noise_std", c.detection_noise_std);
  read(j, "rgb_dim", c.rgb_dim);
  read(j, "flow_dim", c.flow_dim);
  read(j, "domain_signature", c.domain_signature);
  read(j, "scene_projection_seed", c.scene_projection_seed);
  read(j, "shared_projection_seed", c.shared_projection_seed);
  read(j, "scene_gain", c.scene_gain);
  read(j, "feature_noise_std", c.feature_noise_std);
  read(j, "flow_grid", c.flow_grid);
  read(j, "flow_outlier_fraction", c.flow_outlier_fraction);
  read(j, "observed_steps", c.observed_steps);
  read(j, "future_steps", c.future_steps);
  read(j, "include_flow_grids", c.include_flow_grids);
  read(j, "seed", c.seed);
}

std::vector<std::string> builtin_domains() { return {"kitchen", "outdoor"}; }

ScenarioConfig builtin_scenario(const std::string& domain) {
  ScenarioConfig c;
  c.domain = domain;
  if (domain == "kitchen") {
    c.camera.rate_std_deg = {0.4, 0.3, 0.2};
    c.camera.smoothing = 0.85;
    c.hands.speed_min = 0.006;
    c.hands.speed_max = 0.02;
    c.hands.pause_prob = 0.5;
    c.hands.box_size = 0.16;
    c.hands.missing_prob = 0.05;
    c.object_box_size = 0.12;
    c.domain_signature = signature(101, c.rgb_dim, 1.0);
    c.scene_projection_seed = 11;
  } else if (domain == "outdoor") {
    c.camera.rate_std_deg = {2.0, 1.0, 0.5};
    c.camera.smoothing = 0.85;
    c.hands.speed_min = 0.015;
    c.hands.speed_max = 0.04;
    c.hands.pause_prob = 0.15;
    c.hands.box_size = 0.1;
    c.hands.missing_prob = 0.1;
    c.object_box_size = 0.08;
    c.domain_signature = signature(202, c.rgb_dim, 1.0);
    c.scene_projection_seed = 22;
  } else {
    std::ostringstream os;
    os << "unknown domain '" << domain << "'; built-ins:";
    for (const auto& d : builtin_domains()) os << ' ' << d;
    throw ValidationError(os.str());
  }
  return c;
}

}  // namespace emag::synth
