#include "emag/data.hpp"
#include "emag/errors.hpp"

namespace emag::data {

namespace {

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd homography_vector(const Homography& h) {
  const auto flat = flatten(h);
  return Eigen::Map<const Eigen::VectorXd>(flat.data(), 9);
}

nlohmann::json stats_json(const ego::StandardizationStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

ego::StandardizationStats stats_from(const nlohmann::json& j) {
  ego::StandardizationStats s;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std = j.at("std").get<std::vector<double>>();
  if (mean.size() != std.size()) throw ValidationError("stats: mean/std size mismatch");
  s.mean = as_vector(mean);
  s.std = as_vector(std);
  return s;
}

}  // namespace

DatasetStats compute_stats(std::span<const SequenceSample> train) {
  if (train.empty()) throw InsufficientDataError("compute_stats: empty training split");
  std::vector<Eigen::VectorXd> rgb, flow, hom, bg;
  for (const auto& s : train) {
    for (std::size_t t = 0; t < s.observed.size(); ++t) {
      const auto& o = s.observed[t];
      if (!o.homography || !o.background_flow) {
        throw ValidationError(s.id + " observed[" + std::to_string(t) +
                              "]: ego-motion fields missing; run preprocess first");
      }
      rgb.push_back(as_vector(o.rgb_feat));
      flow.push_back(as_vector(o.flow_feat));
      hom.push_back(homography_vector(*o.homography));
      bg.push_back(*o.background_flow);
    }
  }
  using Stats = ego::StandardizationStats;
  return {Stats::fit(rgb), Stats::fit(flow), Stats::fit(hom), Stats::fit(bg)};
}

void to_json(nlohmann::json& j, const DatasetStats& s) {
  j = {{"rgb", stats_json(s.rgb)},
       {"flow", stats_json(s.flow)},
       {"homography", stats_json(s.homography)},
       {"background_flow", stats_json(s.background_flow)}};
}

void from_json(const nlohmann::json& j, DatasetStats& s) {
  s.rgb = stats_from(j.at("rgb"));
  s.flow = stats_from(j.at("flow"));
  s.homography = stats_from(j.at("homography"));
  s.background_flow = stats_from(j.at("background_flow"));
}

}  // namespace emag::data
