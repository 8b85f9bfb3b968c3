#include "emag/data.hpp"
#include "emag/errors.hpp"

#include <algorithm>
#include <numeric>

namespace emag::data {

std::string to_string(EgoRepresentation r) {
  return r == EgoRepresentation::kHomography ? "homography" : "background_flow";
}

EgoRepresentation ego_representation_from_string(const std::string& s) {
  if (s == "homography") return EgoRepresentation::kHomography;
  if (s == "background_flow") return EgoRepresentation::kBackgroundFlow;
  throw ValidationError("unknown ego representation '" + s + "' (homography | background_flow)");
}

std::vector<std::optional<Box>> select_objects(std::span<const ObjectDetection> detections, int k,
                                               double threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });
  std::vector<std::optional<Box>> out(static_cast<std::size_t>(std::max(k, 0)));
  std::size_t slot = 0;
  for (std::size_t i : order) {
    if (slot == out.size() || detections[i].confidence < threshold) break;
    out[slot++] = detections[i].box;
  }
  return out;
}

Batch make_batch(std::span<const SequenceSample> samples, std::span<const std::size_t> indices,
                 const DatasetStats& stats, const BatchSpec& spec) {
  if (indices.empty()) throw ValidationError("make_batch: empty batch");
  const auto& first = samples[indices[0]];
  const int T = first.observed_steps(), F = first.future_steps();
  const auto d_rgb = static_cast<ad::Index>(stats.rgb.dim());
  const auto d_flow = static_cast<ad::Index>(stats.flow.dim());
  const bool bg = spec.ego == EgoRepresentation::kBackgroundFlow;
  const ad::Index d_ego = bg ? 2 : 9;
  const ad::Index slots = 2 + spec.top_k_objects;
  const auto B = static_cast<ad::Index>(indices.size());

  Batch b;
  b.size = B;
  b.observed_steps = T;
  b.future_steps = F;
  ad::TensorD::Array boxes = ad::TensorD::Array::Zero(B * T * slots * 4);
  ad::TensorD::Array box_mask = ad::TensorD::Array::Zero(B * T * slots);
  ad::TensorD::Array rgb(B * T * d_rgb), flow(B * T * d_flow), ego(B * T * d_ego);
  ad::TensorD::Array th = ad::TensorD::Array::Zero(B * F * 4), tm = ad::TensorD::Array::Zero(B * F * 4);
  ad::TensorD::Array te(B * F * 9);

  for (ad::Index n = 0; n < B; ++n) {
    const auto& s = samples[indices[static_cast<std::size_t>(n)]];
    if (s.observed_steps() != T || s.future_steps() != F) {
      throw ValidationError("make_batch: " + s.id + " has a different number of observed or future steps");
    }
    std::vector<std::optional<Box>> left, right;
    for (int t = 0; t < T; ++t) {
      const auto& o = s.observed[t];
      const std::string where = s.id + " observed[" + std::to_string(t) + "]";
      if (static_cast<ad::Index>(o.rgb_feat.size()) != d_rgb ||
          static_cast<ad::Index>(o.flow_feat.size()) != d_flow) {
        throw ValidationError(where + ": feature dimension does not match the statistics");
      }
      std::vector<std::optional<Box>> row{o.left_hand, o.right_hand};
      const auto objs = select_objects(o.objects, spec.top_k_objects, spec.object_threshold);
      row.insert(row.end(), objs.begin(), objs.end());
      for (ad::Index m = 0; m < slots; ++m) {
        if (!row[static_cast<std::size_t>(m)]) continue;
        const auto a = row[static_cast<std::size_t>(m)]->as_array();
        const ad::Index base = ((n * T + t) * slots + m);
        box_mask[base] = 1.0;
        for (int c = 0; c < 4; ++c) boxes[base * 4 + c] = a[c];
      }
      left.push_back(o.left_hand);
      right.push_back(o.right_hand);

      rgb.segment((n * T + t) * d_rgb, d_rgb) =
          stats.rgb.standardize(Eigen::Map<const Eigen::VectorXd>(o.rgb_feat.data(), d_rgb)).array();
      flow.segment((n * T + t) * d_flow, d_flow) =
          stats.flow.standardize(Eigen::Map<const Eigen::VectorXd>(o.flow_feat.data(), d_flow)).array();
      if (bg) {
        if (!o.background_flow) throw ValidationError(where + ": background flow missing; run preprocess first");
        ego.segment((n * T + t) * 2, 2) = stats.background_flow.standardize(*o.background_flow).array();
      } else {
        if (!o.homography) throw ValidationError(where + ": homography missing; run preprocess first");
        const auto flat = flatten(*o.homography);
        ego.segment((n * T + t) * 9, 9) =
            stats.homography.standardize(Eigen::Map<const Eigen::VectorXd>(flat.data(), 9)).array();
      }
    }
    for (int f = 0; f < F; ++f) {
      const auto& fu = s.future[f];
      const ad::Index base = (n * F + f) * 4;
      if (fu.left) {
        th.segment(base, 2) = fu.left->array();
        tm.segment(base, 2).setOnes();
      }
      if (fu.right) {
        th.segment(base + 2, 2) = fu.right->array();
        tm.segment(base + 2, 2).setOnes();
      }
      const auto flat = flatten(fu.homography);
      te.segment((n * F + f) * 9, 9) =
          stats.homography.standardize(Eigen::Map<const Eigen::VectorXd>(flat.data(), 9)).array();
    }
    b.gt_hands.push_back(s.future_hands());
    b.gt_visibility.push_back(s.future_visibility());
    b.left_tracks.push_back(std::move(left));
    b.right_tracks.push_back(std::move(right));
  }

  b.boxes = ad::TensorD({B, T, slots, 4}, std::move(boxes));
  b.box_mask = ad::TensorD({B, T, slots}, std::move(box_mask));
  b.rgb = ad::TensorD({B, T, d_rgb}, std::move(rgb));
  b.flow = ad::TensorD({B, T, d_flow}, std::move(flow));
  b.ego = ad::TensorD({B, T, d_ego}, std::move(ego));
  b.target_hands = ad::TensorD({B, F, 4}, std::move(th));
  b.target_mask = ad::TensorD({B, F, 4}, std::move(tm));
  b.target_ego = ad::TensorD({B, F, 9}, std::move(te));
  return b;
}

Batch make_batch(std::span<const SequenceSample> samples, const DatasetStats& stats, const BatchSpec& spec) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(samples, all, stats, spec);
}

}  // namespace emag::data
