#include "emag/data.hpp"
#include "emag/errors.hpp"

#include <cmath>

namespace emag::data {

using nlohmann::json;

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_box(const std::optional<Box>& b, const std::string& what) {
  if (b && !b->valid()) throw ValidationError(what + ": malformed box (x1 >= x2 or y1 >= y2)");
}

bool same_flow(const std::optional<ego::FlowField>& a, const std::optional<ego::FlowField>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->width == b->width && a->height == b->height && a->cell_w == b->cell_w &&
         a->cell_h == b->cell_h && a->vectors == b->vectors;
}

json box_json(const std::optional<Box>& b) {
  if (!b) return nullptr;
  return json::array({b->x1, b->y1, b->x2, b->y2});
}

std::optional<Box> box_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 4) throw ValidationError(std::string(key) + ": expected 4 numbers");
  return Box{a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
}

json homography_json(const Homography& h) {
  const auto flat = flatten(h);
  return json(std::vector<double>(flat.begin(), flat.end()));
}

Homography homography_from(const json& a, const char* key) {
  if (!a.is_array() || a.size() != 9) throw ValidationError(std::string(key) + ": expected 9 numbers");
  return unflatten(a.get<std::vector<double>>());
}

std::optional<Homography> optional_homography(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return homography_from(j.at(key), key);
}

json point_json(const std::optional<Eigen::Vector2d>& p) {
  if (!p) return nullptr;
  return json::array({p->x(), p->y()});
}

std::optional<Eigen::Vector2d> point_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw ValidationError(std::string(key) + ": expected 2 numbers");
  return Eigen::Vector2d(a[0].get<double>(), a[1].get<double>());
}

json flow_json(const ego::FlowField& f) {
  std::vector<double> flat;
  flat.reserve(2 * f.vectors.size());
  for (const auto& v : f.vectors) {
    flat.push_back(v.x());
    flat.push_back(v.y());
  }
  return {{"width", f.width}, {"height", f.height}, {"cell_w", f.cell_w}, {"cell_h", f.cell_h}, {"vectors", flat}};
}

ego::FlowField flow_from(const json& j) {
  ego::FlowField f;
  f.width = j.at("width").get<int>();
  f.height = j.at("height").get<int>();
  f.cell_w = j.at("cell_w").get<double>();
  f.cell_h = j.at("cell_h").get<double>();
  const auto flat = j.at("vectors").get<std::vector<double>>();
  if (flat.size() % 2 != 0) throw ValidationError("flow.vectors: odd number of values");
  f.vectors.resize(flat.size() / 2);
  for (std::size_t i = 0; i < f.vectors.size(); ++i) f.vectors[i] = {flat[2 * i], flat[2 * i + 1]};
  f.validate();
  return f;
}

const json& required(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

void SequenceSample::validate() const {
  if (observed.empty()) throw ValidationError(id + ": no observed frames");
  if (future.empty()) throw ValidationError(id + ": no future frames");
  const auto d_rgb = observed.front().rgb_feat.size();
  const auto d_flow = observed.front().flow_feat.size();
  for (std::size_t t = 0; t < observed.size(); ++t) {
    const auto& o = observed[t];
    const std::string where = id + " observed[" + std::to_string(t) + "]";
    if (o.rgb_feat.size() != d_rgb || o.flow_feat.size() != d_flow) {
      throw ValidationError(where + ": feature dimension differs from the first frame");
    }
    if (!finite(o.rgb_feat) || !finite(o.flow_feat)) throw ValidationError(where + ": non-finite feature");
    check_box(o.left_hand, where + ".left_hand");
    check_box(o.right_hand, where + ".right_hand");
    for (const auto& det : o.objects) {
      check_box(det.box, where + ".objects");
      if (!(det.confidence >= 0 && det.confidence <= 1)) {
        throw ValidationError(where + ": detection confidence outside [0, 1]");
      }
    }
    if (o.flow) o.flow->validate();
    if (o.homography && !o.homography->allFinite()) throw ValidationError(where + ": non-finite homography");
  }
  for (std::size_t f = 0; f < future.size(); ++f) {
    const auto& fu = future[f];
    const std::string where = id + " future[" + std::to_string(f) + "]";
    if (!fu.homography.allFinite() || fu.homography(2, 2) != 1.0) {
      throw ValidationError(where + ": homography must be finite with h33 = 1");
    }
    if ((fu.left && !fu.left->allFinite()) || (fu.right && !fu.right->allFinite())) {
      throw ValidationError(where + ": non-finite hand position");
    }
  }
}

objective::HandMatrix SequenceSample::future_hands() const {
  objective::HandMatrix m = objective::HandMatrix::Zero(future_steps(), 4);
  for (int f = 0; f < future_steps(); ++f) {
    if (future[f].left) m.block<1, 2>(f, 0) = future[f].left->transpose();
    if (future[f].right) m.block<1, 2>(f, 2) = future[f].right->transpose();
  }
  return m;
}

objective::VisibilityMatrix SequenceSample::future_visibility() const {
  objective::VisibilityMatrix v(future_steps(), 2);
  for (int f = 0; f < future_steps(); ++f) {
    v(f, 0) = future[f].left.has_value();
    v(f, 1) = future[f].right.has_value();
  }
  return v;
}

bool operator==(const ObservedFrame& a, const ObservedFrame& b) {
  return a.rgb_feat == b.rgb_feat && a.flow_feat == b.flow_feat && same_flow(a.flow, b.flow) &&
         a.left_hand == b.left_hand && a.right_hand == b.right_hand && a.objects == b.objects &&
         a.homography == b.homography && a.homography_failed == b.homography_failed &&
         a.true_homography == b.true_homography && a.background_flow == b.background_flow;
}

bool operator==(const FutureFrame& a, const FutureFrame& b) {
  return a.left == b.left && a.right == b.right && a.homography == b.homography;
}

bool operator==(const SequenceSample& a, const SequenceSample& b) {
  return a.id == b.id && a.domain == b.domain && a.observed == b.observed && a.future == b.future;
}

void to_json(json& j, const SequenceSample& s) {
  json observed = json::array();
  for (const auto& o : s.observed) {
    json objects = json::array();
    for (const auto& det : o.objects) objects.push_back({{"box", box_json(det.box)}, {"confidence", det.confidence}});
    json frame = {{"rgb_feat", o.rgb_feat},
                  {"flow_feat", o.flow_feat},
                  {"left_hand", box_json(o.left_hand)},
                  {"right_hand", box_json(o.right_hand)},
                  {"objects", objects},
                  {"homography", o.homography ? homography_json(*o.homography) : json(nullptr)},
                  {"homography_failed", o.homography_failed}};
    if (o.flow) frame["flow"] = flow_json(*o.flow);
    if (o.true_homography) frame["true_homography"] = homography_json(*o.true_homography);
    if (o.background_flow) frame["background_flow"] = point_json(o.background_flow);
    observed.push_back(std::move(frame));
  }
  json future = json::array();
  for (const auto& f : s.future) {
    future.push_back(
        {{"left", point_json(f.left)}, {"right", point_json(f.right)}, {"homography", homography_json(f.homography)}});
  }
  j = {{"id", s.id}, {"domain", s.domain}, {"observed", observed}, {"future", future}};
}

SequenceSample sample_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  SequenceSample s;
  s.id = required(j, "id").get<std::string>();
  s.domain = required(j, "domain").get<std::string>();
  for (const auto& o : required(j, "observed")) {
    ObservedFrame frame;
    frame.rgb_feat = required(o, "rgb_feat").get<std::vector<double>>();
    frame.flow_feat = required(o, "flow_feat").get<std::vector<double>>();
    if (o.contains("flow") && !o.at("flow").is_null()) frame.flow = flow_from(o.at("flow"));
    frame.left_hand = box_from(o, "left_hand");
    frame.right_hand = box_from(o, "right_hand");
    if (o.contains("objects")) {
      for (const auto& det : o.at("objects")) {
        frame.objects.push_back({*box_from(det, "box"), required(det, "confidence").get<double>()});
      }
    }
    frame.homography = optional_homography(o, "homography");
    frame.homography_failed = o.value("homography_failed", false);
    frame.true_homography = optional_homography(o, "true_homography");
    frame.background_flow = point_from(o, "background_flow");
    s.observed.push_back(std::move(frame));
  }
  for (const auto& f : required(j, "future")) {
    FutureFrame frame;
    frame.left = point_from(f, "left");
    frame.right = point_from(f, "right");
    frame.homography = homography_from(required(f, "homography"), "homography");
    s.future.push_back(frame);
  }
  s.validate();
  return s;
}

void preprocess(SequenceSample& sample, const PreprocessOptions& options) {
  for (std::size_t t = 0; t < sample.observed.size(); ++t) {
    auto& o = sample.observed[t];
    std::vector<Box> hand_px;
    if (o.left_hand) hand_px.push_back(o.left_hand->scaled(kImageSizePx));
    if (o.right_hand) hand_px.push_back(o.right_hand->scaled(kImageSizePx));

    if (options.from_homography) {
      if (!o.true_homography) {
        throw ValidationError(sample.id + " observed[" + std::to_string(t) +
                              "]: no generating homography to pass through");
      }
      o.homography = ego::normalize_homography(*o.true_homography);
      o.homography_failed = false;
      // Background flow of the homography on the default grid.
      ego::FlowField grid{32, 32, kImageSizePx / 32, kImageSizePx / 32, {}};
      grid.vectors.resize(32 * 32);
      for (int j = 0; j < 32; ++j) {
        for (int i = 0; i < 32; ++i) {
          const Eigen::Vector2d p = grid.center(i, j);
          grid.vectors[j * 32 + i] = (*o.homography * p.homogeneous()).hnormalized() - p;
        }
      }
      o.background_flow = ego::background_flow_ego(grid, hand_px);
      continue;
    }
    if (!o.flow) {
      throw ValidationError(sample.id + " observed[" + std::to_string(t) +
                            "]: missing flow grid; use --from-homography to pass generating homographies through");
    }
    ego::RansacParams params = options.ransac;
    params.seed = options.ransac.seed ^ (0x9E3779B97F4A7C15ULL * (t + 1));
    const auto est = ego::estimate_frame_homography(*o.flow, params);
    o.homography = est.h;
    o.homography_failed = est.failed;
    o.background_flow = ego::background_flow_ego(*o.flow, hand_px);
  }
}

}  // namespace emag::data
