#pragma once

// Sequence samples, the JSONL dataset format, standardization statistics and
// batch assembly.
//
// Coordinates are normalized so the image height is 1; homographies and flow
// are in pixels of a 256 x 256 frame.

#include "emag/ego_motion.hpp"
#include "emag/geometry.hpp"
#include "emag/objective.hpp"
#include "emag/tensor.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emag::data {

inline constexpr double kImageSizePx = 256.0;

struct ObjectDetection {
  Box box;
  double confidence = 0;

  friend bool operator==(const ObjectDetection&, const ObjectDetection&) = default;
};

struct ObservedFrame {
  std::vector<double> rgb_feat;
  std::vector<double> flow_feat;
  // Flow from the previous frame into this one; optional in files.
  std::optional<ego::FlowField> flow;
  std::optional<Box> left_hand;
  std::optional<Box> right_hand;
  std::vector<ObjectDetection> objects;
  // Previous frame -> this frame, filled by preprocessing.
  std::optional<Homography> homography;
  bool homography_failed = false;
  // Generating homography, present in synthetic data.
  std::optional<Homography> true_homography;
  // Mean background displacement in pixels, filled by preprocessing.
  std::optional<Eigen::Vector2d> background_flow;
};

struct FutureFrame {
  std::optional<Eigen::Vector2d> left;
  std::optional<Eigen::Vector2d> right;
  Homography homography = Homography::Identity();
};

struct SequenceSample {
  std::string id;
  std::string domain;
  std::vector<ObservedFrame> observed;
  std::vector<FutureFrame> future;

  int observed_steps() const { return static_cast<int>(observed.size()); }
  int future_steps() const { return static_cast<int>(future.size()); }

  // Throws ValidationError on malformed boxes, feature size disagreement
  // across frames, non-finite values or future homographies with h33 != 1.
  void validate() const;

  // Ground truth in metric layout.
  objective::HandMatrix future_hands() const;
  objective::VisibilityMatrix future_visibility() const;
};

bool operator==(const ObservedFrame& a, const ObservedFrame& b);
bool operator==(const FutureFrame& a, const FutureFrame& b);
bool operator==(const SequenceSample& a, const SequenceSample& b);

void to_json(nlohmann::json& j, const SequenceSample& s);
// Throws ValidationError on schema violations.
SequenceSample sample_from_json(const nlohmann::json& j);

// One JSON object per line; files ending in ".gz" are gzip-compressed.
void write_dataset(const std::filesystem::path& path, std::span<const SequenceSample> samples);
// Throws ParseError carrying the 1-based line number of the offending record.
std::vector<SequenceSample> read_dataset(const std::filesystem::path& path);

// Raw file contents with gzip transparently decoded.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// --- preprocessing ---------------------------------------------------------

struct PreprocessOptions {
  ego::RansacParams ransac;
  // Copy generating homographies instead of estimating them from flow.
  bool from_homography = false;
};

// Fills homography, homography_failed and background_flow for every observed
// frame. Throws ValidationError when a frame lacks the flow grid (or, with
// from_homography, the generating homography).
void preprocess(SequenceSample& sample, const PreprocessOptions& options);

// --- standardization -------------------------------------------------------

struct DatasetStats {
  ego::StandardizationStats rgb;
  ego::StandardizationStats flow;
  ego::StandardizationStats homography;
  ego::StandardizationStats background_flow;
};

// Statistics over observed frames of the training split only. Throws
// InsufficientDataError on an empty split and ValidationError when frames
// have not been preprocessed.
DatasetStats compute_stats(std::span<const SequenceSample> train);

void to_json(nlohmann::json& j, const DatasetStats& s);
void from_json(const nlohmann::json& j, DatasetStats& s);

// --- batching ----------------------------------------------------------------

enum class EgoRepresentation { kHomography, kBackgroundFlow };

std::string to_string(EgoRepresentation r);
EgoRepresentation ego_representation_from_string(const std::string& s);

struct BatchSpec {
  int top_k_objects = 2;
  double object_threshold = 0.5;
  EgoRepresentation ego = EgoRepresentation::kHomography;
};

// Boxes of the k most confident detections at or above the threshold, in
// descending confidence order; unfilled slots are empty.
std::vector<std::optional<Box>> select_objects(std::span<const ObjectDetection> detections, int k,
                                               double threshold);

struct Batch {
  ad::Index size = 0;
  int observed_steps = 0;
  int future_steps = 0;

  // [B, T, 2 + k, 4]: left, right, then object slots; zero when absent.
  ad::TensorD boxes;
  // [B, T, 2 + k]: 1 where the box is present.
  ad::TensorD box_mask;
  ad::TensorD rgb;   // [B, T, D_rgb], standardized
  ad::TensorD flow;  // [B, T, D_flow], standardized
  ad::TensorD ego;   // [B, T, 9] or [B, T, 2], standardized

  ad::TensorD target_hands;  // [B, F, 4], zero where missing
  ad::TensorD target_mask;   // [B, F, 4]
  ad::TensorD target_ego;    // [B, F, 9], standardized with the observed stats

  std::vector<objective::HandMatrix> gt_hands;
  std::vector<objective::VisibilityMatrix> gt_visibility;
  // Observed hand tracks as boxes, for the classical baselines.
  std::vector<std::vector<std::optional<Box>>> left_tracks;
  std::vector<std::vector<std::optional<Box>>> right_tracks;
};

// Throws ValidationError when samples disagree on T, F or feature sizes, or
// lack the ego representation requested by the spec.
Batch make_batch(std::span<const SequenceSample> samples, std::span<const std::size_t> indices,
                 const DatasetStats& stats, const BatchSpec& spec);

Batch make_batch(std::span<const SequenceSample> samples, const DatasetStats& stats, const BatchSpec& spec);

}  // namespace emag::data
