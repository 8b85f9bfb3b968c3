#pragma once

// Training objectives and displacement metrics.
//
// Hand coordinates are normalized (image height = 1). Losses take a
// coordinate scale so the smooth-L1 control point can be expressed in
// pixels; metrics always report pixels on a 256 px image height.

#include "emag/tensor.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace emag::objective {

inline constexpr double kImageHeightPx = 256.0;
inline constexpr double kDefaultBeta = 5.0;

// Self-adjusting smooth L1 over masked coordinates:
//   l_i = 0.5 w_i d_i^2 / beta        if |d_i| < beta
//       = w_i (|d_i| - 0.5 beta)      otherwise
// with d_i = coord_scale * (target_i - pred_i), averaged over all elements.
// Masked elements (w_i = 0) receive an exactly-zero gradient.
ad::TensorD hand_loss(const ad::TensorD& pred, const ad::TensorD& target, const ad::TensorD& mask,
                      double beta = kDefaultBeta, double coord_scale = 1.0);

// Mean squared error over every element.
ad::TensorD ego_loss(const ad::TensorD& pred, const ad::TensorD& target);

// hand + alpha * ego. With alpha == 0 (or an undefined ego term) the ego
// branch is left out of the graph entirely.
ad::TensorD total_loss(const ad::TensorD& hand, const ad::TensorD& ego, double alpha);

// Per-sample future hand positions: F rows of (left x, left y, right x, right y).
using HandMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4>;
// F rows of (left visible, right visible).
using VisibilityMatrix = Eigen::Array<bool, Eigen::Dynamic, 2>;

// Mean Euclidean error over visible (hand, step) pairs in 256 px units;
// nullopt when nothing is visible (excluded from aggregation).
std::optional<double> ade(const HandMatrix& pred, const HandMatrix& gt, const VisibilityMatrix& visible);

// Mean last-step error over visible hands; nullopt when neither is visible.
std::optional<double> fde(const HandMatrix& pred, const HandMatrix& gt, const VisibilityMatrix& visible);

// Unweighted mean of per-sample values, skipping excluded samples.
class MetricAccumulator {
 public:
  void add(std::optional<double> ade_value, std::optional<double> fde_value);

  double ade() const;
  double fde() const;
  std::size_t ade_count() const { return n_ade_; }
  std::size_t fde_count() const { return n_fde_; }
  std::size_t samples() const { return samples_; }

 private:
  double ade_sum_ = 0, fde_sum_ = 0;
  std::size_t n_ade_ = 0, n_fde_ = 0, samples_ = 0;
};

// One evaluation cell as serialized in metric reports.
struct MetricRecord {
  std::string method;
  std::string train_domain;
  std::string eval_domain;
  double ade = 0;
  double fde = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);

}  // namespace emag::objective
