#include "emag/errors.hpp"
#include "emag/objective.hpp"

#include <limits>

namespace emag::objective {

namespace {

void check_shapes(const HandMatrix& pred, const HandMatrix& gt, const VisibilityMatrix& visible) {
  if (pred.rows() != gt.rows() || visible.rows() != gt.rows()) {
    throw ValidationError("metric inputs disagree on the number of future steps");
  }
}

double pixel_distance(const HandMatrix& pred, const HandMatrix& gt, Eigen::Index step, int hand) {
  const auto d = (pred.block<1, 2>(step, 2 * hand) - gt.block<1, 2>(step, 2 * hand)) * kImageHeightPx;
  return d.norm();
}

}  // namespace

std::optional<double> ade(const HandMatrix& pred, const HandMatrix& gt, const VisibilityMatrix& visible) {
  check_shapes(pred, gt, visible);
  double total = 0;
  int n = 0;
  for (Eigen::Index f = 0; f < gt.rows(); ++f) {
    for (int hand = 0; hand < 2; ++hand) {
      if (!visible(f, hand)) continue;
      total += pixel_distance(pred, gt, f, hand);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

std::optional<double> fde(const HandMatrix& pred, const HandMatrix& gt, const VisibilityMatrix& visible) {
  check_shapes(pred, gt, visible);
  if (gt.rows() == 0) return std::nullopt;
  const Eigen::Index last = gt.rows() - 1;
  double total = 0;
  int n = 0;
  for (int hand = 0; hand < 2; ++hand) {
    if (!visible(last, hand)) continue;
    total += pixel_distance(pred, gt, last, hand);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

void MetricAccumulator::add(std::optional<double> ade_value, std::optional<double> fde_value) {
  ++samples_;
  if (ade_value) {
    ade_sum_ += *ade_value;
    ++n_ade_;
  }
  if (fde_value) {
    fde_sum_ += *fde_value;
    ++n_fde_;
  }
}

double MetricAccumulator::ade() const {
  return n_ade_ ? ade_sum_ / static_cast<double>(n_ade_) : std::numeric_limits<double>::quiet_NaN();
}

double MetricAccumulator::fde() const {
  return n_fde_ ? fde_sum_ / static_cast<double>(n_fde_) : std::numeric_limits<double>::quiet_NaN();
}

void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = nlohmann::json{{"method", r.method},         {"train_domain", r.train_domain},
                     {"eval_domain", r.eval_domain}, {"ade", r.ade},
                     {"fde", r.fde},               {"n_samples", r.n_samples},
                     {"seed", r.seed}};
}

void from_json(const nlohmann::json& j, MetricRecord& r) {
  j.at("method").get_to(r.method);
  j.at("train_domain").get_to(r.train_domain);
  j.at("eval_domain").get_to(r.eval_domain);
  j.at("ade").get_to(r.ade);
  j.at("fde").get_to(r.fde);
  j.at("n_samples").get_to(r.n_samples);
  j.at("seed").get_to(r.seed);
}

}  // namespace emag::objective
