#include "emag/errors.hpp"
#include "emag/objective.hpp"

#include <cmath>

namespace emag::objective {

using ad::TensorD;

TensorD hand_loss(const TensorD& pred, const TensorD& target, const TensorD& mask, double beta,
                  double coord_scale) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape()) {
    throw ValidationError("hand_loss: prediction " + ad::to_string(pred.shape()) + ", target " +
                          ad::to_string(target.shape()) + " and mask " +
                          ad::to_string(mask.shape()) + " must agree");
  }
  if (!(beta > 0)) throw ValidationError("hand_loss: beta must be positive");
  const auto n = pred.size();
  TensorD::Array diff = coord_scale * (target.value() - pred.value());
  TensorD::Array dl_dpred(n);
  double total = 0;
  for (ad::Index i = 0; i < n; ++i) {
    const double w = mask.at(i);
    const double d = diff[i];
    if (w == 0.0) {
      dl_dpred[i] = 0.0;
      continue;
    }
    if (std::abs(d) < beta) {
      total += 0.5 * w * d * d / beta;
      dl_dpred[i] = -w * d / beta * coord_scale;
    } else {
      total += w * (std::abs(d) - 0.5 * beta);
      dl_dpred[i] = -w * (d > 0 ? 1.0 : -1.0) * coord_scale;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  dl_dpred *= inv_n;
  return ad::make_result<double>({}, TensorD::Array::Constant(1, total * inv_n), {pred},
                                 [g = std::move(dl_dpred)](ad::Node<double>& self) {
                                   self.parents[0]->accumulate(g * self.grad[0]);
                                 });
}

TensorD ego_loss(const TensorD& pred, const TensorD& target) {
  if (pred.shape() != target.shape()) {
    throw ValidationError("ego_loss: prediction " + ad::to_string(pred.shape()) + " vs target " +
                          ad::to_string(target.shape()));
  }
  const TensorD diff = ad::sub(pred, target.detach());
  return ad::mean(ad::mul(diff, diff));
}

TensorD total_loss(const TensorD& hand, const TensorD& ego, double alpha) {
  if (alpha < 0) throw ValidationError("total_loss: alpha must be non-negative");
  if (alpha == 0.0 || !ego.defined()) return hand;
  return ad::add(hand, ad::scale(ego, alpha));
}

}  // namespace emag::objective
