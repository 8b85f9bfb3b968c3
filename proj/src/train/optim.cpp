#include "emag/errors.hpp"
#include "emag/train.hpp"

#include <cmath>
#include <numbers>

namespace emag::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ValidationError("warmup_epochs must lie in [0, epochs)");
  if (!(peak_lr > 0) || !std::isfinite(peak_lr)) throw ValidationError("peak_lr must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be >= 0");
  if (!(alpha >= 0)) throw ValidationError("alpha must be >= 0");
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ValidationError("adam_eps must be positive");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"peak_lr", c.peak_lr},
       {"warmup_epochs", c.warmup_epochs},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"seed", c.seed},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto read = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  read("epochs", c.epochs);
  read("peak_lr", c.peak_lr);
  read("warmup_epochs", c.warmup_epochs);
  read("weight_decay", c.weight_decay);
  read("batch_size", c.batch_size);
  read("alpha", c.alpha);
  read("beta", c.beta);
  read("seed", c.seed);
  read("adam_beta1", c.adam_beta1);
  read("adam_beta2", c.adam_beta2);
  read("adam_eps", c.adam_eps);
  read("eval_every", c.eval_every);
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
  if (total_steps <= 0) return 0.0;
  step = std::clamp(step, 0L, total_steps);
  const double warmup = static_cast<double>(total_steps) * config.warmup_epochs / config.epochs;
  if (step < warmup) return config.peak_lr * step / warmup;
  const double span = total_steps - warmup;
  const double progress = span > 0 ? (step - warmup) / span : 1.0;
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::vector<model::NamedParameter>& params, AdamState& state, double lr, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(ad::TensorD::Array::Zero(p.tensor.size()));
      state.v.push_back(ad::TensorD::Array::Zero(p.tensor.size()));
      state.steps.push_back(0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adamw: optimizer state does not match the parameters");
  for (const auto& p : params) {
    if (p.tensor.has_grad() && !p.tensor.grad().allFinite()) {
      throw TrainingAborted("non-finite gradient in parameter " + p.name);
    }
  }
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor.has_grad()) continue;
    const auto& g = p.tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const long t = ++state.steps[i];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.square();
    const double c1 = 1 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t));
    auto& value = p.tensor.value();
    if (p.decay && config.weight_decay > 0) value -= lr * config.weight_decay * value;
    value -= lr * (m / c1) / ((v / c2).sqrt() + config.adam_eps);
  }
}

}  // namespace emag::train
