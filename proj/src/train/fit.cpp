#include "emag/baselines.hpp"
#include "emag/errors.hpp"
#include "emag/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace emag::train {

namespace {

class EmagLearner final : public Learner {
 public:
  explicit EmagLearner(model::EmagModel& m) : m_(m) {}
  model::ParameterSet& parameters() override { return m_.parameters(); }
  data::BatchSpec batch_spec() const override { return m_.config().batch_spec(); }
  ad::TensorD loss(const data::Batch& batch, bool train, const TrainConfig& config) override {
    const auto out = m_.forward(batch, train);
    const auto hand =
        objective::hand_loss(out.hands, batch.target_hands, batch.target_mask, config.beta, objective::kImageHeightPx);
    if (!out.ego.defined()) return hand;
    return objective::total_loss(hand, objective::ego_loss(out.ego, batch.target_ego), config.alpha);
  }
  ad::TensorD predict(const data::Batch& batch) override { return m_.forward(batch, false).hands; }
  model::Checkpoint checkpoint(const data::DatasetStats& stats, nlohmann::json meta) const override {
    return model::make_checkpoint(m_, stats, std::move(meta));
  }
  void restore(const model::Checkpoint& ckpt) override { model::restore(m_, ckpt); }
  void seed(std::uint64_t seed) override { m_.set_dropout_seed(seed); }

 private:
  model::EmagModel& m_;
};

class Seq2SeqLearner final : public Learner {
 public:
  explicit Seq2SeqLearner(model::Seq2SeqModel& m) : m_(m) {}
  model::ParameterSet& parameters() override { return m_.parameters(); }
  data::BatchSpec batch_spec() const override { return {}; }
  ad::TensorD loss(const data::Batch& batch, bool train, const TrainConfig& config) override {
    return objective::hand_loss(m_.forward(batch, train), batch.target_hands, batch.target_mask, config.beta,
                                objective::kImageHeightPx);
  }
  ad::TensorD predict(const data::Batch& batch) override { return m_.forward(batch, false); }
  model::Checkpoint checkpoint(const data::DatasetStats& stats, nlohmann::json meta) const override {
    return model::make_checkpoint(m_, stats, std::move(meta));
  }
  void restore(const model::Checkpoint& ckpt) override { model::restore(m_, ckpt); }
  void seed(std::uint64_t seed) override { m_.set_teacher_seed(seed); }

 private:
  model::Seq2SeqModel& m_;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Fisher-Yates with a modulo draw, so the order does not depend on the
// standard library's distribution implementation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch))));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  out << line << "\n";
}

}  // namespace

std::unique_ptr<Learner> make_learner(model::EmagModel& m) { return std::make_unique<EmagLearner>(m); }
std::unique_ptr<Learner> make_learner(model::Seq2SeqModel& m) { return std::make_unique<Seq2SeqLearner>(m); }

void to_json(nlohmann::json& j, const EpochLog& e) {
  j = {{"epoch", e.epoch}, {"step", e.step}, {"lr", e.lr}, {"train_loss", e.train_loss}};
  j["val_ade"] = e.val_ade ? nlohmann::json(*e.val_ade) : nlohmann::json(nullptr);
  j["val_fde"] = e.val_fde ? nlohmann::json(*e.val_fde) : nlohmann::json(nullptr);
}

FitResult fit(Learner& learner, std::span<const data::SequenceSample> train,
              std::span<const data::SequenceSample> val, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (train.empty()) throw InsufficientDataError("fit: empty training split");
  FitResult result;
  result.stats = data::compute_stats(train);
  const auto spec = learner.batch_spec();
  const std::size_t n = train.size(), bs = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total_steps = steps_per_epoch * config.epochs;

  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::filesystem::remove(*options.out_dir / "log.jsonl");
  }
  learner.seed(config.seed);
  auto& params = learner.parameters().all();
  AdamState state;
  model::Checkpoint last_good = learner.checkpoint(result.stats, {{"epoch", 0}});
  std::optional<double> best_ade;

  auto abort = [&](const std::string& why) {
    if (options.out_dir) model::save_checkpoint(*options.out_dir / "last_good.json", last_good);
    throw TrainingAborted(why);
  };

  long step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    const auto order = epoch_order(n, config.seed, epoch);
    double loss_sum = 0;
    long batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto batch = data::make_batch(train, idx, result.stats, spec);
      for (auto& p : params) p.tensor.zero_grad();
      auto loss = learner.loss(batch, true, config);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        abort("non-finite training loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1));
      }
      loss.backward();
      ++step;
      try {
        adamw_step(params, state, lr_at(step, total_steps, config), config);
      } catch (const TrainingAborted& e) {
        abort(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += value;
      ++batches;
      if (options.max_steps && step >= *options.max_steps) {
        stop = true;
        break;
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.step = step;
    entry.lr = lr_at(step, total_steps, config);
    entry.train_loss = loss_sum / static_cast<double>(batches);
    const bool last = epoch == config.epochs || stop;
    const nlohmann::json meta = {{"epoch", epoch}, {"step", step}};
    if (!val.empty() && (epoch % config.eval_every == 0 || last)) {
      const auto r = evaluate(learner, val, result.stats);
      entry.val_ade = r.ade;
      entry.val_fde = r.fde;
      if (!best_ade || r.ade < *best_ade) {
        best_ade = r.ade;
        result.best_epoch = epoch;
        result.best_checkpoint = learner.checkpoint(result.stats, meta);
      }
    }
    last_good = learner.checkpoint(result.stats, meta);
    result.log.push_back(entry);
    if (options.out_dir) append_line(*options.out_dir / "log.jsonl", nlohmann::json(entry).dump());
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.steps = step;
  result.final_checkpoint = std::move(last_good);
  if (!best_ade) {
    result.best_checkpoint = result.final_checkpoint;
    result.best_epoch = result.log.back().epoch;
  }
  if (options.out_dir) {
    model::save_checkpoint(*options.out_dir / "final.json", result.final_checkpoint);
    model::save_checkpoint(*options.out_dir / "best.json", result.best_checkpoint);
  }
  return result;
}

EvalResult evaluate(Learner& learner, std::span<const data::SequenceSample> split, const data::DatasetStats& stats,
                    int batch_size) {
  if (split.empty()) throw InsufficientDataError("evaluate: empty split");
  ad::NoGradGuard no_grad;
  objective::MetricAccumulator acc;
  const auto spec = learner.batch_spec();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = data::make_batch(split, idx, stats, spec);
    const auto pred = learner.predict(batch);
    const ad::Index F = batch.future_steps;
    for (ad::Index b = 0; b < batch.size; ++b) {
      objective::HandMatrix p(F, 4);
      for (ad::Index f = 0; f < F; ++f)
        for (int k = 0; k < 4; ++k) p(f, k) = pred.at((b * F + f) * 4 + k);
      acc.add(objective::ade(p, batch.gt_hands[b], batch.gt_visibility[b]),
              objective::fde(p, batch.gt_hands[b], batch.gt_visibility[b]));
    }
  }
  return {acc.ade(), acc.fde(), acc.samples()};
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kCvm: return "cvm";
    case Method::kKalman: return "kf";
    case Method::kSeq2Seq: return "seq2seq";
    case Method::kEmag: return "emag";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "cvm") return Method::kCvm;
  if (s == "kf") return Method::kKalman;
  if (s == "seq2seq") return Method::kSeq2Seq;
  if (s == "emag") return Method::kEmag;
  throw ValidationError("unknown method '" + s + "' (expected cvm, kf, seq2seq or emag)");
}

bool is_learned(Method m) { return m == Method::kSeq2Seq || m == Method::kEmag; }

objective::HandMatrix baseline_forecast(Method method, const std::vector<std::optional<Box>>& left,
                                        const std::vector<std::optional<Box>>& right, int future_steps) {
  objective::HandMatrix out(future_steps, 4);
  const std::vector<std::optional<Box>>* tracks[2] = {&left, &right};
  for (int hand = 0; hand < 2; ++hand) {
    const auto track =
        baselines::HandTrack::from_boxes(hand == 0 ? baselines::HandSide::kLeft : baselines::HandSide::kRight,
                                         *tracks[hand]);
    std::optional<baselines::Trajectory> traj;
    if (method == Method::kCvm) {
      traj = baselines::cvm_forecast(track, future_steps);
    } else if (method == Method::kKalman) {
      traj = baselines::kalman_forecast(track, future_steps);
    } else {
      throw ContractError("baseline_forecast: not a classical baseline");
    }
    for (int f = 0; f < future_steps; ++f) {
      const Eigen::Vector2d p = traj ? (*traj)[f] : Eigen::Vector2d(0.5, 0.5);
      out(f, 2 * hand) = p.x();
      out(f, 2 * hand + 1) = p.y();
    }
  }
  return out;
}

EvalResult evaluate(Method method, const model::Checkpoint* checkpoint, std::span<const data::SequenceSample> split) {
  if (split.empty()) throw InsufficientDataError("evaluate: empty split");
  if (!is_learned(method)) {
    objective::MetricAccumulator acc;
    for (const auto& s : split) {
      std::vector<std::optional<Box>> left, right;
      for (const auto& o : s.observed) {
        left.push_back(o.left_hand);
        right.push_back(o.right_hand);
      }
      const auto pred = baseline_forecast(method, left, right, s.future_steps());
      const auto gt = s.future_hands();
      const auto vis = s.future_visibility();
      acc.add(objective::ade(pred, gt, vis), objective::fde(pred, gt, vis));
    }
    return {acc.ade(), acc.fde(), acc.samples()};
  }
  if (!checkpoint) throw ValidationError("method " + to_string(method) + " requires a checkpoint");
  if (method == Method::kEmag) {
    if (checkpoint->kind != "emag") throw ValidationError("checkpoint holds a '" + checkpoint->kind + "' model");
    model::ModelConfig c;
    from_json(checkpoint->config, c);
    model::EmagModel m(c);
    model::restore(m, *checkpoint);
    return evaluate(*make_learner(m), split, checkpoint->stats);
  }
  if (checkpoint->kind != "seq2seq") throw ValidationError("checkpoint holds a '" + checkpoint->kind + "' model");
  model::Seq2SeqConfig c;
  from_json(checkpoint->config, c);
  model::Seq2SeqModel m(c);
  model::restore(m, *checkpoint);
  return evaluate(*make_learner(m), split, checkpoint->stats);
}

}  // namespace emag::train
