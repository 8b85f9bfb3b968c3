#include "emag/errors.hpp"
#include "emag/synth.hpp"
#include "emag/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

using namespace emag;
using namespace emag::train;
using ad::TensorD;

namespace {

std::vector<data::SequenceSample> make_split(const std::string& domain, int n, std::uint64_t seed) {
  auto c = synth::builtin_scenario(domain);
  c.include_flow_grids = false;
  c.seed = seed;
  auto samples = synth::generate_dataset(c, n);
  data::PreprocessOptions pass;
  pass.from_homography = true;
  for (auto& s : samples) data::preprocess(s, pass);
  return samples;
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.token_dim = 8;
  c.blocks = 1;
  c.heads = 2;
  c.dropout = 0.0;
  return c;
}

TrainConfig tiny_train(int epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.warmup_epochs = epochs > 1 ? 1 : 0;
  c.peak_lr = 1e-3;
  c.batch_size = 8;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "emag_train_test" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<model::NamedParameter> one_param(std::vector<double> values, bool decay) {
  model::ParameterSet ps;
  ps.add("w", TensorD::from_vector({static_cast<ad::Index>(values.size())}, values), decay);
  return ps.all();
}

void set_grad(model::NamedParameter& p, const TensorD::Array& g) {
  p.tensor.zero_grad();
  // d(sum(w * g))/dw = g
  ad::sum(ad::mul(p.tensor, TensorD({g.size()}, g))).backward();
}

// Wraps a learner and reports a non-finite loss from the given step on.
class PoisonedLearner final : public Learner {
 public:
  PoisonedLearner(Learner& inner, long poison_step) : inner_(inner), poison_step_(poison_step) {}
  model::ParameterSet& parameters() override { return inner_.parameters(); }
  data::BatchSpec batch_spec() const override { return inner_.batch_spec(); }
  TensorD loss(const data::Batch& batch, bool train, const TrainConfig& config) override {
    auto l = inner_.loss(batch, train, config);
    if (++calls_ >= poison_step_) return ad::scale(l, std::numeric_limits<double>::quiet_NaN());
    return l;
  }
  TensorD predict(const data::Batch& batch) override { return inner_.predict(batch); }
  model::Checkpoint checkpoint(const data::DatasetStats& stats, nlohmann::json meta) const override {
    return inner_.checkpoint(stats, std::move(meta));
  }
  void restore(const model::Checkpoint& ckpt) override { inner_.restore(ckpt); }
  void seed(std::uint64_t seed) override { inner_.seed(seed); }

 private:
  Learner& inner_;
  long poison_step_;
  long calls_ = 0;
};

// Predicts the ground truth.
class OracleLearner final : public Learner {
 public:
  model::ParameterSet& parameters() override { return params_; }
  data::BatchSpec batch_spec() const override { return {}; }
  TensorD loss(const data::Batch&, bool, const TrainConfig&) override { return TensorD::scalar(0.0); }
  TensorD predict(const data::Batch& batch) override { return batch.target_hands; }
  model::Checkpoint checkpoint(const data::DatasetStats&, nlohmann::json) const override { return {}; }
  void restore(const model::Checkpoint&) override {}
  void seed(std::uint64_t) override {}

 private:
  model::ParameterSet params_;
};

}  // namespace

// --- schedule ------------------------------------------------------------------

TEST(Schedule, WarmupThenCosine) {
  const TrainConfig c;  // 30 epochs, 5 warmup, peak 2e-4
  const long total = 300;  // warmup ends at step 50
  EXPECT_EQ(lr_at(0, total, c), 0.0);
  EXPECT_EQ(lr_at(50, total, c), 2e-4);
  EXPECT_NEAR(lr_at(total, total, c), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(lr_at(25, total, c), 1e-4);
  EXPECT_NEAR(lr_at(175, total, c), 1e-4, 1e-15);  // cosine midpoint
  EXPECT_NEAR(lr_at(49, total, c), 2e-4 * 49 / 50, 1e-18);
  // Continuous at the boundary: the first cosine step is within one ramp increment.
  EXPECT_LT(std::abs(lr_at(51, total, c) - lr_at(50, total, c)), 2e-4 / 50);
}

TEST(Schedule, PerStepValuesHitEpochMilestones) {
  TrainConfig c;
  c.epochs = 10;
  c.warmup_epochs = 2;
  c.peak_lr = 1.0;
  const long per_epoch = 7, total = 70;
  EXPECT_DOUBLE_EQ(lr_at(per_epoch, total, c), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(2 * per_epoch, total, c), 1.0);
  for (int e = 2; e <= 10; ++e) {
    const double progress = (e - 2) / 8.0;
    EXPECT_NEAR(lr_at(e * per_epoch, total, c), 0.5 * (1 + std::cos(M_PI * progress)), 1e-15);
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup_epochs = c.epochs;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.peak_lr = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  TrainConfig back;
  c = {};
  c.alpha = 0.25;
  from_json(nlohmann::json(c), back);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

// --- AdamW ---------------------------------------------------------------------

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
  auto params = one_param({1.0, -2.0, 3.5}, true);
  set_grad(params[0], TensorD::Array::Zero(3));
  AdamState state;
  TrainConfig c;
  c.weight_decay = 0;
  adamw_step(params, state, 0.1, c);
  EXPECT_TRUE((params[0].tensor.value() == TensorD::Array(TensorD::from_vector({3}, {1.0, -2.0, 3.5}).value())).all());
}

TEST(AdamW, ZeroGradientShrinksDecayedParameters) {
  auto params = one_param({1.0, -2.0, 3.5}, true);
  set_grad(params[0], TensorD::Array::Zero(3));
  AdamState state;
  TrainConfig c;
  c.weight_decay = 0.01;
  adamw_step(params, state, 0.1, c);
  const double shrink = 1 - 0.1 * 0.01;
  EXPECT_DOUBLE_EQ(params[0].tensor.at(0), 1.0 * shrink);
  EXPECT_DOUBLE_EQ(params[0].tensor.at(1), -2.0 * shrink);
  EXPECT_DOUBLE_EQ(params[0].tensor.at(2), 3.5 * shrink);

  auto exempt = one_param({1.0}, false);
  set_grad(exempt[0], TensorD::Array::Zero(1));
  AdamState s2;
  adamw_step(exempt, s2, 0.1, c);
  EXPECT_EQ(exempt[0].tensor.at(0), 1.0);
}

TEST(AdamW, ParametersWithoutGradientAreUntouched) {
  model::ParameterSet ps;
  ps.add("a", TensorD::from_vector({1}, {2.0}), true);
  ps.add("b", TensorD::from_vector({1}, {3.0}), true);
  auto& params = ps.all();
  set_grad(params[0], TensorD::Array::Constant(1, 1.0));
  params[1].tensor.zero_grad();
  AdamState state;
  TrainConfig c;
  c.weight_decay = 0.1;
  adamw_step(params, state, 0.01, c);
  EXPECT_NE(params[0].tensor.at(0), 2.0);
  EXPECT_EQ(params[1].tensor.at(0), 3.0);
  EXPECT_EQ(state.steps[1], 0);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  model::ParameterSet ps;
  ps.add("layer.weight", TensorD::from_vector({2}, {1.0, 1.0}), true);
  ps.add("other", TensorD::from_vector({1}, {5.0}), true);
  auto& params = ps.all();
  set_grad(params[1], TensorD::Array::Constant(1, 1.0));
  TensorD::Array g(2);
  g << 1.0, std::numeric_limits<double>::infinity();
  set_grad(params[0], g);
  AdamState state;
  try {
    adamw_step(params, state, 0.1, TrainConfig{});
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
  EXPECT_EQ(params[1].tensor.at(0), 5.0);
}

TEST(AdamW, QuadraticBowlConverges) {
  auto params = one_param({3.0}, true);
  AdamState state;
  TrainConfig c;
  c.weight_decay = 0;
  const double target = -1.25;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    auto& w = params[0].tensor;
    w.zero_grad();
    // (w - target)^2
    const auto d = ad::add_scalar(w, -target);
    ad::sum(ad::mul(d, d)).backward();
    adamw_step(params, state, 0.05 * (1.0 - steps / 2000.0), c);
    if (std::abs(w.at(0) - target) < 1e-6 && steps > 10) break;
  }
  EXPECT_LT(std::abs(params[0].tensor.at(0) - target), 1e-6);
  EXPECT_LT(steps, 2000);
}

TEST(AdamW, ZeroDecayMatchesReferenceAdam) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0, 1);
  const int size = 5;
  std::vector<double> w0(size);
  for (auto& v : w0) v = n(rng);
  auto params = one_param(w0, true);
  AdamState state;
  TrainConfig c;
  c.weight_decay = 0;

  std::vector<double> w = w0, m(size, 0), v(size, 0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double worst = 0;
  for (int t = 1; t <= 100; ++t) {
    TensorD::Array g(size);
    for (auto& x : g) x = n(rng);
    const double lr = 1e-3 * (1 + 0.01 * t);
    set_grad(params[0], g);
    adamw_step(params, state, lr, c);
    for (int i = 0; i < size; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
      worst = std::max(worst, std::abs(w[i] - params[0].tensor.at(i)));
    }
  }
  EXPECT_LT(worst, 1e-12);
}

// --- fit -----------------------------------------------------------------------

TEST(Fit, SameSeedGivesIdenticalCurves) {
  const auto train = make_split("kitchen", 16, 1);
  const auto val = make_split("kitchen", 8, 2);
  auto run = [&] {
    auto mc = tiny_model();
    mc.dropout = 0.1;
    model::EmagModel m(mc);
    return fit(*make_learner(m), train, val, tiny_train());
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_ade, b.log[i].val_ade);
  }
  EXPECT_EQ(a.steps, 6);
  EXPECT_EQ(a.log.back().step, 6);
  EXPECT_TRUE(std::isfinite(a.log.back().train_loss));
}

TEST(Fit, WritesLogAndCheckpoints) {
  const auto train = make_split("kitchen", 16, 1);
  const auto val = make_split("kitchen", 8, 2);
  const auto dir = scratch("fit_outputs");
  model::EmagModel m(tiny_model());
  FitOptions opts;
  opts.out_dir = dir;
  const auto r = fit(*make_learner(m), train, val, tiny_train(), opts);
  std::ifstream log(dir / "log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "step", "lr", "train_loss", "val_ade", "val_fde"}) EXPECT_TRUE(j.contains(key));
    EXPECT_EQ(j.at("epoch"), ++lines);
  }
  EXPECT_EQ(lines, 3);
  const auto final_ckpt = model::load_checkpoint(dir / "final.json");
  const auto best = model::load_checkpoint(dir / "best.json");
  EXPECT_EQ(final_ckpt.meta.at("epoch"), 3);
  EXPECT_EQ(best.meta.at("epoch"), r.best_epoch);
  double best_ade = 1e300;
  for (const auto& e : r.log) best_ade = std::min(best_ade, *e.val_ade);
  EXPECT_EQ(*r.log[static_cast<std::size_t>(r.best_epoch - 1)].val_ade, best_ade);
  // Statistics come from the training split alone.
  EXPECT_EQ(final_ckpt.stats.rgb.mean, data::compute_stats(train).rgb.mean);
}

TEST(Fit, NonFiniteLossAbortsAndKeepsLastGood) {
  const auto train = make_split("kitchen", 16, 1);
  const auto dir = scratch("fit_abort");
  model::EmagModel m(tiny_model());
  auto inner = make_learner(m);
  PoisonedLearner poisoned(*inner, 5);  // two steps per epoch: dies in epoch 3
  FitOptions opts;
  opts.out_dir = dir;
  try {
    fit(poisoned, train, {}, tiny_train(4), opts);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 3"), std::string::npos) << e.what();
  }
  const auto last = model::load_checkpoint(dir / "last_good.json");
  EXPECT_EQ(last.meta.at("epoch"), 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "final.json"));
}

TEST(Fit, ZeroAlphaLeavesEgoBranchAtInitialization) {
  const auto train = make_split("outdoor", 16, 1);
  model::EmagModel m(tiny_model());
  std::vector<std::pair<std::string, TensorD::Array>> before;
  for (const auto& p : m.parameters().all()) before.emplace_back(p.name, p.tensor.value());
  auto tc = tiny_train();
  tc.alpha = 0;
  tc.weight_decay = 0.1;
  fit(*make_learner(m), train, {}, tc);
  int ego = 0, moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = m.parameters().all()[i];
    const bool unchanged = (p.tensor.value() == before[i].second).all();
    if (p.name.rfind("ego_decoder", 0) == 0 || p.name.rfind("ego_head", 0) == 0) {
      ++ego;
      EXPECT_TRUE(unchanged) << p.name;
    } else if (!unchanged) {
      ++moved;
    }
  }
  EXPECT_GT(ego, 0);
  EXPECT_GT(moved, 0);
}

TEST(Fit, AblatedModalityHasNoParametersToTrain) {
  const auto train = make_split("kitchen", 8, 1);
  auto mc = tiny_model();
  mc.use_flow = false;
  model::EmagModel m(mc);
  fit(*make_learner(m), train, {}, tiny_train(2));
  for (const auto& p : m.parameters().all()) EXPECT_EQ(p.name.find("tokenizer.flow"), std::string::npos);
}

TEST(Fit, Seq2SeqTrains) {
  const auto train = make_split("kitchen", 16, 1);
  model::Seq2SeqConfig sc;
  sc.embed_dim = sc.hidden_dim = 8;
  model::Seq2SeqModel m(sc);
  auto tc = tiny_train(4);
  tc.peak_lr = 1e-2;
  const auto r = fit(*make_learner(m), train, train, tc);
  EXPECT_EQ(r.final_checkpoint.kind, "seq2seq");
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Fit, RejectsEmptyTrainingSplit) {
  model::EmagModel m(tiny_model());
  EXPECT_THROW(fit(*make_learner(m), {}, {}, tiny_train()), InsufficientDataError);
}

// --- evaluate ------------------------------------------------------------------

TEST(Evaluate, OraclePredictionHasZeroError) {
  const auto split = make_split("outdoor", 12, 3);
  OracleLearner oracle;
  const auto r = evaluate(oracle, split, data::compute_stats(split));
  EXPECT_EQ(r.ade, 0.0);
  EXPECT_EQ(r.fde, 0.0);
  EXPECT_EQ(r.n_samples, 12u);
}

TEST(Evaluate, ConstantVelocityOnStaticCamera) {
  synth::ScenarioConfig c = synth::builtin_scenario("kitchen");
  c.camera.rate_std_deg.setZero();
  c.camera.rate_mean_deg.setZero();
  c.hands.pause_prob = 0;
  c.hands.inertia = 0;
  c.hands.speed_min = c.hands.speed_max = 0.004;
  c.hands.missing_prob = 0;
  c.detection_noise_std = 0;
  c.include_flow_grids = false;
  const auto split = synth::generate_dataset(c, 30);
  const auto r = evaluate(Method::kCvm, nullptr, split);
  EXPECT_LT(r.ade, 1.0);
  const auto again = evaluate(Method::kCvm, nullptr, split);
  EXPECT_EQ(r.ade, again.ade);
  EXPECT_EQ(r.fde, again.fde);
}

TEST(Evaluate, LearnedMethodsNeedCheckpoint) {
  const auto split = make_split("kitchen", 4, 3);
  EXPECT_THROW(evaluate(Method::kEmag, nullptr, split), ValidationError);
  EXPECT_THROW(evaluate(Method::kSeq2Seq, nullptr, split), ValidationError);
  EXPECT_NO_THROW(evaluate(Method::kKalman, nullptr, split));
}

TEST(Evaluate, CheckpointEvaluationIsDeterministic) {
  const auto train = make_split("kitchen", 16, 1);
  const auto val = make_split("outdoor", 8, 2);
  model::EmagModel m(tiny_model());
  const auto r = fit(*make_learner(m), train, {}, tiny_train(1));
  const auto a = evaluate(Method::kEmag, &r.final_checkpoint, val);
  const auto b = evaluate(Method::kEmag, &r.final_checkpoint, val);
  EXPECT_EQ(a.ade, b.ade);
  EXPECT_EQ(a.fde, b.fde);
  EXPECT_EQ(a.ade, evaluate(*make_learner(m), val, r.stats).ade);
  EXPECT_THROW(evaluate(Method::kSeq2Seq, &r.final_checkpoint, val), ValidationError);
}

TEST(Evaluate, UnforecastableHandsUseImageCentre) {
  const std::vector<std::optional<Box>> none(8);
  std::vector<std::optional<Box>> right(8);
  right[7] = Box{0.1, 0.2, 0.3, 0.4};
  const auto m = baseline_forecast(Method::kCvm, none, right, 3);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(m(f, 0), 0.5);
    EXPECT_EQ(m(f, 1), 0.5);
    EXPECT_DOUBLE_EQ(m(f, 2), 0.2);
    EXPECT_DOUBLE_EQ(m(f, 3), 0.3);
  }
}

TEST(Methods, Names) {
  for (auto m : {Method::kCvm, Method::kKalman, Method::kSeq2Seq, Method::kEmag})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("oct"), ValidationError);
}

// --- variants and matrix ---------------------------------------------------------

TEST(Variants, Flags) {
  const model::ModelConfig base;
  const model::Seq2SeqConfig sbase;
  const auto no_ego = make_variant("no-ego", base, sbase);
  EXPECT_FALSE(no_ego.model.use_ego);
  EXPECT_EQ(no_ego.alpha, 0.0);
  EXPECT_EQ(no_ego.model.slots(), base.slots() - 1);
  const auto no_loss = make_variant("no-ego-loss", base, sbase);
  EXPECT_TRUE(no_loss.model.use_ego);
  EXPECT_EQ(no_loss.alpha, 0.0);
  const auto rgb = make_variant("rgb-only", base, sbase);
  EXPECT_EQ(rgb.model.slots(), 3);
  EXPECT_EQ(make_variant("bgflow", base, sbase).model.ego_representation, data::EgoRepresentation::kBackgroundFlow);
  EXPECT_EQ(make_variant("kf", base, sbase).method, Method::kKalman);
  EXPECT_FALSE(make_variant("emag", base, sbase).alpha.has_value());
  EXPECT_THROW(make_variant("oct", base, sbase), ValidationError);
}

TEST(Matrix, ProtocolArithmetic) {
  std::vector<DomainSplits> domains = {{"kitchen", {}, make_split("kitchen", 10, 5)},
                                       {"outdoor", {}, make_split("outdoor", 10, 6)}};
  MatrixConfig mc;
  mc.methods = {"cvm"};
  mc.seeds = {0};
  auto report = run_matrix(mc, domains);
  ASSERT_EQ(report.rows.size(), 4u);
  EXPECT_EQ(report.rows[0].record.train_domain, "kitchen");
  EXPECT_EQ(report.rows[0].record.eval_domain, "kitchen");
  EXPECT_EQ(report.rows[1].record.eval_domain, "outdoor");
  mc.methods = {"cvm", "kf"};
  report = run_matrix(mc, domains);
  EXPECT_EQ(report.rows.size(), 8u);
  EXPECT_FALSE(report.any_failure());
  for (const auto& r : report.rows) EXPECT_EQ(r.config_digest.size(), 64u);
}

TEST(Matrix, DropSummaryDefinition) {
  ExperimentReport report;
  report.methods = {"m"};
  report.domains = {"a", "b"};
  auto row = [](const std::string& t, const std::string& e, double ade, std::uint64_t seed) {
    ReportRow r;
    r.record = {"m", t, e, ade, ade, 10, seed};
    return r;
  };
  // Medians over three seeds: a->a 10, b->b 20, a->b 30, b->a 12.
  for (const auto& [t, e, v] : std::vector<std::tuple<std::string, std::string, double>>{
           {"a", "a", 10}, {"b", "b", 20}, {"a", "b", 30}, {"b", "a", 12}}) {
    report.rows.push_back(row(t, e, v - 1, 0));
    report.rows.push_back(row(t, e, v, 1));
    report.rows.push_back(row(t, e, v + 5, 2));
  }
  const auto drops = performance_drop(report);
  ASSERT_EQ(drops.size(), 1u);
  EXPECT_DOUBLE_EQ(drops[0].intra_ade, 15.0);
  EXPECT_DOUBLE_EQ(drops[0].cross_ade, 21.0);
  EXPECT_DOUBLE_EQ(drops[0].drop_percent, 40.0);
}

TEST(Matrix, FailuresAreRecordedPerCell) {
  std::vector<DomainSplits> domains = {{"kitchen", {}, make_split("kitchen", 6, 5)},
                                       {"outdoor", make_split("outdoor", 8, 1), make_split("outdoor", 6, 6)}};
  MatrixConfig mc;
  mc.methods = {"seq2seq"};
  mc.seeds = {0};
  mc.seq2seq.embed_dim = mc.seq2seq.hidden_dim = 4;
  mc.train = tiny_train(1);
  const auto report = run_matrix(mc, domains);
  ASSERT_EQ(report.rows.size(), 4u);
  EXPECT_TRUE(report.any_failure());
  EXPECT_TRUE(report.rows[0].error.has_value());  // kitchen has no training data
  EXPECT_TRUE(report.rows[1].error.has_value());
  EXPECT_FALSE(report.rows[2].error.has_value());
  EXPECT_FALSE(report.rows[3].error.has_value());
  EXPECT_NE(render_table(report).find("FAILED seq2seq kitchen->kitchen"), std::string::npos);
}

TEST(Matrix, TableRendersDeterministically) {
  std::vector<DomainSplits> domains = {{"kitchen", {}, make_split("kitchen", 10, 5)},
                                       {"outdoor", {}, make_split("outdoor", 10, 6)}};
  MatrixConfig mc;
  mc.methods = {"cvm", "kf"};
  mc.seeds = {0, 1};
  const auto a = run_matrix(mc, domains), b = run_matrix(mc, domains);
  EXPECT_EQ(render_table(a), render_table(b));
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  const auto table = render_table(a);
  EXPECT_NE(table.find("kitchen ADE"), std::string::npos);
  EXPECT_NE(table.find("*"), std::string::npos);
  const auto svg = drop_summary_svg(performance_drop(a));
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}

TEST(Digest, Sha256OfCompactJson) {
  EXPECT_EQ(digest(nlohmann::json{{"a", 1}}), "015abd7f5cc57a2dd94b7590f04ad8084273905ee33ec5cebeae62276a97f862");
}
