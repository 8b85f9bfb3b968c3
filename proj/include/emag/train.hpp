#pragma once

// Optimization loop and experiment harness: AdamW with a warmup + cosine
// schedule, fitting of the learned forecasters, evaluation of every method,
// and the intra/cross-domain experiment matrix.

#include "emag/data.hpp"
#include "emag/model.hpp"
#include "emag/objective.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace emag::train {

struct TrainConfig {
  int epochs = 30;
  double peak_lr = 2e-4;
  int warmup_epochs = 5;
  double weight_decay = 1e-3;
  int batch_size = 16;
  // Weight of the ego-motion loss.
  double alpha = 1.0;
  // Smooth-L1 control point in pixels.
  double beta = 5.0;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Validate every this many epochs (and always after the last one).
  int eval_every = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear ramp 0 -> peak over the warmup steps, then
// peak * 0.5 * (1 + cos(pi * progress)) down to 0 at total_steps. The warmup
// covers total_steps * warmup_epochs / epochs steps.
double lr_at(long step, long total_steps, const TrainConfig& config);

struct AdamState {
  std::vector<ad::TensorD::Array> m, v;
  std::vector<long> steps;
};

// One AdamW update of every parameter that holds a gradient. Weight decay is
// decoupled (p -= lr * wd * p) and applies only to parameters flagged for
// decay. Parameters without a gradient are left untouched. Throws
// TrainingAborted naming the first parameter with a non-finite gradient,
// before anything is modified.
void adamw_step(std::vector<model::NamedParameter>& params, AdamState& state, double lr, const TrainConfig& config);

// Uniform view of the learned forecasters for the training loop.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual model::ParameterSet& parameters() = 0;
  virtual data::BatchSpec batch_spec() const = 0;
  // Scalar training objective on a batch.
  virtual ad::TensorD loss(const data::Batch& batch, bool train, const TrainConfig& config) = 0;
  // Eval-mode hand forecast [B, F, 4].
  virtual ad::TensorD predict(const data::Batch& batch) = 0;
  virtual model::Checkpoint checkpoint(const data::DatasetStats& stats, nlohmann::json meta) const = 0;
  virtual void restore(const model::Checkpoint& ckpt) = 0;
  virtual void seed(std::uint64_t seed) = 0;
};

std::unique_ptr<Learner> make_learner(model::EmagModel& m);
std::unique_ptr<Learner> make_learner(model::Seq2SeqModel& m);

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_ade, val_fde;
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct FitOptions {
  // When set, receives log.jsonl, best.json and final.json (and last_good.json
  // on abort).
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochLog&)> on_epoch;
  // Stop after this many optimizer steps; the schedule still spans the
  // configured epochs.
  std::optional<long> max_steps;
};

struct FitResult {
  std::vector<EpochLog> log;
  data::DatasetStats stats;
  model::Checkpoint final_checkpoint;
  // Lowest validation ADE; equals the final checkpoint without a val split.
  model::Checkpoint best_checkpoint;
  int best_epoch = 0;
  long steps = 0;
};

// Trains on `train` with statistics computed from it alone. Each epoch
// shuffles with a seed derived from config.seed and the epoch, runs
// forward, loss, backward and an AdamW step per batch, and evaluates `val`
// when non-empty. Throws TrainingAborted on a non-finite loss or gradient,
// after writing the last completed epoch's weights to last_good.json.
FitResult fit(Learner& learner, std::span<const data::SequenceSample> train,
              std::span<const data::SequenceSample> val, const TrainConfig& config, const FitOptions& options = {});

struct EvalResult {
  double ade = 0;
  double fde = 0;
  std::size_t n_samples = 0;
};

// Eval-mode ADE/FDE of a learner on a split, in batches.
EvalResult evaluate(Learner& learner, std::span<const data::SequenceSample> split, const data::DatasetStats& stats,
                    int batch_size = 64);

enum class Method { kCvm, kKalman, kSeq2Seq, kEmag };

std::string to_string(Method m);
// Accepts cvm, kf, seq2seq and emag.
Method method_from_string(const std::string& s);
bool is_learned(Method m);

// Classical baselines need no checkpoint; learned methods throw
// ValidationError without one.
EvalResult evaluate(Method method, const model::Checkpoint* checkpoint, std::span<const data::SequenceSample> split);

// Hands that cannot be forecast from their history (never observed) are
// placed at the image centre, matching the Seq2Seq imputation.
objective::HandMatrix baseline_forecast(Method method, const std::vector<std::optional<Box>>& left,
                                        const std::vector<std::optional<Box>>& right, int future_steps);

// --- experiment matrix ---------------------------------------------------------

// A learned method with its modality and loss flags. Names: emag, no-objects,
// no-rgb, no-flow, no-ego (ego tokens removed, alpha = 0), rgb-only (rgb
// tokens plus hand boxes), no-ego-loss (alpha = 0), bgflow, seq2seq; cvm
// and kf are the classical baselines.
struct Variant {
  std::string name;
  Method method = Method::kEmag;
  model::ModelConfig model;
  model::Seq2SeqConfig seq2seq;
  std::optional<double> alpha;
};

Variant make_variant(const std::string& name, const model::ModelConfig& base, const model::Seq2SeqConfig& seq_base);
std::vector<std::string> variant_names();

struct DomainSplits {
  std::string name;
  std::vector<data::SequenceSample> train;
  std::vector<data::SequenceSample> val;
};

struct MatrixConfig {
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  model::ModelConfig model;
  model::Seq2SeqConfig seq2seq;
  TrainConfig train;
  // Report numbers from the best-validation checkpoint instead of the final one.
  bool use_best_checkpoint = false;
  // Where checkpoints are written; empty keeps them in memory only.
  std::filesystem::path checkpoint_dir;
};

struct ReportRow {
  objective::MetricRecord record;
  std::string checkpoint;  // path, or empty for baselines
  std::string checkpoint_kind;  // "final", "best" or empty
  std::string config_digest;
  std::optional<std::string> error;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> domains;
  std::vector<std::string> methods;

  bool any_failure() const;
};

void to_json(nlohmann::json& j, const ReportRow& r);
void to_json(nlohmann::json& j, const ExperimentReport& r);

// Trains every learned method per train domain and seed, evaluates it on the
// validation split of every domain, and records per-cell failures without
// stopping. Rows are ordered by method, train domain, eval domain, seed.
ExperimentReport run_matrix(const MatrixConfig& config, const std::vector<DomainSplits>& domains);

// Median over seeds per (method, train domain, eval domain).
struct CellSummary {
  std::string method, train_domain, eval_domain;
  double ade = 0, fde = 0;
  std::size_t seeds = 0;
};
std::vector<CellSummary> summarize(const ExperimentReport& report);

// (cross - intra) / intra in percent, from median ADE, per method; cross and
// intra each average over the domain pairs.
struct DropSummary {
  std::string method;
  double intra_ade = 0, cross_ade = 0, drop_percent = 0;
};
std::vector<DropSummary> performance_drop(const ExperimentReport& report);

// Aligned plain-text table: one row per (method, train domain), one
// ADE/FDE column pair per eval domain, best value per column marked with *.
std::string render_table(const ExperimentReport& report);
std::string render_drop_summary(const std::vector<DropSummary>& drops);
std::string drop_summary_svg(const std::vector<DropSummary>& drops);
std::string loss_curve_svg(const std::vector<EpochLog>& log);

// SHA-256 of a canonical JSON dump, hex encoded.
std::string digest(const nlohmann::json& j);

}  // namespace emag::train
