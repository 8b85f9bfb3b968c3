#pragma once

// Forecasting models: the EMAG multimodal transformer with hand and
// ego-motion decoders, and the Seq2Seq LSTM baseline.

#include "emag/data.hpp"
#include "emag/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace emag::model {

using ad::TensorD;
using Rng = std::mt19937_64;

// --- parameters and layers ---------------------------------------------------

struct NamedParameter {
  std::string name;
  TensorD tensor;
  // Subject to weight decay (weight matrices only).
  bool decay = true;
};

class ParameterSet {
 public:
  TensorD& add(const std::string& name, TensorD tensor, bool decay);
  std::vector<NamedParameter>& all() { return params_; }
  const std::vector<NamedParameter>& all() const { return params_; }
  std::size_t count() const;
  const NamedParameter& find(const std::string& name) const;

 private:
  std::vector<NamedParameter> params_;
};

class Linear {
 public:
  Linear() = default;
  // Xavier-uniform weight [in, out], zero bias.
  Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng);
  TensorD operator()(const TensorD& x) const;
  TensorD& weight() { return w_; }
  TensorD& bias() { return b_; }

 private:
  TensorD w_, b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, int dim);
  TensorD operator()(const TensorD& x) const;

 private:
  TensorD gain_, bias_;
};

// Key positions flagged 1 are ignored; one flag per (batch, key).
using KeyMask = std::vector<std::uint8_t>;

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, int dim, int heads, Rng& rng);
  // query [B, Lq, C], memory [B, Lk, C] -> [B, Lq, C]
  TensorD operator()(const TensorD& query, const TensorD& memory, const KeyMask* key_mask, bool causal) const;

 private:
  Linear q_, k_, v_, o_;
  int heads_ = 1;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterSet& params, const std::string& name, int dim, int hidden, Rng& rng);
  TensorD operator()(const TensorD& x) const;

 private:
  Linear in_, out_;
};

// Linear -> ReLU -> Dropout -> Linear, shared across future steps.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(ParameterSet& params, const std::string& name, int dim, int out, Rng& rng);
  TensorD operator()(const TensorD& x, double dropout, bool train, Rng& rng) const;
  Linear& final_layer() { return out_; }

 private:
  Linear in_, out_;
};

// sinusoid(t)[2i] = sin(t / 10000^(2i/C)), sinusoid(t)[2i+1] = cos(t / 10000^(2i/C))
TensorD::Array sinusoid(double t, int dim);

// --- EMAG --------------------------------------------------------------------

struct ModelConfig {
  int token_dim = 64;
  int observed_steps = 8;
  int future_steps = 4;
  int top_k_objects = 2;
  double object_threshold = 0.5;
  int blocks = 2;
  int heads = 8;
  double dropout = 0.1;
  int rgb_dim = 32;
  int flow_dim = 32;
  bool use_objects = true;
  bool use_rgb = true;
  bool use_flow = true;
  bool use_ego = true;
  data::EgoRepresentation ego_representation = data::EgoRepresentation::kHomography;
  // Add sinusoid(T + f) to decoder queries.
  bool future_time_encoding = true;
  // Decoders attend to the tokens of every observed frame instead of the last.
  bool full_memory = false;
  std::uint64_t init_seed = 0;

  // Modality slots per frame: 2 + k*use_objects + use_rgb + use_flow + use_ego.
  int slots() const;
  data::BatchSpec batch_spec() const;
  // Throws ValidationError on inconsistent values.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Fields absent from j keep the values already in c.
void from_json(const nlohmann::json& j, ModelConfig& c);

// Closed-form parameter count:
//   box tokenizer 5C, rgb (D_rgb+1)C, flow (D_flow+1)C, ego (E+1)C with E = 9 or 2,
//   modal table MC, encoder blocks x (12C^2 + 13C),
//   each decoder C + blocks x (16C^2 + 21C), hand head C^2 + 5C + 4,
//   ego head C^2 + 10C + 9. Disabled modalities contribute nothing.
std::size_t expected_parameter_count(const ModelConfig& c);

struct ForecastOutput {
  TensorD hands;  // [B, F, 4]
  TensorD ego;    // [B, F, 9], undefined without the ego branch
};

struct TokenGrid {
  TensorD tokens;  // [B, T, M, C]
  // [B * T * M], 1 where the token is absent.
  KeyMask absent;
};

class EmagModel {
 public:
  explicit EmagModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  ForecastOutput forward(const data::Batch& batch, bool train);

  // Pipeline stages, exposed for testing.
  TokenGrid tokenize(const data::Batch& batch) const;
  TokenGrid apply_index_encodings(const TokenGrid& grid) const;
  TensorD encode(const TokenGrid& grid, bool train);
  TensorD decode_hands(const TensorD& encoded, const TokenGrid& grid, int future_steps, bool train);
  TensorD decode_ego(const TensorD& encoded, const TokenGrid& grid, int future_steps, bool train);

  // Slot index of each modality within a frame; -1 when disabled.
  int rgb_slot() const;
  int flow_slot() const;
  int ego_slot() const;

  void set_dropout_seed(std::uint64_t seed) { dropout_rng_.seed(seed); }

 private:
  struct EncoderBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;
  };
  struct DecoderBlock {
    LayerNorm ln_self, ln_cross, ln_memory, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;
  };
  struct Decoder {
    TensorD query;
    std::vector<DecoderBlock> blocks;
  };

  Decoder make_decoder(const std::string& name, Rng& rng);
  TensorD run_decoder(const Decoder& d, const TensorD& memory, const KeyMask* memory_mask, int future_steps,
                      bool train);
  TensorD residual_dropout(const TensorD& x, bool train);

  ModelConfig config_;
  ParameterSet params_;
  Linear box_, rgb_, flow_, ego_;
  TensorD modal_;
  std::vector<EncoderBlock> encoder_;
  Decoder hand_decoder_, ego_decoder_;
  MlpHead hand_head_, ego_head_;
  Rng dropout_rng_;
};

// --- Seq2Seq -----------------------------------------------------------------

struct Seq2SeqConfig {
  int embed_dim = 64;
  int hidden_dim = 64;
  int observed_steps = 8;
  int future_steps = 4;
  double teacher_forcing = 0.5;
  std::uint64_t init_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const Seq2SeqConfig& c);
void from_json(const nlohmann::json& j, Seq2SeqConfig& c);

class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParameterSet& params, const std::string& name, int in, int hidden, Rng& rng);
  // (h, c) -> (h', c'), each [B, H]
  std::pair<TensorD, TensorD> operator()(const TensorD& x, const TensorD& h, const TensorD& c) const;

 private:
  Linear x_, h_;
  int hidden_ = 0;
};

// Observed hand centers [B, T, 4] with missing entries carried forward; a
// leading gap takes the first observation and a never-seen hand the image
// center.
TensorD impute_tracks(const data::Batch& batch);

class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(const Seq2SeqConfig& config);

  const Seq2SeqConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Observed tracks [B, T, 4] -> forecast [B, F, 4]. In training, each
  // decoder input after the first is the visible ground truth with
  // probability teacher_forcing (per step and sample), else the previous
  // prediction. `decoder_inputs` optionally records what was fed.
  TensorD forward(const TensorD& tracks, bool train, const data::Batch* targets = nullptr,
                  std::vector<TensorD>* decoder_inputs = nullptr);
  TensorD forward(const data::Batch& batch, bool train);

  void set_teacher_seed(std::uint64_t seed) { teacher_rng_.seed(seed); }

 private:
  Seq2SeqConfig config_;
  ParameterSet params_;
  Linear embed_in_, embed_out_, project_;
  LstmCell encoder_, decoder_;
  Rng teacher_rng_;
};

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  std::string kind;  // "emag" or "seq2seq"
  nlohmann::json config;
  data::DatasetStats stats;
  nlohmann::json meta;
  std::vector<std::pair<std::string, TensorD>> parameters;
};

Checkpoint make_checkpoint(const EmagModel& m, const data::DatasetStats& stats, nlohmann::json meta = {});
Checkpoint make_checkpoint(const Seq2SeqModel& m, const data::DatasetStats& stats, nlohmann::json meta = {});

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies parameter values into the model. Throws ValidationError when the
// checkpoint kind, config or parameter names/shapes disagree with the model.
void restore(EmagModel& m, const Checkpoint& ckpt);
void restore(Seq2SeqModel& m, const Checkpoint& ckpt);

}  // namespace emag::model
