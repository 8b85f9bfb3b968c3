#include "emag/errors.hpp"
#include "emag/model.hpp"

namespace emag::model {

namespace {

int ego_input_dim(data::EgoRepresentation r) { return r == data::EgoRepresentation::kHomography ? 9 : 2; }

TensorD normal_tensor(ad::Shape shape, double std, Rng& rng) {
  std::normal_distribution<double> n(0.0, std);
  TensorD::Array v(ad::numel(shape));
  for (auto& x : v) x = n(rng);
  return TensorD(std::move(shape), std::move(v));
}

}  // namespace

int ModelConfig::slots() const {
  return 2 + (use_objects ? top_k_objects : 0) + (use_rgb ? 1 : 0) + (use_flow ? 1 : 0) + (use_ego ? 1 : 0);
}

data::BatchSpec ModelConfig::batch_spec() const {
  return {use_objects ? top_k_objects : 0, object_threshold, ego_representation};
}

void ModelConfig::validate() const {
  if (token_dim < 2 || token_dim % 2 != 0) throw ValidationError("token_dim must be even and >= 2");
  if (heads < 1 || token_dim % heads != 0) throw ValidationError("token_dim must be divisible by heads");
  if (observed_steps < 1 || future_steps < 1) throw ValidationError("observed/future steps must be >= 1");
  if (top_k_objects < 0) throw ValidationError("top_k_objects must be >= 0");
  if (blocks < 0) throw ValidationError("blocks must be >= 0");
  if (!(dropout >= 0 && dropout < 1)) throw ValidationError("dropout must lie in [0, 1)");
  if (rgb_dim < 1 || flow_dim < 1) throw ValidationError("feature dimensions must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"token_dim", c.token_dim},
       {"observed_steps", c.observed_steps},
       {"future_steps", c.future_steps},
       {"top_k_objects", c.top_k_objects},
       {"object_threshold", c.object_threshold},
       {"blocks", c.blocks},
       {"heads", c.heads},
       {"dropout", c.dropout},
       {"rgb_dim", c.rgb_dim},
       {"flow_dim", c.flow_dim},
       {"use_objects", c.use_objects},
       {"use_rgb", c.use_rgb},
       {"use_flow", c.use_flow},
       {"use_ego", c.use_ego},
       {"ego_representation", data::to_string(c.ego_representation)},
       {"future_time_encoding", c.future_time_encoding},
       {"full_memory", c.full_memory},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto read = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  read("token_dim", c.token_dim);
  read("observed_steps", c.observed_steps);
  read("future_steps", c.future_steps);
  read("top_k_objects", c.top_k_objects);
  read("object_threshold", c.object_threshold);
  read("blocks", c.blocks);
  read("heads", c.heads);
  read("dropout", c.dropout);
  read("rgb_dim", c.rgb_dim);
  read("flow_dim", c.flow_dim);
  read("use_objects", c.use_objects);
  read("use_rgb", c.use_rgb);
  read("use_flow", c.use_flow);
  read("use_ego", c.use_ego);
  if (j.contains("ego_representation")) {
    c.ego_representation = data::ego_representation_from_string(j.at("ego_representation").get<std::string>());
  }
  read("future_time_encoding", c.future_time_encoding);
  read("full_memory", c.full_memory);
  read("init_seed", c.init_seed);
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t C = static_cast<std::size_t>(c.token_dim), L = static_cast<std::size_t>(c.blocks);
  std::size_t n = 5 * C;
  if (c.use_rgb) n += (c.rgb_dim + 1) * C;
  if (c.use_flow) n += (c.flow_dim + 1) * C;
  if (c.use_ego) n += (ego_input_dim(c.ego_representation) + 1) * C;
  n += static_cast<std::size_t>(c.slots()) * C;
  n += L * (12 * C * C + 13 * C);
  const std::size_t decoder = C + L * (16 * C * C + 21 * C);
  n += decoder + C * C + 5 * C + 4;
  if (c.use_ego) n += decoder + C * C + 10 * C + 9;
  return n;
}

EmagModel::EmagModel(const ModelConfig& config) : config_(config), dropout_rng_(config.init_seed ^ 0xd409) {
  config_.validate();
  const int C = config_.token_dim;
  Rng rng(config_.init_seed);
  box_ = Linear(params_, "tokenizer.box", 4, C, rng);
  if (config_.use_rgb) rgb_ = Linear(params_, "tokenizer.rgb", config_.rgb_dim, C, rng);
  if (config_.use_flow) flow_ = Linear(params_, "tokenizer.flow", config_.flow_dim, C, rng);
  if (config_.use_ego) ego_ = Linear(params_, "tokenizer.ego", ego_input_dim(config_.ego_representation), C, rng);
  modal_ = params_.add("modal_embedding", normal_tensor({config_.slots(), C}, 0.02, rng), false);
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string name = "encoder." + std::to_string(b);
    EncoderBlock blk;
    blk.ln1 = LayerNorm(params_, name + ".ln_attn", C);
    blk.attn = MultiHeadAttention(params_, name + ".attn", C, config_.heads, rng);
    blk.ln2 = LayerNorm(params_, name + ".ln_ffn", C);
    blk.ffn = FeedForward(params_, name + ".ffn", C, 4 * C, rng);
    encoder_.push_back(std::move(blk));
  }
  hand_decoder_ = make_decoder("hand_decoder", rng);
  hand_head_ = MlpHead(params_, "hand_head", C, 4, rng);
  if (config_.use_ego) {
    ego_decoder_ = make_decoder("ego_decoder", rng);
    ego_head_ = MlpHead(params_, "ego_head", C, 9, rng);
  }
}

EmagModel::Decoder EmagModel::make_decoder(const std::string& name, Rng& rng) {
  const int C = config_.token_dim;
  Decoder d;
  d.query = params_.add(name + ".query", normal_tensor({C}, 0.02, rng), false);
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string n = name + "." + std::to_string(b);
    DecoderBlock blk;
    blk.ln_self = LayerNorm(params_, n + ".ln_self", C);
    blk.self_attn = MultiHeadAttention(params_, n + ".self_attn", C, config_.heads, rng);
    blk.ln_cross = LayerNorm(params_, n + ".ln_cross", C);
    blk.ln_memory = LayerNorm(params_, n + ".ln_memory", C);
    blk.cross_attn = MultiHeadAttention(params_, n + ".cross_attn", C, config_.heads, rng);
    blk.ln_ffn = LayerNorm(params_, n + ".ln_ffn", C);
    blk.ffn = FeedForward(params_, n + ".ffn", C, 4 * C, rng);
    d.blocks.push_back(std::move(blk));
  }
  return d;
}

int EmagModel::rgb_slot() const { return config_.use_rgb ? 2 + (config_.use_objects ? config_.top_k_objects : 0) : -1; }

int EmagModel::flow_slot() const {
  if (!config_.use_flow) return -1;
  return 2 + (config_.use_objects ? config_.top_k_objects : 0) + (config_.use_rgb ? 1 : 0);
}

int EmagModel::ego_slot() const { return config_.use_ego ? config_.slots() - 1 : -1; }

TokenGrid EmagModel::tokenize(const data::Batch& batch) const {
  const ad::Index B = batch.size, T = batch.observed_steps, C = config_.token_dim;
  const ad::Index M = config_.slots();
  if (T != config_.observed_steps) {
    throw ValidationError("batch has " + std::to_string(T) + " observed steps, model expects " +
                          std::to_string(config_.observed_steps));
  }
  const ad::Index batch_slots = batch.boxes.dim(2);
  const ad::Index box_slots = 2 + (config_.use_objects ? config_.top_k_objects : 0);
  if (batch_slots < box_slots) throw ValidationError("batch carries fewer object slots than the model uses");

  std::vector<TensorD> parts;
  TensorD boxes = batch_slots == box_slots ? batch.boxes : ad::slice(batch.boxes, 2, 0, box_slots);
  parts.push_back(box_(boxes));
  auto feature_token = [&](const Linear& lin, const TensorD& x, int dim, const char* what) {
    if (x.dim(2) != dim) {
      throw ValidationError(std::string(what) + " feature dimension " + std::to_string(x.dim(2)) +
                            " does not match the model (" + std::to_string(dim) + ")");
    }
    return ad::reshape(lin(x), {B, T, 1, C});
  };
  if (config_.use_rgb) parts.push_back(feature_token(rgb_, batch.rgb, config_.rgb_dim, "rgb"));
  if (config_.use_flow) parts.push_back(feature_token(flow_, batch.flow, config_.flow_dim, "flow"));
  if (config_.use_ego) {
    parts.push_back(feature_token(ego_, batch.ego, ego_input_dim(config_.ego_representation), "ego"));
  }

  TokenGrid grid;
  grid.absent.assign(static_cast<std::size_t>(B * T * M), 0);
  ad::Mask element_mask(static_cast<std::size_t>(B * T * M * C), 0);
  bool any = false;
  for (ad::Index bt = 0; bt < B * T; ++bt) {
    for (ad::Index m = 0; m < box_slots; ++m) {
      if (batch.box_mask.at(bt * batch_slots + m) != 0.0) continue;
      grid.absent[bt * M + m] = 1;
      std::fill_n(element_mask.begin() + (bt * M + m) * C, C, 1);
      any = true;
    }
  }
  TensorD tokens = ad::concat(parts, 2);
  grid.tokens = any ? ad::masked_fill(tokens, element_mask, 0.0) : tokens;
  return grid;
}

TokenGrid EmagModel::apply_index_encodings(const TokenGrid& grid) const {
  const ad::Index T = grid.tokens.dim(1), M = grid.tokens.dim(2), C = grid.tokens.dim(3);
  TensorD::Array time(T * M * C);
  for (ad::Index t = 0; t < T; ++t) {
    const auto s = sinusoid(static_cast<double>(t + 1), static_cast<int>(C));
    for (ad::Index m = 0; m < M; ++m) time.segment((t * M + m) * C, C) = s;
  }
  TokenGrid out = grid;
  out.tokens = ad::add(ad::add(grid.tokens, modal_), TensorD({T, M, C}, std::move(time)));
  return out;
}

TensorD EmagModel::residual_dropout(const TensorD& x, bool train) {
  return ad::dropout(x, config_.dropout, train, dropout_rng_);
}

TensorD EmagModel::encode(const TokenGrid& grid, bool train) {
  const ad::Index B = grid.tokens.dim(0), T = grid.tokens.dim(1), M = grid.tokens.dim(2), C = grid.tokens.dim(3);
  TensorD x = ad::reshape(grid.tokens, {B, T * M, C});
  for (const auto& blk : encoder_) {
    const TensorD h = blk.ln1(x);
    x = ad::add(x, residual_dropout(blk.attn(h, h, &grid.absent, false), train));
    x = ad::add(x, residual_dropout(blk.ffn(blk.ln2(x)), train));
  }
  return ad::reshape(x, {B, T, M, C});
}

TensorD EmagModel::run_decoder(const Decoder& d, const TensorD& memory, const KeyMask* memory_mask,
                               int future_steps, bool train) {
  const ad::Index B = memory.dim(0), C = config_.token_dim;
  const int T = config_.observed_steps;
  auto with_time = [&](const TensorD& q, int step) {
    if (!config_.future_time_encoding) return q;
    return ad::add(q, TensorD({C}, sinusoid(static_cast<double>(T + step), static_cast<int>(C))));
  };
  std::vector<TensorD> normed_memory;
  for (const auto& blk : d.blocks) normed_memory.push_back(blk.ln_memory(memory));

  std::vector<TensorD> inputs{with_time(ad::add(TensorD::zeros({B, 1, C}), d.query), 0)};
  std::vector<TensorD> outputs;
  for (int f = 1; f <= future_steps; ++f) {
    TensorD x = inputs.size() == 1 ? inputs[0] : ad::concat(inputs, 1);
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
      const auto& blk = d.blocks[b];
      const TensorD h = blk.ln_self(x);
      x = ad::add(x, residual_dropout(blk.self_attn(h, h, nullptr, true), train));
      x = ad::add(x, residual_dropout(blk.cross_attn(blk.ln_cross(x), normed_memory[b], memory_mask, false), train));
      x = ad::add(x, residual_dropout(blk.ffn(blk.ln_ffn(x)), train));
    }
    TensorD last = f == 1 ? x : ad::slice(x, 1, f - 1, 1);
    outputs.push_back(last);
    inputs.push_back(with_time(last, f));
  }
  return outputs.size() == 1 ? outputs[0] : ad::concat(outputs, 1);
}

TensorD EmagModel::decode_hands(const TensorD& encoded, const TokenGrid& grid, int future_steps, bool train) {
  const ad::Index B = encoded.dim(0), T = encoded.dim(1), M = encoded.dim(2), C = encoded.dim(3);
  if (!config_.full_memory) {
    const TensorD memory = ad::reshape(ad::slice(ad::slice(encoded, 1, T - 1, 1), 2, 0, 2), {B, 2, C});
    return run_decoder(hand_decoder_, memory, nullptr, future_steps, train);
  }
  const TensorD memory = ad::reshape(ad::slice(encoded, 2, 0, 2), {B, T * 2, C});
  KeyMask mask(static_cast<std::size_t>(B * T * 2));
  for (ad::Index bt = 0; bt < B * T; ++bt) {
    mask[bt * 2] = grid.absent[bt * M];
    mask[bt * 2 + 1] = grid.absent[bt * M + 1];
  }
  return run_decoder(hand_decoder_, memory, &mask, future_steps, train);
}

TensorD EmagModel::decode_ego(const TensorD& encoded, const TokenGrid&, int future_steps, bool train) {
  if (!config_.use_ego) throw ContractError("decode_ego: the ego branch is disabled");
  const ad::Index B = encoded.dim(0), T = encoded.dim(1), C = encoded.dim(3);
  const TensorD slot = ad::slice(encoded, 2, ego_slot(), 1);
  const TensorD memory = config_.full_memory ? ad::reshape(slot, {B, T, C})
                                             : ad::reshape(ad::slice(slot, 1, T - 1, 1), {B, 1, C});
  return run_decoder(ego_decoder_, memory, nullptr, future_steps, train);
}

ForecastOutput EmagModel::forward(const data::Batch& batch, bool train) {
  const int F = config_.future_steps;
  const TokenGrid grid = apply_index_encodings(tokenize(batch));
  const TensorD encoded = encode(grid, train);
  ForecastOutput out;
  out.hands = hand_head_(decode_hands(encoded, grid, F, train), config_.dropout, train, dropout_rng_);
  if (config_.use_ego) {
    out.ego = ego_head_(decode_ego(encoded, grid, F, train), config_.dropout, train, dropout_rng_);
  }
  return out;
}

}  // namespace emag::model
