#include "emag/errors.hpp"
#include "emag/model.hpp"

namespace emag::model {

void Seq2SeqConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1) throw ValidationError("seq2seq dimensions must be >= 1");
  if (observed_steps < 1 || future_steps < 1) throw ValidationError("observed/future steps must be >= 1");
  if (!(teacher_forcing >= 0 && teacher_forcing <= 1)) throw ValidationError("teacher_forcing must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const Seq2SeqConfig& c) {
  j = {{"embed_dim", c.embed_dim},
       {"hidden_dim", c.hidden_dim},
       {"observed_steps", c.observed_steps},
       {"future_steps", c.future_steps},
       {"teacher_forcing", c.teacher_forcing},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, Seq2SeqConfig& c) {
  auto read = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  read("embed_dim", c.embed_dim);
  read("hidden_dim", c.hidden_dim);
  read("observed_steps", c.observed_steps);
  read("future_steps", c.future_steps);
  read("teacher_forcing", c.teacher_forcing);
  read("init_seed", c.init_seed);
}

LstmCell::LstmCell(ParameterSet& params, const std::string& name, int in, int hidden, Rng& rng)
    : x_(params, name + ".input", in, 4 * hidden, rng), h_(params, name + ".recurrent", hidden, 4 * hidden, rng),
      hidden_(hidden) {}

std::pair<TensorD, TensorD> LstmCell::operator()(const TensorD& x, const TensorD& h, const TensorD& c) const {
  const TensorD gates = ad::add(x_(x), h_(h));
  const TensorD i = ad::sigmoid(ad::slice(gates, 1, 0, hidden_));
  const TensorD f = ad::sigmoid(ad::slice(gates, 1, hidden_, hidden_));
  const TensorD g = ad::tanh(ad::slice(gates, 1, 2 * hidden_, hidden_));
  const TensorD o = ad::sigmoid(ad::slice(gates, 1, 3 * hidden_, hidden_));
  const TensorD c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
  return {ad::mul(o, ad::tanh(c_next)), c_next};
}

TensorD impute_tracks(const data::Batch& batch) {
  const ad::Index B = batch.size, T = batch.observed_steps;
  TensorD::Array out(B * T * 4);
  for (ad::Index b = 0; b < B; ++b) {
    const std::vector<std::optional<Box>>* tracks[2] = {&batch.left_tracks[b], &batch.right_tracks[b]};
    for (int hand = 0; hand < 2; ++hand) {
      const auto& track = *tracks[hand];
      std::optional<Eigen::Vector2d> first;
      for (const auto& box : track) {
        if (box) {
          first = box->center();
          break;
        }
      }
      Eigen::Vector2d carry = first.value_or(Eigen::Vector2d(0.5, 0.5));
      for (ad::Index t = 0; t < T; ++t) {
        if (track[t]) carry = track[t]->center();
        out[(b * T + t) * 4 + 2 * hand] = carry.x();
        out[(b * T + t) * 4 + 2 * hand + 1] = carry.y();
      }
    }
  }
  return TensorD({B, T, 4}, std::move(out));
}

Seq2SeqModel::Seq2SeqModel(const Seq2SeqConfig& config) : config_(config), teacher_rng_(config.init_seed ^ 0x7eac) {
  config_.validate();
  Rng rng(config_.init_seed);
  embed_in_ = Linear(params_, "encoder.embed", 4, config_.embed_dim, rng);
  encoder_ = LstmCell(params_, "encoder.lstm", config_.embed_dim, config_.hidden_dim, rng);
  embed_out_ = Linear(params_, "decoder.embed", 4, config_.embed_dim, rng);
  decoder_ = LstmCell(params_, "decoder.lstm", config_.embed_dim, config_.hidden_dim, rng);
  project_ = Linear(params_, "decoder.project", config_.hidden_dim, 4, rng);
}

TensorD Seq2SeqModel::forward(const TensorD& tracks, bool train, const data::Batch* targets,
                              std::vector<TensorD>* decoder_inputs) {
  const ad::Index B = tracks.dim(0), T = tracks.dim(1), H = config_.hidden_dim;
  if (T != config_.observed_steps || tracks.dim(2) != 4) {
    throw ValidationError("seq2seq expects tracks of shape [B, " + std::to_string(config_.observed_steps) + ", 4]");
  }
  TensorD h = TensorD::zeros({B, H}), c = TensorD::zeros({B, H});
  for (ad::Index t = 0; t < T; ++t) {
    const TensorD x = ad::reshape(ad::slice(tracks, 1, t, 1), {B, 4});
    std::tie(h, c) = encoder_(ad::relu(embed_in_(x)), h, c);
  }
  std::bernoulli_distribution teacher(config_.teacher_forcing);
  TensorD input = ad::reshape(ad::slice(tracks, 1, T - 1, 1), {B, 4});
  std::vector<TensorD> outputs;
  for (int f = 0; f < config_.future_steps; ++f) {
    if (decoder_inputs) decoder_inputs->push_back(input);
    std::tie(h, c) = decoder_(ad::relu(embed_out_(input)), h, c);
    const TensorD pred = project_(h);
    outputs.push_back(ad::reshape(pred, {B, 1, 4}));
    if (!train || !targets) {
      input = pred;
      continue;
    }
    // Per-sample teacher forcing; invisible target coordinates keep the prediction.
    TensorD::Array select = TensorD::Array::Zero(B * 4), truth = TensorD::Array::Zero(B * 4);
    for (ad::Index b = 0; b < B; ++b) {
      if (!teacher(teacher_rng_)) continue;
      for (int k = 0; k < 4; ++k) {
        const ad::Index src = (b * config_.future_steps + f) * 4 + k;
        if (targets->target_mask.at(src) == 0.0) continue;
        select[b * 4 + k] = 1.0;
        truth[b * 4 + k] = targets->target_hands.at(src);
      }
    }
    const TensorD keep = TensorD({B, 4}, 1.0 - select);
    input = ad::add(ad::mul(pred, keep), TensorD({B, 4}, std::move(truth)));
  }
  return ad::concat(outputs, 1);
}

TensorD Seq2SeqModel::forward(const data::Batch& batch, bool train) {
  return forward(impute_tracks(batch), train, &batch);
}

}  // namespace emag::model
