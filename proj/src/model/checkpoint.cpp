#include "emag/errors.hpp"
#include "emag/model.hpp"

namespace emag::model {

using nlohmann::json;

namespace {

std::vector<std::pair<std::string, TensorD>> snapshot(const ParameterSet& params) {
  std::vector<std::pair<std::string, TensorD>> out;
  for (const auto& p : params.all()) out.emplace_back(p.name, p.tensor.detach());
  return out;
}

std::string config_difference(const json& expected, const json& found) {
  std::string diff;
  for (const auto& [key, value] : expected.items()) {
    if (key == "init_seed") continue;
    if (!found.contains(key)) {
      diff += " " + key + " (missing)";
    } else if (found.at(key) != value) {
      diff += " " + key + " (model " + value.dump() + ", checkpoint " + found.at(key).dump() + ")";
    }
  }
  return diff;
}

void restore_parameters(ParameterSet& params, const Checkpoint& ckpt, const std::string& kind, const json& config) {
  if (ckpt.kind != kind) throw ValidationError("checkpoint holds a '" + ckpt.kind + "' model, expected '" + kind + "'");
  const std::string diff = config_difference(config, ckpt.config);
  if (!diff.empty()) throw ValidationError("checkpoint config mismatch:" + diff);
  auto& all = params.all();
  if (all.size() != ckpt.parameters.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ckpt.parameters.size()) + " parameters, model has " +
                          std::to_string(all.size()));
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& [name, tensor] = ckpt.parameters[i];
    if (name != all[i].name || tensor.shape() != all[i].tensor.shape()) {
      throw ValidationError("checkpoint parameter " + name + " " + ad::to_string(tensor.shape()) +
                            " does not match model parameter " + all[i].name + " " +
                            ad::to_string(all[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i) all[i].tensor.value() = ckpt.parameters[i].second.value();
}

}  // namespace

Checkpoint make_checkpoint(const EmagModel& m, const data::DatasetStats& stats, json meta) {
  return {"emag", json(m.config()), stats, std::move(meta), snapshot(m.parameters())};
}

Checkpoint make_checkpoint(const Seq2SeqModel& m, const data::DatasetStats& stats, json meta) {
  return {"seq2seq", json(m.config()), stats, std::move(meta), snapshot(m.parameters())};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json params = json::array();
  for (const auto& [name, tensor] : ckpt.parameters) {
    const auto& v = tensor.value();
    params.push_back({{"name", name},
                      {"shape", tensor.shape()},
                      {"values", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  const json j = {{"format", "emag-checkpoint"},
                  {"version", 1},
                  {"kind", ckpt.kind},
                  {"config", ckpt.config},
                  {"stats", ckpt.stats},
                  {"meta", ckpt.meta},
                  {"parameters", params}};
  data::write_text(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(data::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": not a checkpoint (" + e.what() + ")");
  }
  if (j.value("format", "") != "emag-checkpoint") throw ValidationError(path.string() + ": not a checkpoint");
  Checkpoint c;
  try {
    c.kind = j.at("kind").get<std::string>();
    c.config = j.at("config");
    c.stats = j.at("stats").get<data::DatasetStats>();
    c.meta = j.value("meta", json::object());
    for (const auto& p : j.at("parameters")) {
      const auto shape = p.at("shape").get<ad::Shape>();
      const auto values = p.at("values").get<std::vector<double>>();
      if (static_cast<ad::Index>(values.size()) != ad::numel(shape)) {
        throw ValidationError("parameter " + p.at("name").get<std::string>() + " has the wrong number of values");
      }
      c.parameters.emplace_back(p.at("name").get<std::string>(), TensorD::from_vector(shape, values));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
  return c;
}

void restore(EmagModel& m, const Checkpoint& ckpt) { restore_parameters(m.parameters(), ckpt, "emag", json(m.config())); }

void restore(Seq2SeqModel& m, const Checkpoint& ckpt) {
  restore_parameters(m.parameters(), ckpt, "seq2seq", json(m.config()));
}

}  // namespace emag::model
