#include "emag/cli.hpp"

#include "emag/data.hpp"
#include "emag/model.hpp"
#include "emag/synth.hpp"
#include "emag/train.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <memory>

namespace emag::cli {
namespace {

using nlohmann::json;

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

json schema_model() {
  json j = model::ModelConfig{};
  j.erase("init_seed");
  return j;
}

json schema_seq2seq() {
  json j = model::Seq2SeqConfig{};
  j.erase("init_seed");
  return j;
}

json schema_train() {
  json j = train::TrainConfig{};
  j.erase("seed");
  return j;
}

std::uint64_t default_seed() {
  const char* env = std::getenv("EMAG_SEED");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw UsageError(std::string("EMAG_SEED must be a non-negative integer, got '") + env + "'");
  return v;
}

// Flags write into the resolved document only when given on the command line.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* option(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flag, *value, help + " [" + pointer + "]");
    if constexpr (requires { value->push_back({}); }) opt->delimiter(',');
    apply_.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  CLI::Option* flag(const std::string& flag, const std::string& pointer, bool set_to, const std::string& help) {
    auto* opt = app_->add_flag(flag)->description(help + " [" + pointer + "]");
    apply_.push_back([opt, pointer, set_to](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = set_to;
    });
    return opt;
  }

  void apply(json& j) const {
    for (const auto& f : apply_) f(j);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(json&)>> apply_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Binder> binder;
  std::string config_path;
  bool print_config = false;
};

void add_model_flags(Binder& b) {
  b.option<int>("--epochs", "/train/epochs", "training epochs");
  b.option<double>("--lr", "/train/peak_lr", "peak learning rate");
  b.option<int>("--warmup-epochs", "/train/warmup_epochs", "linear warmup epochs");
  b.option<int>("--batch-size", "/train/batch_size", "sequences per batch");
  b.option<double>("--weight-decay", "/train/weight_decay", "decoupled weight decay");
  b.option<double>("--alpha", "/train/alpha", "weight of the ego-motion loss");
  b.option<int>("--token-dim", "/model/token_dim", "transformer width");
  b.option<int>("--blocks", "/model/blocks", "encoder and decoder blocks");
  b.option<int>("--heads", "/model/heads", "attention heads");
  b.option<double>("--dropout", "/model/dropout", "dropout probability");
  b.flag("--no-objects", "/model/use_objects", false, "drop object tokens");
  b.flag("--no-rgb", "/model/use_rgb", false, "drop rgb tokens");
  b.flag("--no-flow", "/model/use_flow", false, "drop flow tokens");
  b.flag("--no-ego", "/model/use_ego", false, "drop ego-motion tokens");
}

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(data::read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  } catch (const Error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + ": expected a JSON object");
  return j;
}

void materialize_scenario(json& r) {
  const std::string domain = r.at("domain");
  const auto builtins = synth::builtin_domains();
  if (std::find(builtins.begin(), builtins.end(), domain) == builtins.end()) {
    std::string known;
    for (const auto& d : builtins) known += (known.empty() ? "" : ", ") + d;
    throw UsageError(domain.empty() ? "--domain is required (built-in domains: " + known + ")"
                                    : "unknown domain '" + domain + "' (built-in domains: " + known + ")");
  }
  auto sc = synth::builtin_scenario(domain);
  from_json(r.at("scenario"), sc);
  sc.domain = domain;
  sc.seed = r.at("seed");
  try {
    sc.validate();
  } catch (const ValidationError& e) {
    throw UsageError(std::string("scenario: ") + e.what());
  }
  r["scenario"] = sc;
}

// Settings that are computed rather than defaulted.
void materialize(json& r) {
  const std::string cmd = r.at("command");
  if (cmd == "generate") {
    materialize_scenario(r);
    if (r.at("n").get<long>() < 1) throw UsageError("--n must be at least 1");
  } else if (cmd == "matrix") {
    if (r.at("seeds").empty()) r["seeds"] = json::array({r.at("seed")});
    if (r.at("methods").empty()) throw UsageError("--methods must name at least one method");
    if (r.at("domains").empty()) throw UsageError("--domains must name at least one domain");
  }
}

}  // namespace

nlohmann::json default_config(const std::string& command) {
  json j = {{"command", command}, {"seed", 0}, {"out", ""}};
  if (command == "generate") {
    j["domain"] = "";
    j["n"] = 0;
    j["scenario"] = json::object();
  } else if (command == "preprocess") {
    const ego::RansacParams p;
    j["input"] = "";
    j["ransac_iters"] = p.iterations;
    j["threshold"] = p.inlier_threshold_px;
    j["stride"] = p.stride;
    j["from_homography"] = false;
  } else if (command == "train") {
    j["method"] = "emag";
    j["train_data"] = "";
    j["val_data"] = "";
    j["model"] = schema_model();
    j["seq2seq"] = schema_seq2seq();
    j["train"] = schema_train();
  } else if (command == "eval") {
    j["method"] = "";
    j["checkpoint"] = "";
    j["data"] = "";
  } else if (command == "matrix") {
    j["methods"] = {"cvm", "kf", "seq2seq", "emag"};
    j["domains"] = synth::builtin_domains();
    j["seeds"] = json::array();
    j["data_dir"] = "";
    j["use_best_checkpoint"] = false;
    j["model"] = schema_model();
    j["seq2seq"] = schema_seq2seq();
    j["train"] = schema_train();
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  return j;
}

void merge_checked(nlohmann::json& base, const nlohmann::json& overrides, const std::string& where) {
  if (!overrides.is_object()) throw UsageError((where.empty() ? "config" : where) + ": expected an object");
  for (const auto& [key, value] : overrides.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw UsageError("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (!same_kind(slot, value)) {
      throw UsageError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                       value.type_name());
    }
    if (slot.is_object() && !slot.empty()) {
      merge_checked(slot, value, path);
    } else {
      slot = value;
    }
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ego-motion-aware hand trajectory forecasting: data, training and evaluation"};
  app.name("emag");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(EMAG_VERSION));

  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    auto& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.binder = std::make_unique<Binder>(c.app);
    if (name != "reproduce") {
      c.app->add_option("--config", c.config_path, "JSON config file; flags override it")->check(CLI::ExistingFile);
      c.app->add_flag("--print-config", c.print_config, "print the resolved settings and exit");
      c.binder->option<std::uint64_t>("--seed", "/seed", "random seed (default: $EMAG_SEED or 0)");
    }
    return c;
  };

  {
    auto& b = *add("generate", "write a synthetic dataset").binder;
    b.option<std::string>("--domain", "/domain", "built-in domain");
    b.option<long>("--n", "/n", "number of sequences");
    b.option<std::string>("--out", "/out", "dataset file (.jsonl or .jsonl.gz)");
  }
  {
    auto& b = *add("preprocess", "estimate frame-pair homographies from flow").binder;
    b.option<std::string>("--in", "/input", "input dataset");
    b.option<std::string>("--out", "/out", "output dataset");
    b.option<int>("--ransac-iters", "/ransac_iters", "RANSAC iterations");
    b.option<double>("--threshold", "/threshold", "inlier threshold in pixels");
    b.option<int>("--stride", "/stride", "grid cells between correspondences");
    b.flag("--from-homography", "/from_homography", true, "copy generating homographies");
  }
  {
    auto& b = *add("train", "train EMAG, one of its variants or Seq2Seq").binder;
    b.option<std::string>("--model", "/method", "emag, seq2seq or a variant name");
    b.option<std::string>("--train", "/train_data", "training dataset");
    b.option<std::string>("--val", "/val_data", "validation dataset");
    b.option<std::string>("--out", "/out", "output directory");
    add_model_flags(b);
  }
  {
    auto& b = *add("eval", "ADE/FDE of a method on a dataset").binder;
    b.option<std::string>("--method", "/method", "cvm, kf, seq2seq, emag or a variant name");
    b.option<std::string>("--checkpoint", "/checkpoint", "checkpoint of a learned method");
    b.option<std::string>("--data", "/data", "evaluation dataset");
    b.option<std::string>("--out", "/out", "metrics JSON file");
  }
  {
    auto& b = *add("matrix", "intra/cross-domain experiment matrix").binder;
    b.option<std::vector<std::string>>("--methods", "/methods", "comma-separated methods");
    b.option<std::vector<std::string>>("--domains", "/domains", "comma-separated domains");
    b.option<std::vector<std::uint64_t>>("--seeds", "/seeds", "comma-separated seeds");
    b.option<std::string>("--data", "/data_dir", "directory with <domain>.train.jsonl and <domain>.val.jsonl");
    b.option<std::string>("--out", "/out", "output directory");
    b.flag("--use-best", "/use_best_checkpoint", true, "report the best-validation checkpoint");
    add_model_flags(b);
  }
  std::string manifest_file, reproduce_out;
  {
    auto& c = add("reproduce", "re-run a command from its manifest");
    c.app->add_option("--manifest", manifest_file, "manifest.json of a previous run")->required();
    c.app->add_option("--out", reproduce_out, "write outputs here instead of the recorded location");
  }

  std::vector<std::string> argv_store{"emag"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << EMAG_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'emag --help' for usage\n";
    return kExitUsage;
  }

  std::string name;
  for (auto& [n, c] : commands) {
    if (c.app->parsed()) name = n;
  }

  json resolved;
  try {
    if (name == "reproduce") {
      json manifest;
      try {
        manifest = json::parse(data::read_text(manifest_file));
      } catch (const std::exception& e) {
        throw UsageError("manifest " + manifest_file + ": " + e.what());
      }
      if (manifest.value("format", "") != "emag-manifest" || !manifest.contains("config")) {
        throw UsageError(manifest_file + " is not a manifest");
      }
      for (const auto& in : manifest.value("inputs", json::array())) {
        const std::string path = in.at("path");
        if (!std::filesystem::exists(path)) throw UsageError("input " + path + " recorded in the manifest is missing");
        if (sha256_file(path) != in.at("sha256").get<std::string>()) {
          throw UsageError("input " + path + " changed since the manifest was written");
        }
      }
      resolved = manifest.at("config");
      if (!reproduce_out.empty()) resolved["out"] = reproduce_out;
    } else {
      auto& c = commands.at(name);
      resolved = default_config(name);
      resolved["seed"] = default_seed();
      auto file = read_config_file(c.config_path);
      if (name == "generate" && file.contains("scenario")) {
        json check = synth::ScenarioConfig{};
        merge_checked(check, file["scenario"], "scenario");
        resolved["scenario"] = file["scenario"];
        file.erase("scenario");
      }
      if (file.contains("command")) {
        if (file["command"] != name) throw UsageError("config was written for '" + file["command"].dump() + "'");
        file.erase("command");
      }
      merge_checked(resolved, file);
      c.binder->apply(resolved);
      if (c.print_config) {
        if (name == "generate" && !resolved.at("domain").get<std::string>().empty()) materialize_scenario(resolved);
        out << resolved.dump(2) << "\n";
        return kExitOk;
      }
      materialize(resolved);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return execute(resolved, out, err);
}

}  // namespace emag::cli
