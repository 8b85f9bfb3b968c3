#include "emag/cli.hpp"

#include "emag/data.hpp"
#include "emag/model.hpp"
#include "emag/synth.hpp"
#include "emag/train.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace emag::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::string require_path(const json& r, const char* key, const char* flag) {
  const std::string p = r.at(key);
  if (p.empty()) throw UsageError(std::string(flag) + " is required");
  return p;
}

std::string require_input(const json& r, const char* key, const char* flag) {
  const auto p = require_path(r, key, flag);
  if (!fs::is_regular_file(p)) throw UsageError(std::string(flag) + ": no such file " + p);
  return p;
}

class Manifest {
 public:
  explicit Manifest(const json& resolved) : started_(utc_now()) {
    doc_ = {{"format", "emag-manifest"},
            {"manifest_version", 1},
            {"command", resolved.at("command")},
            {"code_version", EMAG_VERSION},
            {"seed", resolved.at("seed")},
            {"config", resolved},
            {"inputs", json::array()},
            {"outputs", json::array()}};
  }
  void input(const fs::path& p) { doc_["inputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}}); }
  void output(const fs::path& p) {
    doc_["outputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
  }
  void write(const fs::path& where, bool ok) {
    doc_["started_at"] = started_;
    doc_["finished_at"] = utc_now();
    doc_["status"] = ok ? "ok" : "failed";
    ensure_parent(where);
    data::write_text(where, doc_.dump(2) + "\n");
  }

 private:
  std::string started_;
  json doc_;
};

void check_model_fits(const data::SequenceSample& s, const train::Variant& v, const std::string& file) {
  const int t = s.observed_steps(), f = s.future_steps();
  const int rgb = static_cast<int>(s.observed.front().rgb_feat.size());
  const int flow = static_cast<int>(s.observed.front().flow_feat.size());
  auto mismatch = [&](const std::string& key, int want, int got) {
    throw UsageError("config " + key + " = " + std::to_string(want) + " but " + file + " has " + std::to_string(got));
  };
  if (v.method == train::Method::kEmag) {
    if (v.model.observed_steps != t) mismatch("model.observed_steps", v.model.observed_steps, t);
    if (v.model.future_steps != f) mismatch("model.future_steps", v.model.future_steps, f);
    if (v.model.use_rgb && v.model.rgb_dim != rgb) mismatch("model.rgb_dim", v.model.rgb_dim, rgb);
    if (v.model.use_flow && v.model.flow_dim != flow) mismatch("model.flow_dim", v.model.flow_dim, flow);
  } else if (v.method == train::Method::kSeq2Seq) {
    if (v.seq2seq.observed_steps != t) mismatch("seq2seq.observed_steps", v.seq2seq.observed_steps, t);
    if (v.seq2seq.future_steps != f) mismatch("seq2seq.future_steps", v.seq2seq.future_steps, f);
  }
}

std::vector<data::SequenceSample> load(const fs::path& p) {
  auto samples = data::read_dataset(p);
  if (samples.empty()) throw UsageError(p.string() + " holds no sequences");
  return samples;
}

// Variant with the config's model, seq2seq and train sections applied;
// validation problems surface as usage errors before any work starts.
train::Variant resolve_variant(const json& r, const std::string& method, train::TrainConfig& tc) {
  model::ModelConfig mc;
  model::Seq2SeqConfig sc;
  try {
    from_json(r.at("model"), mc);
    from_json(r.at("seq2seq"), sc);
    from_json(r.at("train"), tc);
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  const std::uint64_t seed = r.at("seed");
  mc.init_seed = sc.init_seed = tc.seed = seed;
  train::Variant v;
  try {
    v = train::make_variant(method, mc, sc);
    if (v.alpha) tc.alpha = *v.alpha;
    tc.validate();
    if (v.method == train::Method::kEmag) v.model.validate();
    if (v.method == train::Method::kSeq2Seq) v.seq2seq.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return v;
}

int cmd_generate(const json& r, std::ostream& out) {
  const fs::path dest = require_path(r, "out", "--out");
  synth::ScenarioConfig sc;
  from_json(r.at("scenario"), sc);
  Manifest m(r);
  const auto samples = synth::generate_dataset(sc, r.at("n").get<int>());
  ensure_parent(dest);
  data::write_dataset(dest, samples);
  m.output(dest);
  m.write(manifest_path("generate", dest), true);
  out << "wrote " << samples.size() << " sequences to " << dest.generic_string() << "\n";
  return kExitOk;
}

int cmd_preprocess(const json& r, std::ostream& out) {
  const fs::path in = require_input(r, "input", "--in");
  const fs::path dest = require_path(r, "out", "--out");
  data::PreprocessOptions opt;
  opt.ransac.iterations = r.at("ransac_iters");
  opt.ransac.inlier_threshold_px = r.at("threshold");
  opt.ransac.stride = r.at("stride");
  opt.ransac.seed = r.at("seed");
  opt.from_homography = r.at("from_homography");
  if (opt.ransac.iterations < 1) throw UsageError("--ransac-iters must be at least 1");
  if (!(opt.ransac.inlier_threshold_px > 0)) throw UsageError("--threshold must be positive");
  if (opt.ransac.stride < 1) throw UsageError("--stride must be at least 1");
  Manifest m(r);
  m.input(in);
  auto samples = data::read_dataset(in);
  std::size_t failed = 0, frames = 0;
  for (auto& s : samples) {
    data::preprocess(s, opt);
    for (const auto& o : s.observed) {
      ++frames;
      failed += o.homography_failed;
    }
  }
  ensure_parent(dest);
  data::write_dataset(dest, samples);
  m.output(dest);
  m.write(manifest_path("preprocess", dest), true);
  out << "preprocessed " << samples.size() << " sequences (" << failed << " of " << frames
      << " frames fell back to identity) into " << dest.generic_string() << "\n";
  return kExitOk;
}

int cmd_train(const json& r, std::ostream& out, std::ostream& err) {
  const fs::path train_file = require_input(r, "train_data", "--train");
  const std::string val_name = r.at("val_data");
  if (!val_name.empty() && !fs::is_regular_file(val_name)) throw UsageError("--val: no such file " + val_name);
  const fs::path dir = require_path(r, "out", "--out");
  const std::string method = r.at("method");
  train::TrainConfig tc;
  const auto v = resolve_variant(r, method, tc);
  if (!train::is_learned(v.method)) throw UsageError("--model must be a learned method, got '" + method + "'");

  Manifest m(r);
  m.input(train_file);
  const auto train_set = load(train_file);
  std::vector<data::SequenceSample> val_set;
  if (!val_name.empty()) {
    m.input(val_name);
    val_set = load(val_name);
  }
  check_model_fits(train_set.front(), v, train_file.string());
  if (!val_set.empty()) check_model_fits(val_set.front(), v, val_name);

  fs::create_directories(dir);
  train::FitOptions opts;
  opts.out_dir = dir;
  opts.on_epoch = [&](const train::EpochLog& e) {
    out << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss;
    if (e.val_ade) out << "  val ADE " << std::setprecision(2) << *e.val_ade << "  FDE " << *e.val_fde;
    out << std::defaultfloat << "\n";
  };

  train::FitResult fr;
  try {
    if (v.method == train::Method::kEmag) {
      model::EmagModel model(v.model);
      fr = train::fit(*train::make_learner(model), train_set, val_set, tc, opts);
    } else {
      model::Seq2SeqModel model(v.seq2seq);
      fr = train::fit(*train::make_learner(model), train_set, val_set, tc, opts);
    }
  } catch (const TrainingAborted& e) {
    err << "error: training aborted: " << e.what() << "\n";
    if (fs::exists(dir / "last_good.json")) {
      err << "weights of the last completed epoch are in " << (dir / "last_good.json").generic_string() << "\n";
    }
    m.write(manifest_path("train", dir), false);
    return kExitFailure;
  }

  const json meta = {{"method", method}, {"train_domain", train_set.front().domain}, {"seed", r.at("seed")}};
  for (auto [ckpt, name] : {std::pair{&fr.final_checkpoint, "final.json"}, std::pair{&fr.best_checkpoint, "best.json"}}) {
    ckpt->meta.update(meta);
    if (name == std::string("best.json")) ckpt->meta["best_epoch"] = fr.best_epoch;
    model::save_checkpoint(dir / name, *ckpt);
    m.output(dir / name);
  }
  data::write_text(dir / "loss.svg", train::loss_curve_svg(fr.log));
  m.output(dir / "log.jsonl");
  m.output(dir / "loss.svg");
  m.write(manifest_path("train", dir), true);
  out << "checkpoints written to " << dir.generic_string() << " (best epoch " << fr.best_epoch << ")\n";
  return kExitOk;
}

int cmd_eval(const json& r, std::ostream& out) {
  const std::string method = r.at("method");
  if (method.empty()) throw UsageError("--method is required");
  train::Variant v;
  try {
    v = train::make_variant(method, {}, {});
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const std::string ckpt_path = r.at("checkpoint");
  if (train::is_learned(v.method) && ckpt_path.empty()) {
    throw UsageError("--method " + method + " needs --checkpoint");
  }
  if (!ckpt_path.empty() && !fs::is_regular_file(ckpt_path)) throw UsageError("--checkpoint: no such file " + ckpt_path);
  const fs::path data_file = require_input(r, "data", "--data");

  Manifest m(r);
  m.input(data_file);
  std::optional<model::Checkpoint> ckpt;
  if (train::is_learned(v.method)) {
    m.input(ckpt_path);
    ckpt = model::load_checkpoint(ckpt_path);
  }
  const auto samples = load(data_file);
  const auto res = train::evaluate(v.method, ckpt ? &*ckpt : nullptr, samples);

  objective::MetricRecord rec;
  rec.method = method;
  rec.eval_domain = samples.front().domain;
  rec.train_domain = ckpt ? ckpt->meta.value("train_domain", std::string("unknown")) : "none";
  rec.seed = ckpt ? ckpt->meta.value("seed", r.at("seed").get<std::uint64_t>()) : r.at("seed").get<std::uint64_t>();
  rec.ade = res.ade;
  rec.fde = res.fde;
  rec.n_samples = res.n_samples;

  const std::string dest = r.at("out");
  if (!dest.empty()) {
    ensure_parent(dest);
    data::write_text(dest, json(rec).dump(2) + "\n");
    m.output(dest);
    m.write(manifest_path("eval", dest), true);
  }
  char line[96];
  std::snprintf(line, sizeof line, "ADE: %.2f  FDE: %.2f\n", res.ade, res.fde);
  out << line;
  return kExitOk;
}

fs::path split_file(const fs::path& dir, const std::string& domain, const char* split) {
  const auto plain = dir / (domain + "." + split + ".jsonl");
  if (fs::is_regular_file(plain)) return plain;
  const auto gz = dir / (domain + "." + split + ".jsonl.gz");
  if (fs::is_regular_file(gz)) return gz;
  return plain;
}

int cmd_matrix(const json& r, std::ostream& out, std::ostream& err) {
  const fs::path data_dir = require_path(r, "data_dir", "--data");
  const fs::path dir = require_path(r, "out", "--out");
  train::MatrixConfig mc;
  mc.methods = r.at("methods").get<std::vector<std::string>>();
  mc.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
  mc.use_best_checkpoint = r.at("use_best_checkpoint");
  try {
    from_json(r.at("model"), mc.model);
    from_json(r.at("seq2seq"), mc.seq2seq);
    from_json(r.at("train"), mc.train);
    mc.train.validate();
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }

  std::vector<std::pair<fs::path, fs::path>> files;
  std::string missing;
  for (const std::string d : r.at("domains")) {
    files.emplace_back(split_file(data_dir, d, "train"), split_file(data_dir, d, "val"));
    for (const auto& f : {files.back().first, files.back().second}) {
      if (!fs::is_regular_file(f)) missing += "\n  " + f.generic_string();
    }
  }
  if (!missing.empty()) throw UsageError("missing datasets:" + missing);

  std::vector<train::Variant> variants;
  for (const auto& name : mc.methods) {
    try {
      variants.push_back(train::make_variant(name, mc.model, mc.seq2seq));
      const auto& v = variants.back();
      if (v.method == train::Method::kEmag) v.model.validate();
      if (v.method == train::Method::kSeq2Seq) v.seq2seq.validate();
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
  }

  Manifest m(r);
  std::vector<train::DomainSplits> domains;
  for (std::size_t i = 0; i < files.size(); ++i) {
    m.input(files[i].first);
    m.input(files[i].second);
    train::DomainSplits d;
    d.name = r.at("domains")[i];
    d.train = load(files[i].first);
    d.val = load(files[i].second);
    for (const auto& v : variants) {
      check_model_fits(d.train.front(), v, files[i].first.string());
      check_model_fits(d.val.front(), v, files[i].second.string());
    }
    domains.push_back(std::move(d));
  }

  fs::create_directories(dir);
  mc.checkpoint_dir = dir / "checkpoints";
  auto report = train::run_matrix(mc, domains);
  for (auto& row : report.rows) {
    if (!row.checkpoint.empty()) row.checkpoint = fs::path(row.checkpoint).lexically_relative(dir).generic_string();
  }
  const auto drops = train::performance_drop(report);
  const auto table = train::render_table(report);
  const auto drop_text = train::render_drop_summary(drops);

  json report_json = report;
  report_json["drop_summary"] = json::array();
  for (const auto& d : drops) {
    report_json["drop_summary"].push_back(
        {{"method", d.method}, {"intra_ade", d.intra_ade}, {"cross_ade", d.cross_ade}, {"drop_percent", d.drop_percent}});
  }
  data::write_text(dir / "report.json", report_json.dump(2) + "\n");
  data::write_text(dir / "table.txt", table);
  data::write_text(dir / "drop_summary.txt", drop_text);
  data::write_text(dir / "drop_summary.svg", train::drop_summary_svg(drops));
  for (const char* f : {"report.json", "table.txt", "drop_summary.txt", "drop_summary.svg"}) m.output(dir / f);
  m.write(manifest_path("matrix", dir), !report.any_failure());

  out << table << "\n" << drop_text;
  if (report.any_failure()) {
    err << "error: some cells failed; see " << (dir / "report.json").generic_string() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

std::filesystem::path manifest_path(const std::string& command, const std::filesystem::path& out) {
  if (command == "train" || command == "matrix") return out / "manifest.json";
  return fs::path(out.string() + ".manifest.json");
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

int execute(const nlohmann::json& resolved, std::ostream& out, std::ostream& err) {
  try {
    const std::string cmd = resolved.at("command");
    if (cmd == "generate") return cmd_generate(resolved, out);
    if (cmd == "preprocess") return cmd_preprocess(resolved, out);
    if (cmd == "train") return cmd_train(resolved, out, err);
    if (cmd == "eval") return cmd_eval(resolved, out);
    if (cmd == "matrix") return cmd_matrix(resolved, out, err);
    throw UsageError("unknown command '" + cmd + "'");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace emag::cli
