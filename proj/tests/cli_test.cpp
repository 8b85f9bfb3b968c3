#include "emag/cli.hpp"
#include "emag/data.hpp"
#include "emag/model.hpp"
#include "emag/train.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

using namespace emag;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int rc;
  std::string out, err;
};

Result emag_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  return {rc, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "emag_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(); }

long count_lines(const fs::path& p) {
  const auto s = slurp(p);
  return std::count(s.begin(), s.end(), '\n');
}

std::string s(const fs::path& p) { return p.string(); }

// Generated and preprocessed dataset.
fs::path dataset(const fs::path& dir, const std::string& name, const std::string& domain, int n,
                 const std::string& seed) {
  const auto raw = dir / (name + ".raw.jsonl");
  const auto out = dir / (name + ".jsonl");
  EXPECT_EQ(emag_cli({"generate", "--domain", domain, "--n", std::to_string(n), "--seed", seed, "--out", s(raw)}).rc, 0);
  EXPECT_EQ(emag_cli({"preprocess", "--in", s(raw), "--out", s(out)}).rc, 0);
  return out;
}

const std::vector<std::string> kTiny = {"--epochs", "2", "--warmup-epochs", "1", "--token-dim", "16",
                                        "--heads",  "2", "--blocks",        "1"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

class SeedEnv {
 public:
  explicit SeedEnv(const char* value) {
    if (value) setenv("EMAG_SEED", value, 1);
    else unsetenv("EMAG_SEED");
  }
  ~SeedEnv() { unsetenv("EMAG_SEED"); }
};

}  // namespace

// --- generate ----------------------------------------------------------------------

TEST(Generate, WritesRequestedSequencesWithManifest) {
  const auto dir = scratch("generate");
  const auto file = dir / "k.jsonl";
  const auto r = emag_cli({"generate", "--domain", "kitchen", "--n", "10", "--seed", "7", "--out", s(file)});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(count_lines(file), 10);
  const auto m = read_json(cli::manifest_path("generate", file));
  EXPECT_EQ(m["command"], "generate");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["code_version"], EMAG_VERSION);
  EXPECT_EQ(m["config"]["n"], 10);
  EXPECT_EQ(m["config"]["scenario"]["domain"], "kitchen");
  EXPECT_TRUE(m.contains("started_at") && m.contains("finished_at"));
  ASSERT_EQ(m["outputs"].size(), 1u);
  EXPECT_EQ(m["outputs"][0]["sha256"], cli::sha256_file(file));
}

TEST(Generate, SameFlagsGiveIdenticalFiles) {
  const auto dir = scratch("generate_twice");
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    ASSERT_EQ(emag_cli({"generate", "--domain", "outdoor", "--n", "4", "--seed", "7", "--out", s(dir / name)}).rc, 0);
  }
  EXPECT_EQ(cli::sha256_file(dir / "a.jsonl"), cli::sha256_file(dir / "b.jsonl"));
}

TEST(Generate, UnknownDomainListsBuiltins) {
  const auto dir = scratch("generate_unknown");
  const auto r = emag_cli({"generate", "--domain", "mars", "--n", "3", "--out", s(dir / "x.jsonl")});
  EXPECT_EQ(r.rc, cli::kExitUsage);
  EXPECT_NE(r.err.find("kitchen"), std::string::npos);
  EXPECT_NE(r.err.find("outdoor"), std::string::npos);
}

TEST(Generate, ZeroSequencesIsUsageError) {
  const auto dir = scratch("generate_zero");
  EXPECT_EQ(emag_cli({"generate", "--domain", "kitchen", "--n", "0", "--out", s(dir / "x.jsonl")}).rc,
            cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "x.jsonl"));
}

// --- settings resolution -------------------------------------------------------------

TEST(Precedence, FlagOverConfigOverDefault) {
  SeedEnv env(nullptr);
  const auto dir = scratch("precedence");
  write_json(dir / "c.json", {{"seed", 3}, {"n", 5}, {"domain", "kitchen"}});
  auto manifest = [&](const fs::path& out) { return read_json(cli::manifest_path("generate", out)); };

  ASSERT_EQ(emag_cli({"generate", "--domain", "kitchen", "--n", "2", "--out", s(dir / "d.jsonl")}).rc, 0);
  EXPECT_EQ(manifest(dir / "d.jsonl")["seed"], 0);

  ASSERT_EQ(emag_cli({"generate", "--config", s(dir / "c.json"), "--out", s(dir / "c.jsonl")}).rc, 0);
  EXPECT_EQ(manifest(dir / "c.jsonl")["seed"], 3);
  EXPECT_EQ(count_lines(dir / "c.jsonl"), 5);

  ASSERT_EQ(emag_cli({"generate", "--config", s(dir / "c.json"), "--seed", "9", "--n", "4", "--out", s(dir / "f.jsonl")})
                .rc,
            0);
  EXPECT_EQ(manifest(dir / "f.jsonl")["seed"], 9);
  EXPECT_EQ(count_lines(dir / "f.jsonl"), 4);
}

TEST(Precedence, EnvironmentSeedReplacesOnlyTheDefault) {
  const auto dir = scratch("env_seed");
  write_json(dir / "c.json", {{"seed", 3}});
  auto seed_of = [&](std::vector<std::string> extra, const std::string& name) {
    std::vector<std::string> args{"generate", "--domain", "kitchen", "--n", "1", "--out", s(dir / name)};
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(emag_cli(args).rc, 0);
    return read_json(cli::manifest_path("generate", dir / name))["seed"].get<int>();
  };
  SeedEnv env("11");
  EXPECT_EQ(seed_of({}, "a.jsonl"), 11);
  EXPECT_EQ(seed_of({"--config", s(dir / "c.json")}, "b.jsonl"), 3);
  EXPECT_EQ(seed_of({"--config", s(dir / "c.json"), "--seed", "5"}, "c.jsonl"), 5);
}

TEST(Precedence, MalformedEnvironmentSeedIsUsageError) {
  const auto dir = scratch("env_bad");
  SeedEnv env("x1");
  EXPECT_EQ(emag_cli({"generate", "--domain", "kitchen", "--n", "1", "--out", s(dir / "a.jsonl")}).rc,
            cli::kExitUsage);
}

TEST(Config, UnknownKeysAndWrongTypesAreRejected) {
  const auto dir = scratch("config_schema");
  auto rc = [&](const json& cfg) {
    write_json(dir / "c.json", cfg);
    return emag_cli({"generate", "--config", s(dir / "c.json"), "--domain", "kitchen", "--n", "1", "--out",
                     s(dir / "x.jsonl")})
        .rc;
  };
  EXPECT_EQ(rc({{"sed", 1}}), cli::kExitUsage);
  EXPECT_EQ(rc({{"n", "three"}}), cli::kExitUsage);
  EXPECT_EQ(rc({{"command", "train"}}), cli::kExitUsage);
  EXPECT_EQ(rc({{"scenario", {{"hands", {{"speed", 1}}}}}}), cli::kExitUsage);
  EXPECT_EQ(rc({{"scenario", {{"hands", {{"missing_prob", 2.0}}}}}}), cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "x.jsonl"));
}

TEST(Config, ScenarioOverridesAreMaterialized) {
  const auto dir = scratch("config_scenario");
  write_json(dir / "c.json", {{"scenario", {{"hands", {{"missing_prob", 0.0}}}, {"future_steps", 3}}}});
  ASSERT_EQ(
      emag_cli({"generate", "--config", s(dir / "c.json"), "--domain", "outdoor", "--n", "2", "--out", s(dir / "o.jsonl")})
          .rc,
      0);
  const auto m = read_json(cli::manifest_path("generate", dir / "o.jsonl"));
  EXPECT_EQ(m["config"]["scenario"]["hands"]["missing_prob"], 0.0);
  EXPECT_EQ(m["config"]["scenario"]["future_steps"], 3);
  EXPECT_TRUE(m["config"]["scenario"].contains("camera"));
  EXPECT_EQ(data::read_dataset(dir / "o.jsonl").front().future_steps(), 3);
}

TEST(Config, EveryFlagHasAConfigKey) {
  for (const char* cmd : {"generate", "preprocess", "train", "eval", "matrix"}) {
    const auto defaults = cli::default_config(cmd);
    EXPECT_TRUE(defaults.contains("seed")) << cmd;
    EXPECT_TRUE(defaults.contains("out")) << cmd;
  }
  const auto train = cli::default_config("train");
  for (const char* k : {"method", "train_data", "val_data"}) EXPECT_TRUE(train.contains(k)) << k;
  for (const char* k : {"epochs", "peak_lr", "warmup_epochs", "batch_size", "weight_decay", "alpha"}) {
    EXPECT_TRUE(train["train"].contains(k)) << k;
  }
  for (const char* k : {"token_dim", "blocks", "heads", "dropout", "use_objects", "use_rgb", "use_flow", "use_ego"}) {
    EXPECT_TRUE(train["model"].contains(k)) << k;
  }
  const auto pre = cli::default_config("preprocess");
  for (const char* k : {"input", "ransac_iters", "threshold", "stride", "from_homography"}) {
    EXPECT_TRUE(pre.contains(k)) << k;
  }
  const auto mx = cli::default_config("matrix");
  for (const char* k : {"methods", "domains", "seeds", "data_dir", "use_best_checkpoint"}) EXPECT_TRUE(mx.contains(k));
}

TEST(Config, PrintConfigShowsResolvedSettings) {
  SeedEnv env(nullptr);
  const auto dir = scratch("print_config");
  write_json(dir / "c.json", {{"train", {{"epochs", 7}, {"peak_lr", 1e-3}}}});
  const auto r = emag_cli({"train", "--print-config", "--config", s(dir / "c.json"), "--lr", "3e-3", "--no-rgb"});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["train"]["epochs"], 7);
  EXPECT_EQ(j["train"]["peak_lr"], 3e-3);
  EXPECT_EQ(j["train"]["weight_decay"], 1e-3);
  EXPECT_EQ(j["model"]["use_rgb"], false);
  EXPECT_EQ(j["seed"], 0);
  EXPECT_FALSE(j["model"].contains("init_seed"));
}

TEST(Usage, ExitCodes) {
  EXPECT_EQ(emag_cli({}).rc, cli::kExitUsage);
  EXPECT_EQ(emag_cli({"frobnicate"}).rc, cli::kExitUsage);
  EXPECT_EQ(emag_cli({"generate", "--bogus"}).rc, cli::kExitUsage);
  const auto help = emag_cli({"--help"});
  EXPECT_EQ(help.rc, cli::kExitOk);
  EXPECT_NE(help.out.find("matrix"), std::string::npos);
}

// --- preprocess --------------------------------------------------------------------

TEST(Preprocess, ZeroFlowGivesIdentityHomographies) {
  const auto dir = scratch("preprocess_zero");
  ASSERT_EQ(emag_cli({"generate", "--domain", "outdoor", "--n", "3", "--out", s(dir / "raw.jsonl")}).rc, 0);
  auto samples = data::read_dataset(dir / "raw.jsonl");
  for (auto& smp : samples)
    for (auto& o : smp.observed)
      for (auto& v : o.flow->vectors) v.setZero();
  data::write_dataset(dir / "zero.jsonl", samples);
  ASSERT_EQ(emag_cli({"preprocess", "--in", s(dir / "zero.jsonl"), "--out", s(dir / "out.jsonl")}).rc, 0);
  for (const auto& smp : data::read_dataset(dir / "out.jsonl")) {
    for (const auto& o : smp.observed) {
      ASSERT_TRUE(o.homography);
      EXPECT_LT((*o.homography - Homography::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Preprocess, RecoversGeneratingHomographies) {
  const auto dir = scratch("preprocess_truth");
  const auto out = dataset(dir, "k", "kitchen", 5, "1");
  double total = 0;
  long n = 0;
  for (const auto& smp : data::read_dataset(out)) {
    for (const auto& o : smp.observed) {
      ASSERT_TRUE(o.homography && o.true_homography);
      for (double y = 8; y < 256; y += 16) {
        for (double x = 8; x < 256; x += 16) {
          const Eigen::Vector3d p(x, y, 1);
          total += ((*o.homography * p).hnormalized() - (*o.true_homography * p).hnormalized()).norm();
          ++n;
        }
      }
    }
  }
  EXPECT_LT(total / n, 0.5);
}

TEST(Preprocess, DeterministicGivenSeed) {
  const auto dir = scratch("preprocess_seed");
  ASSERT_EQ(emag_cli({"generate", "--domain", "kitchen", "--n", "3", "--out", s(dir / "raw.jsonl")}).rc, 0);
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    ASSERT_EQ(emag_cli({"preprocess", "--in", s(dir / "raw.jsonl"), "--out", s(dir / name), "--seed", "4",
                        "--ransac-iters", "50", "--threshold", "2"})
                  .rc,
              0);
  }
  EXPECT_EQ(cli::sha256_file(dir / "a.jsonl"), cli::sha256_file(dir / "b.jsonl"));
  const auto m = read_json(cli::manifest_path("preprocess", dir / "a.jsonl"));
  EXPECT_EQ(m["config"]["ransac_iters"], 50);
  EXPECT_EQ(m["config"]["threshold"], 2.0);
  EXPECT_EQ(m["inputs"][0]["sha256"], cli::sha256_file(dir / "raw.jsonl"));
}

TEST(Preprocess, MissingFlowSuggestsPassthrough) {
  const auto dir = scratch("preprocess_noflow");
  write_json(dir / "c.json", {{"scenario", {{"include_flow_grids", false}}}});
  ASSERT_EQ(emag_cli({"generate", "--config", s(dir / "c.json"), "--domain", "kitchen", "--n", "2", "--out",
                      s(dir / "raw.jsonl")})
                .rc,
            0);
  const auto r = emag_cli({"preprocess", "--in", s(dir / "raw.jsonl"), "--out", s(dir / "out.jsonl")});
  EXPECT_EQ(r.rc, cli::kExitFailure);
  EXPECT_NE(r.err.find("--from-homography"), std::string::npos);
  EXPECT_EQ(
      emag_cli({"preprocess", "--in", s(dir / "raw.jsonl"), "--out", s(dir / "out.jsonl"), "--from-homography"}).rc, 0);
}

// --- train -------------------------------------------------------------------------

TEST(Train, ToyRunWritesCheckpointsLogAndManifest) {
  const auto dir = scratch("train");
  const auto data = dataset(dir, "k", "kitchen", 16, "2");
  const auto out = dir / "run";
  const auto r = emag_cli(with_tiny({"train", "--train", s(data), "--val", s(data), "--out", s(out), "--seed", "4"}));
  ASSERT_EQ(r.rc, 0) << r.err;
  for (const char* f : {"final.json", "best.json", "log.jsonl", "loss.svg", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(count_lines(out / "log.jsonl"), 2);
  int manifests = 0;
  for (const auto& e : fs::directory_iterator(out)) manifests += e.path().filename().string().find("manifest") != std::string::npos;
  EXPECT_EQ(manifests, 1);
  const auto ckpt = model::load_checkpoint(out / "final.json");
  EXPECT_EQ(ckpt.kind, "emag");
  EXPECT_EQ(ckpt.meta["train_domain"], "kitchen");
  EXPECT_EQ(ckpt.meta["seed"], 4);
  EXPECT_EQ(ckpt.config["token_dim"], 16);
  EXPECT_EQ(ckpt.config["init_seed"], 4);
}

TEST(Train, AblationFromConfigTrainsReducedModel) {
  const auto dir = scratch("train_ablation");
  const auto data = dataset(dir, "k", "kitchen", 8, "2");
  write_json(dir / "c.json", {{"model", {{"use_rgb", false}, {"use_flow", false}}}});
  ASSERT_EQ(emag_cli(with_tiny({"train", "--config", s(dir / "c.json"), "--train", s(data), "--out", s(dir / "run")})).rc,
            0);
  const auto ckpt = model::load_checkpoint(dir / "run" / "final.json");
  EXPECT_EQ(ckpt.config["use_rgb"], false);
  EXPECT_EQ(ckpt.config["use_flow"], false);
  for (const auto& [name, t] : ckpt.parameters) {
    EXPECT_EQ(name.find("rgb"), std::string::npos) << name;
    EXPECT_EQ(name.find("flow"), std::string::npos) << name;
  }
}

TEST(Train, VariantAndSeq2Seq) {
  const auto dir = scratch("train_variants");
  const auto data = dataset(dir, "k", "kitchen", 8, "2");
  ASSERT_EQ(emag_cli(with_tiny({"train", "--model", "no-ego", "--train", s(data), "--out", s(dir / "a")})).rc, 0);
  EXPECT_EQ(model::load_checkpoint(dir / "a" / "final.json").config["use_ego"], false);
  ASSERT_EQ(emag_cli(with_tiny({"train", "--model", "seq2seq", "--train", s(data), "--out", s(dir / "b")})).rc, 0);
  EXPECT_EQ(model::load_checkpoint(dir / "b" / "final.json").kind, "seq2seq");
  EXPECT_EQ(emag_cli(with_tiny({"train", "--model", "cvm", "--train", s(data), "--out", s(dir / "c")})).rc,
            cli::kExitUsage);
}

TEST(Train, SchemaMismatchFailsBeforeTraining) {
  const auto dir = scratch("train_mismatch");
  const auto data = dataset(dir, "k", "kitchen", 4, "2");
  write_json(dir / "c.json", {{"model", {{"rgb_dim", 16}}}});
  const auto r = emag_cli(with_tiny({"train", "--config", s(dir / "c.json"), "--train", s(data), "--out", s(dir / "run")}));
  EXPECT_EQ(r.rc, cli::kExitUsage);
  EXPECT_NE(r.err.find("rgb_dim"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run"));
  write_json(dir / "c.json", {{"train", {{"batch_size", 0}}}});
  EXPECT_EQ(emag_cli(with_tiny({"train", "--config", s(dir / "c.json"), "--train", s(data), "--out", s(dir / "run")})).rc,
            cli::kExitUsage);
}

TEST(Train, NonFiniteLossExitsNonzeroWithDiagnostic) {
  const auto dir = scratch("train_nan");
  const auto data = dataset(dir, "k", "kitchen", 8, "2");
  const auto r = emag_cli({"train", "--train", s(data), "--out", s(dir / "run"), "--lr", "1e300", "--epochs", "3",
                           "--warmup-epochs", "1", "--token-dim", "16", "--heads", "2", "--blocks", "1"});
  EXPECT_EQ(r.rc, cli::kExitFailure);
  EXPECT_NE(r.err.find("training aborted"), std::string::npos);
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "last_good.json"));
  EXPECT_FALSE(fs::exists(dir / "run" / "final.json"));
  EXPECT_EQ(read_json(dir / "run" / "manifest.json")["status"], "failed");
}

// --- eval --------------------------------------------------------------------------

TEST(Eval, CvmNeedsNoCheckpointAndFollowsSchema) {
  const auto dir = scratch("eval_cvm");
  const auto data = dataset(dir, "k", "kitchen", 6, "3");
  const auto r = emag_cli({"eval", "--method", "cvm", "--data", s(data), "--out", s(dir / "m.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_TRUE(std::regex_match(r.out, std::regex(R"(ADE: \d+\.\d\d  FDE: \d+\.\d\d\n)"))) << r.out;

  const auto m = read_json(dir / "m.json");
  ASSERT_TRUE(m.is_object());
  EXPECT_EQ(m.size(), 7u);
  for (const char* k : {"method", "train_domain", "eval_domain"}) EXPECT_TRUE(m.at(k).is_string()) << k;
  for (const char* k : {"ade", "fde"}) EXPECT_TRUE(m.at(k).is_number()) << k;
  for (const char* k : {"n_samples", "seed"}) EXPECT_TRUE(m.at(k).is_number_unsigned()) << k;
  EXPECT_EQ(m["method"], "cvm");
  EXPECT_EQ(m["eval_domain"], "kitchen");
  EXPECT_EQ(m["n_samples"], 6);

  const auto samples = data::read_dataset(data);
  const auto lib = train::evaluate(train::Method::kCvm, nullptr, samples);
  EXPECT_EQ(m["ade"].get<double>(), lib.ade);
  EXPECT_EQ(m["fde"].get<double>(), lib.fde);
}

TEST(Eval, LearnedMethodRequiresCheckpoint) {
  const auto dir = scratch("eval_learned");
  const auto data = dataset(dir, "k", "kitchen", 4, "3");
  const auto r = emag_cli({"eval", "--method", "emag", "--data", s(data)});
  EXPECT_EQ(r.rc, cli::kExitUsage);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
  EXPECT_EQ(emag_cli({"eval", "--method", "lstm", "--data", s(data)}).rc, cli::kExitUsage);
}

TEST(Eval, CheckpointRoundTripMatchesTraining) {
  const auto dir = scratch("eval_ckpt");
  const auto data = dataset(dir, "k", "outdoor", 8, "3");
  ASSERT_EQ(emag_cli(with_tiny({"train", "--train", s(data), "--val", s(data), "--out", s(dir / "run")})).rc, 0);
  const auto r = emag_cli({"eval", "--method", "emag", "--checkpoint", s(dir / "run" / "final.json"), "--data", s(data),
                           "--out", s(dir / "m.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto m = read_json(dir / "m.json");
  EXPECT_EQ(m["train_domain"], "outdoor");
  // The last log line validated the final weights on the same data.
  const auto log = slurp(dir / "run" / "log.jsonl");
  const auto last = json::parse(log.substr(log.rfind('\n', log.size() - 2) + 1));
  EXPECT_NEAR(m["ade"].get<double>(), last["val_ade"].get<double>(), 1e-9);
}

// --- matrix ------------------------------------------------------------------------

class MatrixTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("matrix"));
    for (const std::string d : {"kitchen", "outdoor"}) {
      dataset(*dir_ / "data", d + ".train", d, 8, "5");
      dataset(*dir_ / "data", d + ".val", d, 4, "6");
    }
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path* dir_;
};
fs::path* MatrixTest::dir_ = nullptr;

TEST_F(MatrixTest, TwoMethodsTwoDomainsOneSeedGiveEightRows) {
  const auto out = *dir_ / "eight";
  const auto r = emag_cli(
      with_tiny({"matrix", "--methods", "cvm,emag", "--seeds", "0", "--data", s(*dir_ / "data"), "--out", s(out)}));
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto report = read_json(out / "report.json");
  ASSERT_EQ(report["rows"].size(), 8u);
  for (const auto& row : report["rows"]) {
    if (row["method"] == "emag") {
      EXPECT_EQ(row["checkpoint_kind"], "final");
      EXPECT_TRUE(fs::exists(out / row["checkpoint"].get<std::string>())) << row["checkpoint"];
    }
  }
  // Drop per method from the rows themselves (one seed, so medians are the values).
  ASSERT_EQ(report["drop_summary"].size(), 2u);
  for (const auto& d : report["drop_summary"]) {
    double intra = 0, cross = 0;
    for (const auto& row : report["rows"]) {
      if (row["method"] != d["method"]) continue;
      (row["train_domain"] == row["eval_domain"] ? intra : cross) += row["ade"].get<double>() / 2;
    }
    EXPECT_NEAR(d["drop_percent"].get<double>(), (cross - intra) / intra * 100, 1e-9);
  }
  for (const char* f : {"table.txt", "drop_summary.txt", "drop_summary.svg", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_NE(slurp(out / "table.txt").find('*'), std::string::npos);
  EXPECT_NE(r.out.find("drop %"), std::string::npos);
}

TEST_F(MatrixTest, RerunFromManifestIsByteIdentical) {
  const auto a = *dir_ / "rerun_a", b = *dir_ / "rerun_b";
  ASSERT_EQ(emag_cli({"matrix", "--methods", "cvm,kf", "--seeds", "0,1", "--data", s(*dir_ / "data"), "--out", s(a)}).rc,
            0);
  ASSERT_EQ(emag_cli({"reproduce", "--manifest", s(a / "manifest.json"), "--out", s(b)}).rc, 0);
  for (const char* f : {"report.json", "table.txt", "drop_summary.txt", "drop_summary.svg"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST_F(MatrixTest, MissingDatasetIsUsageError) {
  const auto r = emag_cli({"matrix", "--methods", "cvm", "--domains", "kitchen,attic", "--data", s(*dir_ / "data"),
                           "--out", s(*dir_ / "missing")});
  EXPECT_EQ(r.rc, cli::kExitUsage);
  EXPECT_NE(r.err.find("attic.train.jsonl"), std::string::npos);
}

TEST_F(MatrixTest, FailedCellIsRecordedAndExitsNonzero) {
  // Raw (unpreprocessed) data: baselines work, EMAG training cannot.
  const auto raw = *dir_ / "raw";
  fs::create_directories(raw);
  for (const std::string d : {"kitchen", "outdoor"}) {
    for (const char* split : {"train", "val"}) {
      fs::copy_file(*dir_ / "data" / (d + "." + split + ".raw.jsonl"), raw / (d + "." + split + ".jsonl"),
                    fs::copy_options::overwrite_existing);
    }
  }
  const auto out = *dir_ / "failed";
  const auto r = emag_cli(with_tiny({"matrix", "--methods", "cvm,emag", "--data", s(raw), "--out", s(out)}));
  EXPECT_EQ(r.rc, cli::kExitFailure);
  const auto report = read_json(out / "report.json");
  ASSERT_EQ(report["rows"].size(), 8u);
  for (const auto& row : report["rows"]) EXPECT_EQ(row["error"].is_string(), row["method"] == "emag");
  EXPECT_EQ(read_json(out / "manifest.json")["status"], "failed");
}

// --- reproduce ---------------------------------------------------------------------

TEST(Reproduce, RegeneratesIdenticalDataset) {
  const auto dir = scratch("reproduce");
  ASSERT_EQ(emag_cli({"generate", "--domain", "outdoor", "--n", "3", "--seed", "2", "--out", s(dir / "a.jsonl")}).rc, 0);
  ASSERT_EQ(emag_cli({"reproduce", "--manifest", s(cli::manifest_path("generate", dir / "a.jsonl")), "--out",
                      s(dir / "b.jsonl")})
                .rc,
            0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
}

TEST(Reproduce, RejectsChangedInputs) {
  const auto dir = scratch("reproduce_changed");
  const auto out = dataset(dir, "k", "kitchen", 2, "2");
  std::ofstream(dir / "k.raw.jsonl", std::ios::app) << "\n";
  const auto r = emag_cli({"reproduce", "--manifest", s(cli::manifest_path("preprocess", out))});
  EXPECT_EQ(r.rc, cli::kExitUsage);
  EXPECT_NE(r.err.find("changed"), std::string::npos);
}
