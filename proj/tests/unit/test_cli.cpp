#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mgtood/cli.hpp"
#include "mgtood/embed_client.hpp"
#include "mgtood/synth.hpp"

using namespace mgtood;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mgtood");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<json> jsonl(const std::string& text) {
  std::vector<json> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

// Shared workspace: a small synthetic dataset and one trained checkpoint.
struct Workspace {
  fs::path dir;
  fs::path data;
  fs::path ckpt;

  Workspace() {
    dir = fs::temp_directory_path() / ("mgtood-cli-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    data = dir / "data.jsonl";
    ckpt = dir / "dsvdd.json";
    const auto r = run({"synth", "--out", data.string(), "--dim", "8", "--samples-per-group", "40"});
    REQUIRE(r.code == 0);
    const auto t = run({"--no-timestamp", "train", "--method", "dsvdd", "--data", data.string(), "--out",
                        ckpt.string(), "--epochs", "3", "--out-dim", "8"});
    REQUIRE(t.code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("train writes a checkpoint and a log") {
  auto& w = ws();
  CHECK(fs::exists(w.ckpt));
  const json log = json::parse(slurp(w.ckpt.string() + ".log.json"));
  CHECK(log.at("log").at("epochs").size() >= 1);
  CHECK(log.at("config").at("method") == "dsvdd");
  CHECK(!log.contains("timestamp"));
}

TEST_CASE("train reports epochs on stderr") {
  auto& w = ws();
  const auto out = w.dir / "hrn.json";
  const auto r = run({"train", "--method", "hrn", "--data", w.data.string(), "--out", out.string(), "--epochs", "2",
                      "--out-dim", "8"});
  CHECK(r.code == 0);
  CHECK(r.err.find("epoch 1") != std::string::npos);
  CHECK(r.err.find("val_auroc") != std::string::npos);
}

TEST_CASE("train usage errors") {
  auto& w = ws();
  CHECK(run({"train", "--method", "dsvdd", "--out", (w.dir / "x.json").string()}).code == 2);
  CHECK(run({"train", "--method", "dsvdd", "--data", (w.dir / "missing.jsonl").string(), "--out",
             (w.dir / "x.json").string()})
            .code == 2);
  CHECK(run({"train", "--method", "svm", "--data", w.data.string(), "--out", (w.dir / "x.json").string()}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("train config file") {
  auto& w = ws();
  const auto cfg = w.dir / "cfg.json";
  std::ofstream(cfg) << json{{"method", "energy"}, {"epochs", 2}, {"out_dim", 8}}.dump();
  const auto out = w.dir / "energy.json";
  const auto r = run({"--no-timestamp", "train", "--config", cfg.string(), "--data", w.data.string(), "--out",
                      out.string(), "--epochs", "1"});
  CHECK(r.code == 0);
  const json ck = json::parse(slurp(out));
  CHECK(ck.at("detector") == "energy");
  CHECK(ck.at("hyper").at("epochs") == 1);

  const auto bad = w.dir / "bad_cfg.json";
  std::ofstream(bad) << json{{"method", "energy"}, {"epoch", 2}}.dump();
  const auto rb = run({"train", "--config", bad.string(), "--data", w.data.string(), "--out", out.string()});
  CHECK(rb.code == 2);
  CHECK(rb.err.find("epoch") != std::string::npos);
}

TEST_CASE("config merging") {
  const json base = cli::default_config();
  CHECK(base.contains("learning_rate"));
  CHECK_THROWS_AS(cli::merge_config(base, json{{"nonsense", 1}}), ConfigError);
  const json merged = cli::merge_config(base, json{{"epochs", 4}});
  CHECK(cli::train_config_from_json(merged).epochs == 4);
}

TEST_CASE("non-finite training exits with a runtime error") {
  auto& w = ws();
  const auto r = run({"train", "--method", "hrn", "--data", w.data.string(), "--out", (w.dir / "nan.json").string(),
                      "--lr", "1e300", "--epochs", "2", "--out-dim", "8"});
  CHECK(r.code == 1);
  CHECK(r.err.find("non-finite loss at epoch") != std::string::npos);
}

TEST_CASE("score then eval matches checkpoint eval") {
  auto& w = ws();
  const auto scores = w.dir / "scores.jsonl";
  REQUIRE(run({"score", "--checkpoint", w.ckpt.string(), "--data", w.data.string(), "--split", "test", "--out",
               scores.string()})
              .code == 0);
  const auto rows = jsonl(slurp(scores));
  REQUIRE(!rows.empty());
  for (const auto& r : rows) {
    CHECK(r.contains("id"));
    CHECK(r.at("score").is_number());
    CHECK(r.contains("label"));
    CHECK(!r.contains("decision"));
  }
  const auto a = run({"--no-timestamp", "eval", "--scores", scores.string()});
  const auto b = run({"--no-timestamp", "eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const json ja = json::parse(a.out);
  const json jb = json::parse(b.out);
  for (const char* k : {"auroc", "aupr", "fpr95", "n_pos", "n_neg"}) CHECK(ja.at(k) == jb.at(k));
  CHECK(jb.at("split") == "test");
  CHECK(jb.contains("config"));
  CHECK(a.err.find("AUROC") != std::string::npos);
}

TEST_CASE("score decisions require a threshold") {
  auto& w = ws();
  // Unlabeled copy of the data.
  std::string unlabeled;
  for (auto r : jsonl(slurp(w.data))) {
    if (r.contains("meta")) continue;
    r.erase("label");
    r.erase("family");
    unlabeled += r.dump() + "\n";
  }
  const auto path = w.dir / "unlabeled.jsonl";
  std::ofstream(path) << unlabeled;
  const auto plain = run({"score", "--checkpoint", w.ckpt.string(), "--data", path.string()});
  REQUIRE(plain.code == 0);
  for (const auto& r : jsonl(plain.out)) {
    CHECK(!r.contains("label"));
    CHECK(!r.contains("decision"));
  }
  const auto decided = run({"score", "--checkpoint", w.ckpt.string(), "--data", path.string(), "--threshold", "0.5"});
  REQUIRE(decided.code == 0);
  for (const auto& r : jsonl(decided.out)) {
    const bool human = r.at("score").get<double>() > 0.5;
    CHECK(r.at("decision") == (human ? "human" : "machine"));
  }
}

TEST_CASE("eval with policies and thresholds") {
  auto& w = ws();
  const auto r = run({"--no-timestamp", "eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string(), "--policy",
                      "maxf1"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.at("policy") == "maxf1");
  CHECK(j.at("threshold_used").is_number());
  CHECK(j.at("accuracy").is_number());
  CHECK(j.at("f1").is_number());

  CHECK(run({"eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string(), "--policy", "tpr95", "--threshold",
             "1"})
            .code == 2);
  CHECK(run({"eval", "--checkpoint", w.ckpt.string()}).code == 2);
  CHECK(run({"eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string(), "--policy", "bogus"}).code != 0);
}

TEST_CASE("calibrate stores a threshold") {
  auto& w = ws();
  const auto out = w.dir / "calibrated.json";
  const auto r = run({"calibrate", "--checkpoint", w.ckpt.string(), "--data", w.data.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  const double t = json::parse(r.out).at("threshold").get<double>();
  CHECK(json::parse(slurp(out)).at("threshold").get<double>() == t);
  const auto e = run({"--no-timestamp", "eval", "--checkpoint", out.string(), "--data", w.data.string()});
  CHECK(json::parse(e.out).at("threshold_used").get<double>() == t);
}

TEST_CASE("reruns without timestamps are byte-identical") {
  auto& w = ws();
  auto train_once = [&](const std::string& name) {
    const auto out = w.dir / name;
    REQUIRE(run({"--no-timestamp", "train", "--method", "energy", "--data", w.data.string(), "--out", out.string(),
                 "--epochs", "2", "--out-dim", "8"})
                .code == 0);
    return slurp(out) + slurp(out.string() + ".log.json");
  };
  // Same output path both times: the log records its own paths.
  const std::string first = train_once("rerun.json");
  CHECK(first == train_once("rerun.json"));
  const auto e1 = run({"--no-timestamp", "eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string()});
  const auto e2 = run({"--no-timestamp", "eval", "--checkpoint", w.ckpt.string(), "--data", w.data.string()});
  CHECK(e1.out == e2.out);
}

TEST_CASE("distances command") {
  auto& w = ws();
  const auto r = run({"distances", "--data", w.data.string()});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.at("intra_machine").get<double>() < j.at("inter").get<double>());
  CHECK(j.at("split") == "train");
  CHECK(run({"distances", "--data", w.data.string(), "--split", "all"}).code == 2);
}

TEST_CASE("synth command matches the library generator") {
  const auto r = run({"synth", "--dim", "6", "--samples-per-group", "10", "--seed", "3"});
  REQUIRE(r.code == 0);
  SynthSpec s;
  s.dim = 6;
  s.samples_per_group = 10;
  s.seed = 3;
  CHECK(r.out == serialize_dataset(generate(s)));
  CHECK(run({"synth", "--dim", "0"}).code != 0);
}

TEST_CASE("theory subcommands") {
  auto& w = ws();
  const auto t1 = run({"theory", "verify-thm1", "--seed", "2"});
  REQUIRE(t1.code == 0);
  CHECK(json::parse(t1.out).at("pass") == true);

  const auto inst = w.dir / "thm1.json";
  // Shifted-biased human text; P_hat_M = P_M P_hat_H / P_H comes out uniform.
  std::ofstream(inst) << R"({"q_M": 0.5, "P_M": [0.45, 0.45, 0.05, 0.05], "P_hat_H": [0.25, 0.25, 0.3, 0.2],
                           "X0": [true, true, false, false], "C1": 1.8, "delta0": 0.05})";
  const auto t1i = run({"theory", "verify-thm1", "--instance", inst.string()});
  REQUIRE(t1i.code == 0);
  const json j1 = json::parse(t1i.out);
  CHECK(j1.at("chi2").get<double>() == doctest::Approx(0.5 / 1.8 + 0.5 / 0.2 - 1.0));
  CHECK(j1.at("pass") == true);

  const auto bad = w.dir / "thm1_bad.json";
  std::ofstream(bad) << R"({"q_M": 0.5, "P_M": [0.1, 0.2, 0.3, 0.4], "P_hat_H": [0.25, 0.25, 0.3, 0.2],
                          "X0": [0, 1], "C1": 1.8})";
  CHECK(run({"theory", "verify-thm1", "--instance", bad.string()}).code == 1);

  const auto inst2 = w.dir / "thm2.json";
  std::ofstream(inst2) << R"({"q_M": 0.5, "P_M": [0.9, 0.1], "P_H": [0.9, 0.1], "P_hat_D": [0.5, 0.5], "delta": 0.01})";
  const auto t2 = run({"theory", "verify-thm2", "--instance", inst2.string()});
  REQUIRE(t2.code == 0);
  const json j2 = json::parse(t2.out);
  CHECK(j2.at("chi2").get<double>() == doctest::Approx(0.64));
  CHECK(j2.at("pass") == true);

  const auto c = w.dir / "chi2.json";
  std::ofstream(c) << R"({"P1": [0.5, 0.5], "P2": [1.0, 0.0]})";
  const json jc = json::parse(run({"theory", "chi2", "--instance", c.string()}).out);
  CHECK(jc.at("chi2").is_null());
  CHECK(jc.at("infinite") == true);

  const auto k = w.dir / "kw.json";
  std::ofstream(k) << R"({"q_M": 0.5, "P_M": [1.0], "P_H": [1.0], "p_hat_M": [1.0]})";
  const json jk = json::parse(run({"theory", "kwality", "--instance", k.string()}).out);
  CHECK(jk.at("kwality").get<double>() == doctest::Approx(std::log(2.0)));

  CHECK(run({"theory", "chi2"}).code == 2);
}

TEST_CASE("embed command with the fallback embedder") {
  auto& w = ws();
  ::unsetenv(kEmbedEndpointEnv);
  const auto in = w.dir / "texts.jsonl";
  std::ofstream(in) << R"({"text": "the quick brown fox", "label": "human", "split": "train"})" << "\n"
                    << R"({"id": "g1", "text": "as an assistant I can help", "label": "machine", "family": "gen", "split": "train"})"
                    << "\n";
  const auto out = w.dir / "embedded.jsonl";
  const auto r = run({"embed", "--input", in.string(), "--out", out.string(), "--dim", "32"});
  REQUIRE(r.code == 0);
  const Dataset d = load_dataset(out);
  REQUIRE(d.samples.size() == 2);
  CHECK(d.dim == 32);
  CHECK(d.encoder == "fallback-hash3-32");
  CHECK(d.samples[1].id == "g1");
  CHECK(d.samples[0].embedding == embed_fallback({"the quick brown fox"}, 32, 0)[0]);

  const auto missing_text = w.dir / "bad_texts.jsonl";
  std::ofstream(missing_text) << R"({"id": "x"})" << "\n";
  CHECK(run({"embed", "--input", missing_text.string()}).code == 1);
}

TEST_CASE("energy margin presets load as train configs") {
  const fs::path dir = fs::path(MGTOOD_SOURCE_DIR) / "tools" / "presets";
  for (const auto& [file, m_out] : {std::pair{"energy-appendix.json", -5.0}, std::pair{"energy-main-text.json", -2.0}}) {
    const json preset = json::parse(slurp(dir / file));
    const auto c = cli::train_config_from_json(cli::merge_config(cli::default_config(), preset));
    CHECK(c.energy.m_in == -27.0);
    CHECK(c.energy.m_out == m_out);
  }
}
