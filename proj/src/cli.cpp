#include "mgtood/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mgtood/embed_client.hpp"
#include "mgtood/metrics.hpp"
#include "mgtood/synth.hpp"
#include "mgtood/theory.hpp"

namespace mgtood::cli {

using json = nlohmann::json;

json default_config() {
  json c = hyper_to_json(TrainConfig{});
  c["method"] = "dsvdd";
  c["data"] = nullptr;
  c["out"] = nullptr;
  c["log"] = nullptr;
  return c;
}

json merge_config(json base, const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : overrides.items()) {
    if (!base.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    base[key] = value;
  }
  return base;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("adam_beta1").get<double>();
    c.beta2 = j.at("adam_beta2").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.weights.alpha = j.at("alpha").get<double>();
    c.weights.beta = j.at("beta").get<double>();
    c.temperature = j.at("temperature").get<double>();
    const auto mode = j.at("contrastive_mode").get<std::string>();
    if (mode == "mean_inside_exp") c.contrastive_mode = ContrastiveMode::MeanInsideExp;
    else if (mode == "per_positive") c.contrastive_mode = ContrastiveMode::PerPositive;
    else throw ConfigError("unknown contrastive_mode '" + mode + "'");
    c.human_contrastive_group = j.at("human_contrastive_group").get<bool>();
    c.hrn.lambda = j.at("hrn_lambda").get<double>();
    c.hrn.n = j.at("hrn_n").get<int>();
    const auto agg = j.at("hrn_aggregation").get<std::string>();
    if (agg == "mean") c.hrn_aggregation = HrnAggregation::Mean;
    else if (agg == "max") c.hrn_aggregation = HrnAggregation::Max;
    else throw ConfigError("unknown hrn_aggregation '" + agg + "'");
    c.energy.lambda = j.at("energy_lambda").get<double>();
    c.energy.m_in = j.at("m_in").get<double>();
    c.energy.m_out = j.at("m_out").get<double>();
    c.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    c.out_dim = j.at("out_dim").get<int>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.center_guard = j.at("center_guard").get<double>();
    c.early_stopping = j.at("early_stopping").get<bool>();
    c.patience = j.at("patience").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  validate(c);
  return c;
}

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void emit(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << j.dump(2) << '\n';
}

std::vector<ScoredSample> score_split(const Detector& d, const Dataset& ds, std::optional<Split> split) {
  std::vector<ScoredSample> scored;
  for (const auto& s : ds.samples) {
    if (split && s.split != *split) continue;
    if (!s.labeled()) throw DataError("sample '" + s.id + "' has no label; evaluation needs labels");
    scored.push_back({s.id, s.label->kind, d.score(s)});
  }
  return scored;
}

std::optional<Split> split_option(const std::string& text) {
  if (text == "all") return std::nullopt;
  try {
    return parse_split(text);
  } catch (const Error&) {
    throw ConfigError("unknown split '" + text + "' (expected train|val|test|all)");
  }
}

ValidationOptions lenient() { return {false, false}; }

// Shared state for one invocation; options bind into these fields.
struct Args {
  bool no_timestamp = false;

  // train
  std::string config_path;
  std::string method, data, out, log;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, hrn_n = 0, out_dim = 0, patience = 0;
  double lr = 0, alpha = 0, beta = 0, temperature = 0, hrn_lambda = 0, m_in = 0, m_out = 0, energy_lambda = 0,
         center_guard = 0;
  std::vector<int> hidden_dims;
  std::string activation, contrastive_mode, hrn_aggregation;
  bool no_early_stopping = false;

  // score / eval / calibrate / distances
  // Separate per command: CLI11 writes default_val into the bound variable
  // at definition time.
  std::string checkpoint, scores, policy;
  std::string score_split = "all", eval_split = "test", calibrate_split = "val", distances_split = "train";
  std::string calibrate_policy = "tpr95";
  double threshold = 0.0;
  bool normalize = false;

  // synth
  SynthSpec synth;

  // theory
  std::string instance;
  std::uint64_t theory_seed = 0;
  double delta0 = 0.05;
  double delta = 0.01;

  // embed
  std::string input, endpoint, model, token;
  int fallback_dim = 256;
  int retries = 3;
  double timeout = 30.0;
  std::size_t max_batch = 64;
};

int cmd_train(const Args& a, CLI::App& sub, std::ostream& out, std::ostream& err) {
  json cfg = default_config();
  if (!a.config_path.empty()) cfg = merge_config(cfg, read_json_file(a.config_path));
  auto given = [&](const char* flag) { return sub.get_option(flag)->count() > 0; };
  if (given("--method")) cfg["method"] = a.method;
  if (given("--data")) cfg["data"] = a.data;
  if (given("--out")) cfg["out"] = a.out;
  if (given("--log")) cfg["log"] = a.log;
  if (given("--seed")) cfg["seed"] = a.seed;
  if (given("--epochs")) cfg["epochs"] = a.epochs;
  if (given("--batch-size")) cfg["batch_size"] = a.batch_size;
  if (given("--lr")) cfg["learning_rate"] = a.lr;
  if (given("--alpha")) cfg["alpha"] = a.alpha;
  if (given("--beta")) cfg["beta"] = a.beta;
  if (given("--temperature")) cfg["temperature"] = a.temperature;
  if (given("--hrn-lambda")) cfg["hrn_lambda"] = a.hrn_lambda;
  if (given("--hrn-n")) cfg["hrn_n"] = a.hrn_n;
  if (given("--hrn-aggregation")) cfg["hrn_aggregation"] = a.hrn_aggregation;
  if (given("--m-in")) cfg["m_in"] = a.m_in;
  if (given("--m-out")) cfg["m_out"] = a.m_out;
  if (given("--energy-lambda")) cfg["energy_lambda"] = a.energy_lambda;
  if (given("--hidden-dims")) cfg["hidden_dims"] = a.hidden_dims;
  if (given("--out-dim")) cfg["out_dim"] = a.out_dim;
  if (given("--activation")) cfg["activation"] = a.activation;
  if (given("--contrastive-mode")) cfg["contrastive_mode"] = a.contrastive_mode;
  if (given("--center-guard")) cfg["center_guard"] = a.center_guard;
  if (given("--patience")) cfg["patience"] = a.patience;
  if (a.no_early_stopping) cfg["early_stopping"] = false;

  if (!cfg["data"].is_string()) throw ConfigError("train: a dataset path is required (--data)");
  if (!cfg["out"].is_string()) throw ConfigError("train: a checkpoint path is required (--out)");
  const std::string data_path = cfg["data"];
  if (!std::filesystem::exists(data_path)) throw ConfigError("train: dataset '" + data_path + "' does not exist");
  Method method;
  try {
    method = parse_method(cfg["method"].get<std::string>());
  } catch (const json::exception&) {
    throw ConfigError("train: method must be a string");
  }
  const TrainConfig tc = train_config_from_json(cfg);

  const Dataset ds = load_dataset(data_path);
  auto result = train(method, ds, tc);
  save_detector(*result.detector, cfg["out"].get<std::string>());

  for (const auto& e : result.log.epochs) {
    err << "epoch " << e.epoch << " total " << e.total << " ood " << e.ood << " contrastive " << e.contrastive;
    if (e.val_auroc) err << " val_auroc " << *e.val_auroc;
    err << '\n';
  }
  json log = {{"config", cfg}, {"log", log_to_json(result.log)}};
  if (!a.no_timestamp) log["timestamp"] = timestamp_now();
  const std::string log_path = cfg["log"].is_string() ? cfg["log"].get<std::string>() : cfg["out"].get<std::string>() + ".log.json";
  emit(log, log_path, out);
  return kOk;
}

int cmd_score(const Args& a, CLI::App& sub, std::ostream& out) {
  const auto detector = load_detector(a.checkpoint);
  const Dataset ds = load_dataset(a.data, DatasetFormat::Jsonl, lenient());
  const auto split = split_option(a.score_split);
  const bool decide = sub.get_option("--threshold")->count() > 0;

  std::ofstream file;
  if (!a.out.empty() && a.out != "-") {
    file.open(a.out);
    if (!file) throw DataError("cannot write '" + a.out + "'");
  }
  std::ostream& sink = file.is_open() ? static_cast<std::ostream&>(file) : out;
  for (const auto& s : ds.samples) {
    if (split && s.split != *split) continue;
    json rec = {{"id", s.id}, {"score", detector->score(s)}};
    if (s.labeled()) rec["label"] = to_string(s.label->kind);
    if (decide) rec["decision"] = to_string(classify(*detector, s.embedding, a.threshold));
    sink << rec.dump() << '\n';
  }
  return kOk;
}

std::vector<ScoredSample> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scores '" + path + "'");
  std::vector<ScoredSample> scored;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.contains("label")) throw DataError("scores line " + std::to_string(line_no) + " has no label");
      scored.push_back({j.at("id").get<std::string>(), parse_kind(j.at("label").get<std::string>()),
                        j.at("score").get<double>()});
    } catch (const json::exception& e) {
      throw DataError("scores line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scored;
}

int cmd_eval(const Args& a, CLI::App& sub, std::ostream& out, std::ostream& err) {
  const bool have_threshold = sub.get_option("--threshold")->count() > 0;
  const bool have_policy = sub.get_option("--policy")->count() > 0;
  if (have_threshold && have_policy) throw ConfigError("eval: --threshold and --policy are exclusive");

  std::vector<ScoredSample> scored;
  std::optional<double> threshold;
  json provenance;
  std::string name = "scores";
  if (!a.scores.empty()) {
    if (!a.checkpoint.empty() || !a.data.empty()) throw ConfigError("eval: give either --scores or --checkpoint/--data");
    scored = read_scores(a.scores);
    if (have_policy) threshold = calibrate_threshold(scored, parse_policy(a.policy));
  } else {
    if (a.checkpoint.empty() || a.data.empty()) throw ConfigError("eval: --checkpoint and --data are required without --scores");
    const auto detector = load_detector(a.checkpoint);
    const Dataset ds = load_dataset(a.data, DatasetFormat::Jsonl, lenient());
    scored = score_split(*detector, ds, split_option(a.eval_split));
    if (have_policy) threshold = calibrate_threshold(score_split(*detector, ds, Split::Val), parse_policy(a.policy));
    else threshold = detector->threshold;
    provenance = detector->hyper;
    name = std::string(to_string(detector->method()));
  }
  if (have_threshold) threshold = a.threshold;

  const EvalReport report = evaluate(scored, threshold);
  json j = report_to_json(report);
  if (!provenance.is_null()) j["config"] = provenance;
  j["split"] = a.scores.empty() ? a.eval_split : "scores";
  if (have_policy) j["policy"] = a.policy;
  if (!a.no_timestamp) j["timestamp"] = timestamp_now();
  emit(j, a.out, out);
  err << render_table(report, name);
  return kOk;
}

int cmd_calibrate(const Args& a, std::ostream& out) {
  auto detector = load_detector(a.checkpoint);
  const Dataset ds = load_dataset(a.data, DatasetFormat::Jsonl, lenient());
  const auto scored = score_split(*detector, ds, split_option(a.calibrate_split));
  const double t = calibrate_threshold(scored, parse_policy(a.calibrate_policy));
  detector->threshold = t;
  save_detector(*detector, a.out.empty() ? a.checkpoint : a.out);
  json j = {{"threshold", t}, {"policy", a.calibrate_policy}, {"split", a.calibrate_split}};
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_distances(const Args& a, std::ostream& out) {
  const Dataset ds = load_dataset(a.data, DatasetFormat::Jsonl, {true, false});
  const auto split = split_option(a.distances_split);
  if (!split) throw ConfigError("distances: choose one split");
  DistanceOptions opts;
  opts.normalize = a.normalize;
  opts.seed = a.seed;
  const auto r = intra_inter_distances(ds, *split, opts);
  json j = {{"intra_machine", r.intra_machine}, {"intra_human", r.intra_human}, {"inter", r.inter},
            {"pairs_machine", r.pairs_machine}, {"pairs_human", r.pairs_human}, {"pairs_inter", r.pairs_inter},
            {"subsampled", r.subsampled}, {"split", a.distances_split}};
  emit(j, a.out, out);
  return kOk;
}

int cmd_synth(const Args& a, std::ostream& out) {
  const Dataset ds = generate(a.synth);
  if (a.out.empty() || a.out == "-") {
    out << serialize_dataset(ds);
  } else {
    save_dataset(ds, a.out);
  }
  return kOk;
}

std::vector<bool> region_from_json(const json& j, std::size_t n) {
  std::vector<bool> region(n, false);
  if (!j.is_array()) throw DataError("X0 must be an array");
  const bool as_mask = !j.empty() && j.front().is_boolean();
  if (as_mask) {
    if (j.size() != n) throw ShapeError("X0 mask has the wrong length");
    for (std::size_t i = 0; i < n; ++i) region[i] = j[i].get<bool>();
  } else {
    for (const auto& v : j) {
      const auto idx = v.get<long long>();
      if (idx < 0 || static_cast<std::size_t>(idx) >= n) throw DataError("X0 index out of range");
      region[static_cast<std::size_t>(idx)] = true;
    }
  }
  return region;
}

json theory_thm1(const Args& a, CLI::App& sub) {
  using namespace theory;
  double delta0 = a.delta0;
  if (a.instance.empty()) {
    const auto inst = random_theorem1_instance(a.theory_seed);
    return to_json(verify_theorem1(inst.D, inst.D_hat, inst.truth, delta0));
  }
  const json j = read_json_file(a.instance);
  try {
    if (j.contains("delta0") && sub.get_option("--delta0")->count() == 0) delta0 = j["delta0"].get<double>();
    const double q_M = j.at("q_M").get<double>();
    const auto P_M = DiscreteDistribution::from(j.at("P_M").get<std::vector<double>>());
    const auto P_hat_H = DiscreteDistribution::from(j.at("P_hat_H").get<std::vector<double>>());
    DiscreteDistribution P_H;
    if (j.contains("X0")) {
      P_H = shifted_biased(P_hat_H, region_from_json(j["X0"], P_hat_H.size()), j.at("C1").get<double>()).P_H;
    } else {
      P_H = DiscreteDistribution::from(j.at("P_H").get<std::vector<double>>());
    }
    if (P_H.size() != P_M.size()) throw ShapeError("P_M and P_H sizes differ");
    DiscreteDistribution P_hat_M;
    if (j.contains("P_hat_M")) {
      P_hat_M = DiscreteDistribution::from(j["P_hat_M"].get<std::vector<double>>());
    } else {
      // Consistency with a shared labeling forces P_hat_M = P_M P_hat_H / P_H.
      std::vector<double> v(P_M.size());
      for (std::size_t x = 0; x < v.size(); ++x) v[x] = P_H[x] > 0.0 ? P_M[x] * P_hat_H[x] / P_H[x] : 0.0;
      P_hat_M = DiscreteDistribution::from(v);
    }
    const auto D = LabeledDataDistribution::from(q_M, P_M, P_H);
    const auto D_hat = LabeledDataDistribution::from(q_M, P_hat_M, P_hat_H);
    GroundTruth truth{j.contains("p_hat_M") ? j["p_hat_M"].get<std::vector<double>>() : D.posterior_machine()};
    return to_json(verify_theorem1(D, D_hat, truth, delta0));
  } catch (const json::exception& e) {
    throw DataError(std::string("theory instance: ") + e.what());
  }
}

json theory_thm2(const Args& a, CLI::App& sub) {
  using namespace theory;
  double delta = a.delta;
  if (a.instance.empty()) {
    const auto inst = random_theorem2_instance(a.theory_seed);
    return to_json(verify_theorem2(inst.D, inst.D_hat_text, delta));
  }
  const json j = read_json_file(a.instance);
  try {
    if (j.contains("delta") && sub.get_option("--delta")->count() == 0) delta = j["delta"].get<double>();
    const auto D = distribution_from_json(j, "P_M", "P_H");
    const auto text = DiscreteDistribution::from(j.at("P_hat_D").get<std::vector<double>>());
    return to_json(verify_theorem2(D, text, delta));
  } catch (const json::exception& e) {
    throw DataError(std::string("theory instance: ") + e.what());
  }
}

json theory_chi2(const Args& a) {
  using namespace theory;
  if (a.instance.empty()) throw ConfigError("chi2: --instance is required");
  const json j = read_json_file(a.instance);
  try {
    const double v = pearson_chi2(DiscreteDistribution::from(j.at("P1").get<std::vector<double>>()),
                                  DiscreteDistribution::from(j.at("P2").get<std::vector<double>>()));
    return {{"chi2", std::isfinite(v) ? json(v) : json(nullptr)}, {"infinite", !std::isfinite(v)}};
  } catch (const json::exception& e) {
    throw DataError(std::string("theory instance: ") + e.what());
  }
}

json theory_kwality(const Args& a) {
  using namespace theory;
  if (a.instance.empty()) throw ConfigError("kwality: --instance is required");
  const json j = read_json_file(a.instance);
  try {
    const auto D = distribution_from_json(j, "P_M", "P_H");
    const GroundTruth truth{j.at("p_hat_M").get<std::vector<double>>()};
    return {{"kwality", kwality(D, truth)}, {"consistency_residual", consistency_residual(D, truth)}};
  } catch (const json::exception& e) {
    throw DataError(std::string("theory instance: ") + e.what());
  }
}

int cmd_embed(const Args& a, CLI::App& sub, std::ostream& out) {
  std::ifstream in(a.input);
  if (!in) throw ConfigError("embed: cannot read '" + a.input + "'");
  std::vector<json> records;
  std::vector<std::string> texts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("embed: line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw DataError("embed: line " + std::to_string(line_no) + " lacks a string 'text'");
    }
    if (!j.contains("id")) j["id"] = "t" + std::to_string(records.size());
    texts.push_back(j["text"].get<std::string>());
    records.push_back(std::move(j));
  }
  if (records.empty()) throw DataError("embed: no texts in '" + a.input + "'");

  const char* env = std::getenv(kEmbedEndpointEnv);
  const bool remote = sub.get_option("--endpoint")->count() > 0 || (env && *env);
  std::vector<Embedding> embeddings;
  std::string encoder;
  if (remote) {
    EmbedClientOptions opts;
    opts.retries = a.retries;
    opts.timeout_seconds = a.timeout;
    opts.max_batch_size = a.max_batch;
    if (!a.token.empty()) opts.bearer_token = a.token;
    EmbedRequest req{texts, a.model.empty() ? std::nullopt : std::optional<std::string>(a.model)};
    auto resp = embed_remote(a.endpoint, req, opts);
    embeddings = std::move(resp.embeddings);
    encoder = resp.model;
  } else {
    embeddings = embed_fallback(texts, a.fallback_dim, a.seed);
    encoder = "fallback-hash3-" + std::to_string(a.fallback_dim);
  }

  std::ostringstream body;
  body << json{{"__meta__", {{"dim", embeddings.front().size()}, {"version", 1}, {"encoder", encoder}}}}.dump() << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    json rec = records[i];
    rec["embedding"] = std::vector<double>(embeddings[i].data(), embeddings[i].data() + embeddings[i].size());
    body << rec.dump() << '\n';
  }
  // Round-trip through the loader so malformed labels surface here.
  parse_dataset(body.str(), lenient());
  if (a.out.empty() || a.out == "-") {
    out << body.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw DataError("cannot write '" + a.out + "'");
    f << body.str();
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Args a;
  CLI::App app{"Machine-generated text detection as out-of-distribution detection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--no-timestamp", a.no_timestamp, "Omit timestamps from reports");

  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("--config", a.config_path, "Flat JSON config; flags override it")->check(CLI::ExistingFile);
  train_cmd->add_option("--method", a.method, "dsvdd | hrn | energy | bce");
  train_cmd->add_option("--data", a.data, "Embedding JSONL dataset");
  train_cmd->add_option("--out", a.out, "Checkpoint path");
  train_cmd->add_option("--log", a.log, "Training log path (default <out>.log.json)");
  train_cmd->add_option("--seed", a.seed);
  train_cmd->add_option("--epochs", a.epochs);
  train_cmd->add_option("--batch-size", a.batch_size);
  train_cmd->add_option("--lr", a.lr);
  train_cmd->add_option("--alpha", a.alpha, "OOD loss weight");
  train_cmd->add_option("--beta", a.beta, "Contrastive loss weight");
  train_cmd->add_option("--temperature", a.temperature);
  train_cmd->add_option("--hrn-lambda", a.hrn_lambda);
  train_cmd->add_option("--hrn-n", a.hrn_n);
  train_cmd->add_option("--hrn-aggregation", a.hrn_aggregation, "mean | max");
  train_cmd->add_option("--m-in", a.m_in);
  train_cmd->add_option("--m-out", a.m_out);
  train_cmd->add_option("--energy-lambda", a.energy_lambda);
  train_cmd->add_option("--hidden-dims", a.hidden_dims);
  train_cmd->add_option("--out-dim", a.out_dim);
  train_cmd->add_option("--activation", a.activation, "tanh | relu | identity");
  train_cmd->add_option("--contrastive-mode", a.contrastive_mode, "mean_inside_exp | per_positive");
  train_cmd->add_option("--center-guard", a.center_guard);
  train_cmd->add_option("--patience", a.patience);
  train_cmd->add_flag("--no-early-stopping", a.no_early_stopping);

  auto* score_cmd = app.add_subcommand("score", "Score a dataset with a checkpoint (JSONL out)");
  score_cmd->add_option("--checkpoint", a.checkpoint)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--data", a.data)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", a.out, "Output JSONL (default stdout)");
  score_cmd->add_option("--split", a.score_split, "train | val | test | all")->capture_default_str();
  score_cmd->add_option("--threshold", a.threshold, "Emit Human/Machine decisions");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate scores or a checkpoint on labeled data");
  eval_cmd->add_option("--scores", a.scores, "Labeled scores JSONL from `score`")->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", a.checkpoint)->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", a.data)->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", a.eval_split, "train | val | test | all")->capture_default_str();
  eval_cmd->add_option("--threshold", a.threshold);
  eval_cmd->add_option("--policy", a.policy, "tpr95 | maxf1 (calibrated on val, or on the scores file)");
  eval_cmd->add_option("--out", a.out, "Report JSON path (default stdout)");

  auto* cal_cmd = app.add_subcommand("calibrate", "Store a decision threshold in a checkpoint");
  cal_cmd->add_option("--checkpoint", a.checkpoint)->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--data", a.data)->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--split", a.calibrate_split)->capture_default_str();
  cal_cmd->add_option("--policy", a.calibrate_policy, "tpr95 | maxf1")->capture_default_str();
  cal_cmd->add_option("--out", a.out, "Checkpoint to write (default: overwrite input)");

  auto* dist_cmd = app.add_subcommand("distances", "Intra/inter class cosine distances");
  dist_cmd->add_option("--data", a.data)->required()->check(CLI::ExistingFile);
  dist_cmd->add_option("--split", a.distances_split)->capture_default_str();
  dist_cmd->add_flag("--normalize", a.normalize, "L2-normalize embeddings first");
  dist_cmd->add_option("--seed", a.seed, "Pair subsampling seed");
  dist_cmd->add_option("--out", a.out);

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic embedding dataset");
  synth_cmd->add_option("--out", a.out, "Output JSONL (default stdout)");
  synth_cmd->add_option("--dim", a.synth.dim)->capture_default_str();
  synth_cmd->add_option("--families", a.synth.n_families)->capture_default_str();
  synth_cmd->add_option("--machine-sigma", a.synth.machine_sigma)->capture_default_str();
  synth_cmd->add_option("--human-modes", a.synth.n_human_modes)->capture_default_str();
  synth_cmd->add_option("--human-sigma", a.synth.human_sigma)->capture_default_str();
  synth_cmd->add_option("--samples-per-group", a.synth.samples_per_group)->capture_default_str();
  synth_cmd->add_option("--separation", a.synth.mode_separation)->capture_default_str();
  synth_cmd->add_option("--unseen-test-human-modes", a.synth.unseen_test_human_modes)->capture_default_str();
  synth_cmd->add_option("--seed", a.synth.seed)->capture_default_str();

  auto* theory_cmd = app.add_subcommand("theory", "Finite-space checks of the generalization results");
  theory_cmd->require_subcommand(1);
  auto add_instance = [&](CLI::App* c) {
    c->add_option("--instance", a.instance, "Instance JSON")->check(CLI::ExistingFile);
    c->add_option("--out", a.out);
  };
  auto* thm1 = theory_cmd->add_subcommand("verify-thm1", "Suboptimality amplification under a biased human corpus");
  add_instance(thm1);
  thm1->add_option("--seed", a.theory_seed, "Random instance seed (when no --instance)");
  thm1->add_option("--delta0", a.delta0)->capture_default_str();
  auto* thm2 = theory_cmd->add_subcommand("verify-thm2", "Label-defect amplification");
  add_instance(thm2);
  thm2->add_option("--seed", a.theory_seed, "Random instance seed (when no --instance)");
  thm2->add_option("--delta", a.delta)->capture_default_str();
  auto* chi2 = theory_cmd->add_subcommand("chi2", "Pearson chi-squared divergence of {P1, P2}");
  add_instance(chi2);
  auto* kw = theory_cmd->add_subcommand("kwality", "Expected KL between labels and the dataset posterior");
  add_instance(kw);

  auto* embed_cmd = app.add_subcommand("embed", "Embed texts (remote service or hashing fallback)");
  embed_cmd->add_option("--input", a.input, "JSONL with 'text' and optional id/label/family/split")->required();
  embed_cmd->add_option("--out", a.out, "Dataset JSONL (default stdout)");
  embed_cmd->add_option("--endpoint", a.endpoint, std::string("Service base URL (or $") + kEmbedEndpointEnv + ")");
  embed_cmd->add_option("--model", a.model);
  embed_cmd->add_option("--token", a.token, "Bearer token");
  embed_cmd->add_option("--retries", a.retries)->capture_default_str();
  embed_cmd->add_option("--timeout", a.timeout, "Seconds per request")->capture_default_str();
  embed_cmd->add_option("--batch-size", a.max_batch)->capture_default_str();
  embed_cmd->add_option("--dim", a.fallback_dim, "Fallback embedding width")->capture_default_str();
  embed_cmd->add_option("--seed", a.seed, "Fallback hash seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(a, *train_cmd, out, err);
    if (*score_cmd) return cmd_score(a, *score_cmd, out);
    if (*eval_cmd) return cmd_eval(a, *eval_cmd, out, err);
    if (*cal_cmd) return cmd_calibrate(a, out);
    if (*dist_cmd) return cmd_distances(a, out);
    if (*synth_cmd) return cmd_synth(a, out);
    if (*embed_cmd) return cmd_embed(a, *embed_cmd, out);
    if (*theory_cmd) {
      json report;
      if (*thm1) report = theory_thm1(a, *thm1);
      else if (*thm2) report = theory_thm2(a, *thm2);
      else if (*chi2) report = theory_chi2(a);
      else report = theory_kwality(a);
      emit(report, a.out, out);
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace mgtood::cli
