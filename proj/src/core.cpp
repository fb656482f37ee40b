#include "mgtood/core.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace mgtood {

using json = nlohmann::json;

void warn(std::string_view message) { std::cerr << "warning: " << message << '\n'; }

std::string_view to_string(Kind kind) { return kind == Kind::Machine ? "machine" : "human"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "test";
}

Kind parse_kind(std::string_view text) {
  if (text == "machine") return Kind::Machine;
  if (text == "human") return Kind::Human;
  throw DataError("unknown label '" + std::string(text) + "' (expected machine|human)");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(text) + "' (expected train|val|test)");
}

std::optional<int> Dataset::family_index(std::string_view family) const {
  auto it = std::find(families.begin(), families.end(), family);
  if (it == families.end()) return std::nullopt;
  return static_cast<int>(it - families.begin());
}

std::vector<const Sample*> Dataset::select(Split split, std::optional<Kind> kind) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.split != split) continue;
    if (kind && !(s.label && s.label->kind == *kind)) continue;
    out.push_back(&s);
  }
  return out;
}

void rebuild_vocabulary(Dataset& dataset) {
  for (const auto& s : dataset.samples) {
    if (s.is_machine() && s.label->family && !dataset.family_index(*s.label->family)) {
      dataset.families.push_back(*s.label->family);
    }
  }
}

void validate(const Dataset& dataset, const ValidationOptions& options) {
  if (dataset.samples.empty()) throw DataError("no samples");
  if (dataset.dim <= 0) throw DataError("dataset dimension must be positive");
  std::unordered_set<std::string> ids;
  bool machine_train = false;
  for (const auto& s : dataset.samples) {
    if (!ids.insert(s.id).second) throw DataError("duplicate id '" + s.id + "'");
    if (s.embedding.size() != dataset.dim) {
      throw DataError("dimension mismatch for record '" + s.id + "': expected " +
                      std::to_string(dataset.dim) + ", got " + std::to_string(s.embedding.size()));
    }
    if (!s.embedding.allFinite()) throw DataError("non-finite embedding in record '" + s.id + "'");
    if (!s.label) {
      if (options.require_labels) throw DataError("record '" + s.id + "' has no label");
      continue;
    }
    if (s.label->kind == Kind::Human && s.label->family) {
      throw DataError("human record '" + s.id + "' must not carry a family");
    }
    if (s.label->kind == Kind::Machine) {
      if (!s.label->family) throw DataError("machine record '" + s.id + "' has no family");
      if (!dataset.family_index(*s.label->family)) {
        throw DataError("record '" + s.id + "' has family '" + *s.label->family +
                        "' outside the vocabulary");
      }
      if (s.split == Split::Train) machine_train = true;
    }
  }
  if (options.require_machine_train && !machine_train) {
    throw DataError("dataset has no machine samples in the train split");
  }
}

namespace {

Sample parse_record(const json& j, std::size_t line) {
  auto fail = [line](const std::string& what) {
    return DataError("line " + std::to_string(line) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not a JSON object");
  Sample s;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field 'id'");
  s.id = j["id"].get<std::string>();
  if (!j.contains("embedding") || !j["embedding"].is_array()) {
    throw fail("record '" + s.id + "' is missing array field 'embedding'");
  }
  const auto& arr = j["embedding"];
  s.embedding.resize(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw fail("record '" + s.id + "' has a non-numeric embedding entry");
    s.embedding[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  try {
    if (j.contains("label") && !j["label"].is_null()) {
      Label label;
      label.kind = parse_kind(j["label"].get<std::string>());
      if (j.contains("family") && !j["family"].is_null()) {
        if (!j["family"].is_string()) throw fail("record '" + s.id + "' has a non-string family");
        label.family = j["family"].get<std::string>();
      }
      s.label = std::move(label);
    }
    if (j.contains("split") && !j["split"].is_null()) {
      s.split = parse_split(j["split"].get<std::string>());
    } else {
      s.split = Split::Test;
    }
  } catch (const json::exception& e) {
    throw fail(std::string("record '") + s.id + "': " + e.what());
  } catch (const DataError& e) {
    throw fail(e.what());
  }
  if (j.contains("text") && j["text"].is_string()) s.text = j["text"].get<std::string>();
  return s;
}

}  // namespace

Dataset parse_dataset(std::string_view contents, const ValidationOptions& options) {
  Dataset ds;
  std::optional<int> meta_dim;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (j.is_object() && j.contains("__meta__")) {
      if (!ds.samples.empty() || meta_dim) {
        throw DataError("line " + std::to_string(line_no) + ": meta header must be the first record");
      }
      const auto& m = j["__meta__"];
      if (!m.is_object() || !m.contains("dim") || !m["dim"].is_number_integer() ||
          m["dim"].get<int>() <= 0) {
        throw DataError("line " + std::to_string(line_no) + ": meta header needs a positive 'dim'");
      }
      if (m.contains("version") && m["version"] != 1) {
        throw VersionError("line " + std::to_string(line_no) + ": unsupported meta version " +
                           m["version"].dump());
      }
      meta_dim = m["dim"].get<int>();
      if (m.contains("encoder") && m["encoder"].is_string()) ds.encoder = m["encoder"];
      continue;
    }
    Sample s = parse_record(j, line_no);
    const int dim = meta_dim ? *meta_dim
                    : ds.samples.empty() ? static_cast<int>(s.embedding.size())
                                         : ds.dim;
    if (dim <= 0) throw DataError("line " + std::to_string(line_no) + ": empty embedding");
    if (s.embedding.size() != dim) {
      throw DataError("line " + std::to_string(line_no) + ": dimension mismatch for record '" +
                      s.id + "': expected " + std::to_string(dim) + ", got " +
                      std::to_string(s.embedding.size()));
    }
    ds.dim = dim;
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw DataError("no samples");
  rebuild_vocabulary(ds);
  validate(ds, options);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const ValidationOptions& options) {
  (void)format;  // JSONL is the only format
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), options);
}

std::string serialize_dataset(const Dataset& dataset, bool write_meta) {
  std::ostringstream out;
  if (write_meta) {
    json meta = {{"dim", dataset.dim}, {"version", 1}};
    if (!dataset.encoder.empty()) meta["encoder"] = dataset.encoder;
    out << json{{"__meta__", meta}}.dump() << '\n';
  }
  for (const auto& s : dataset.samples) {
    json j;
    j["id"] = s.id;
    if (s.label) {
      j["label"] = to_string(s.label->kind);
      j["family"] = s.label->family ? json(*s.label->family) : json(nullptr);
    }
    j["split"] = to_string(s.split);
    j["embedding"] = std::vector<double>(s.embedding.data(), s.embedding.data() + s.embedding.size());
    if (s.text) j["text"] = *s.text;
    out << j.dump() << '\n';
  }
  return out.str();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path, bool write_meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  out << serialize_dataset(dataset, write_meta);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm input");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Embedding l2_normalized(const Embedding& v) {
  const double n = v.norm();
  return n > 0.0 ? Embedding(v / n) : v;
}

namespace {

double mean_within(const std::vector<Embedding>& xs, std::size_t& pairs) {
  double sum = 0.0;
  pairs = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      sum += 1.0 - cosine_similarity(xs[i], xs[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

double mean_between(const std::vector<Embedding>& xs, const std::vector<Embedding>& ys,
                    std::size_t& pairs) {
  double sum = 0.0;
  for (const auto& x : xs) {
    for (const auto& y : ys) sum += 1.0 - cosine_similarity(x, y);
  }
  pairs = xs.size() * ys.size();
  return sum / static_cast<double>(pairs);
}

double sampled_within(const std::vector<Embedding>& xs, std::size_t n_pairs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
  double sum = 0.0;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    sum += 1.0 - cosine_similarity(xs[i], xs[j]);
  }
  return sum / static_cast<double>(n_pairs);
}

double sampled_between(const std::vector<Embedding>& xs, const std::vector<Embedding>& ys,
                       std::size_t n_pairs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick_x(0, xs.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_y(0, ys.size() - 1);
  double sum = 0.0;
  for (std::size_t k = 0; k < n_pairs; ++k) sum += 1.0 - cosine_similarity(xs[pick_x(rng)], ys[pick_y(rng)]);
  return sum / static_cast<double>(n_pairs);
}

}  // namespace

DistanceReport intra_inter_distances(const Dataset& dataset, Split split,
                                     const DistanceOptions& options) {
  std::vector<Embedding> machine;
  std::vector<Embedding> human;
  for (const auto* s : dataset.select(split)) {
    if (!s->label) continue;
    Embedding e = options.normalize ? l2_normalized(s->embedding) : s->embedding;
    (s->is_machine() ? machine : human).push_back(std::move(e));
  }
  if (machine.size() < 2 || human.size() < 2) {
    throw DataError("intra_inter_distances: split '" + std::string(to_string(split)) +
                    "' needs at least 2 machine and 2 human samples (have " +
                    std::to_string(machine.size()) + " and " + std::to_string(human.size()) + ")");
  }
  DistanceReport r;
  if (machine.size() <= options.exhaustive_limit && human.size() <= options.exhaustive_limit) {
    r.intra_machine = mean_within(machine, r.pairs_machine);
    r.intra_human = mean_within(human, r.pairs_human);
    r.inter = mean_between(machine, human, r.pairs_inter);
    return r;
  }
  std::mt19937_64 rng(options.seed);
  r.subsampled = true;
  r.pairs_machine = r.pairs_human = r.pairs_inter = options.sampled_pairs;
  r.intra_machine = sampled_within(machine, options.sampled_pairs, rng);
  r.intra_human = sampled_within(human, options.sampled_pairs, rng);
  r.inter = sampled_between(machine, human, options.sampled_pairs, rng);
  return r;
}

}  // namespace mgtood
