#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../support/oracles.hpp"
#include "mgtood/core.hpp"
#include "mgtood/synth.hpp"

using namespace mgtood;

namespace {

const char* kSmall = R"({"__meta__": {"dim": 3, "version": 1, "encoder": "toy"}}
{"id": "a", "label": "machine", "family": "gpt", "split": "train", "embedding": [1, 0, 0]}
{"id": "b", "label": "machine", "family": "llama", "split": "train", "embedding": [0.9, 0.1, 0]}
{"id": "c", "label": "human", "split": "train", "embedding": [0, 1, 0]}
{"id": "d", "label": "human", "split": "val", "embedding": [0, 0, 1], "text": "hello"}
)";

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse a small dataset with a meta header") {
  const Dataset ds = parse_dataset(kSmall);
  CHECK(ds.dim == 3);
  CHECK(ds.encoder == "toy");
  REQUIRE(ds.samples.size() == 4);
  CHECK(ds.families == std::vector<std::string>{"gpt", "llama"});
  CHECK(ds.family_index("llama") == 1);
  CHECK_FALSE(ds.family_index("claude").has_value());
  CHECK(ds.samples[3].text == "hello");
  CHECK(ds.select(Split::Train).size() == 3);
  CHECK(ds.select(Split::Train, Kind::Machine).size() == 2);
  CHECK(ds.select(Split::Val, Kind::Human).size() == 1);
}

TEST_CASE("serialize then parse is the identity") {
  const Dataset ds = parse_dataset(kSmall);
  const Dataset back = parse_dataset(serialize_dataset(ds));
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].id == ds.samples[i].id);
    CHECK(back.samples[i].embedding == ds.samples[i].embedding);
    CHECK(back.samples[i].split == ds.samples[i].split);
    CHECK(back.samples[i].label->kind == ds.samples[i].label->kind);
    CHECK(back.samples[i].label->family == ds.samples[i].label->family);
  }
  CHECK(serialize_dataset(back) == serialize_dataset(ds));
}

TEST_CASE("file round trip keeps doubles exact") {
  SynthSpec spec;
  spec.samples_per_group = 20;
  const Dataset ds = generate(spec);
  const auto path = std::filesystem::temp_directory_path() / "mgtood_core_roundtrip.jsonl";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(back.samples[i].embedding == ds.samples[i].embedding);
  std::filesystem::remove(path);
}

TEST_CASE("dimension mismatch names the record") {
  const std::string bad = R"({"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1, 2]}
{"id": "oops", "label": "human", "embedding": [1, 2, 3]}
)";
  const auto msg = message_of([&] { parse_dataset(bad); });
  CHECK(msg.find("oops") != std::string::npos);
  CHECK(msg.find("line 2") != std::string::npos);
}

TEST_CASE("malformed records are rejected with line numbers") {
  CHECK(message_of([] { parse_dataset("{\"id\": \"a\", \"embedding\": [1]}\nnot json\n"); }).find("line 2") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_dataset(""), DataError);
  CHECK_THROWS_AS(parse_dataset("\n  \n"), DataError);
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "robot", "embedding": [1]})"), DataError);
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "human", "split": "holdout", "embedding": [1]})"), DataError);
  CHECK_THROWS_AS(parse_dataset(R"({"label": "human", "embedding": [1]})"), DataError);
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "human", "embedding": ["x"]})"), DataError);
}

TEST_CASE("meta header rules") {
  CHECK_THROWS_AS(parse_dataset(R"({"__meta__": {"dim": 1, "version": 2}}
{"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1]})"),
                  VersionError);
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1]}
{"__meta__": {"dim": 1}})"),
                  DataError);
  CHECK_THROWS_AS(parse_dataset(R"({"__meta__": {"dim": 2}}
{"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1]})"),
                  DataError);
}

TEST_CASE("dataset invariants") {
  // Duplicate id.
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1]}
{"id": "a", "label": "human", "embedding": [2]})"),
                  DataError);
  // Machine without family.
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "machine", "split": "train", "embedding": [1]})"), DataError);
  // Human with family.
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "machine", "family": "f", "split": "train", "embedding": [1]}
{"id": "b", "label": "human", "family": "f", "embedding": [1]})"),
                  DataError);
  // No machine training data.
  CHECK_THROWS_AS(parse_dataset(R"({"id": "a", "label": "human", "split": "train", "embedding": [1]})"), DataError);
  // Unlabeled records need the lenient options.
  const char* unlabeled = R"({"id": "a", "embedding": [1, 2]})";
  CHECK_THROWS_AS(parse_dataset(unlabeled), DataError);
  const Dataset ds = parse_dataset(unlabeled, {false, false});
  CHECK_FALSE(ds.samples[0].labeled());
  CHECK(ds.samples[0].split == Split::Test);
}

TEST_CASE("non-finite embeddings are rejected") {
  Dataset ds = parse_dataset(kSmall);
  ds.samples[0].embedding[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(validate(ds), DataError);
}

TEST_CASE("cosine similarity") {
  Vec a(2), b(2), c(3);
  a << 1, 0;
  b << 0, 2;
  c << 1, 0, 0;
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, -a) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine_similarity(a, c), ShapeError);
  CHECK_THROWS_AS(cosine_similarity(a, Vec::Zero(2)), NumericError);
  CHECK(l2_normalized(b).norm() == doctest::Approx(1.0));
  CHECK(l2_normalized(Vec::Zero(3)) == Vec::Zero(3));
}

TEST_CASE("distances match a brute-force pair loop") {
  SynthSpec spec;
  spec.samples_per_group = 30;
  spec.seed = 4;
  const Dataset ds = generate(spec);
  const auto r = intra_inter_distances(ds, Split::Train);
  std::vector<Vec> m, h;
  for (const auto* s : ds.select(Split::Train)) (s->is_machine() ? m : h).push_back(s->embedding);
  double sm = 0, sh = 0, si = 0;
  std::size_t nm = 0, nh = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      if (i < j) sm += 1.0 - oracle::cosine(m[i], m[j]), ++nm;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j)
      if (i < j) sh += 1.0 - oracle::cosine(h[i], h[j]), ++nh;
  for (const auto& x : m)
    for (const auto& y : h) si += 1.0 - oracle::cosine(x, y);
  CHECK(r.pairs_machine == nm);
  CHECK(r.pairs_human == nh);
  CHECK(r.pairs_inter == m.size() * h.size());
  CHECK(r.intra_machine == doctest::Approx(sm / nm).epsilon(1e-12));
  CHECK(r.intra_human == doctest::Approx(sh / nh).epsilon(1e-12));
  CHECK(r.inter == doctest::Approx(si / (m.size() * h.size())).epsilon(1e-12));
  CHECK_FALSE(r.subsampled);
}

TEST_CASE("distances are scale invariant and normalization does not change them") {
  SynthSpec spec;
  spec.samples_per_group = 20;
  Dataset ds = generate(spec);
  const auto raw = intra_inter_distances(ds, Split::Train);
  const auto normalized = intra_inter_distances(ds, Split::Train, {.normalize = true});
  CHECK(raw.inter == doctest::Approx(normalized.inter).epsilon(1e-12));
  for (auto& s : ds.samples) s.embedding *= 7.5;
  CHECK(intra_inter_distances(ds, Split::Train).intra_human == doctest::Approx(raw.intra_human).epsilon(1e-12));
}

TEST_CASE("subsampled distances approximate the exhaustive ones and are seeded") {
  SynthSpec spec;
  spec.samples_per_group = 60;
  const Dataset ds = generate(spec);
  const auto exact = intra_inter_distances(ds, Split::Train);
  DistanceOptions opts;
  opts.exhaustive_limit = 10;
  opts.sampled_pairs = 20000;
  opts.seed = 3;
  const auto a = intra_inter_distances(ds, Split::Train, opts);
  const auto b = intra_inter_distances(ds, Split::Train, opts);
  CHECK(a.subsampled);
  CHECK(a.inter == b.inter);
  CHECK(a.inter == doctest::Approx(exact.inter).epsilon(0.03));
  CHECK(a.intra_machine == doctest::Approx(exact.intra_machine).epsilon(0.05));
}

TEST_CASE("distances need two samples per class") {
  const Dataset ds = parse_dataset(kSmall);
  CHECK_THROWS_AS(intra_inter_distances(ds, Split::Val), DataError);
}

TEST_CASE("enum parsing") {
  CHECK(parse_kind("machine") == Kind::Machine);
  CHECK(parse_split("val") == Split::Val);
  CHECK(to_string(Split::Test) == "test");
  CHECK_THROWS(parse_kind("robot"));
}
