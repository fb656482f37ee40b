#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "mgtood/metrics.hpp"

using namespace mgtood;

namespace {

std::vector<ScoredSample> make(std::initializer_list<std::pair<double, Kind>> items) {
  std::vector<ScoredSample> s;
  int i = 0;
  for (const auto& [score, kind] : items) s.push_back({"x" + std::to_string(i++), kind, score});
  return s;
}

constexpr Kind H = Kind::Human;
constexpr Kind M = Kind::Machine;

}  // namespace

TEST_CASE("perfect separation") {
  const auto s = make({{0.9, H}, {0.8, H}, {0.2, M}, {0.1, M}});
  CHECK(auroc(s) == 1.0);
  CHECK(aupr(s) == 1.0);
  CHECK(fpr_at_tpr(s) == 0.0);
}

TEST_CASE("fully inverted ranking") {
  const auto s = make({{0.1, H}, {0.2, H}, {0.8, M}, {0.9, M}});
  CHECK(auroc(s) == 0.0);
  CHECK(fpr_at_tpr(s) == 1.0);
}

TEST_CASE("all scores tied gives AUROC one half") {
  const auto s = make({{1.0, H}, {1.0, M}, {1.0, H}, {1.0, M}, {1.0, M}});
  CHECK(auroc(s) == 0.5);
  // One threshold: precision 2/5 over the whole recall range.
  CHECK(aupr(s) == doctest::Approx(0.4));
  CHECK(fpr_at_tpr(s) == 1.0);
}

TEST_CASE("hand-computed mixed example") {
  // Humans 0.9, 0.4; machines 0.6, 0.1. Pairs won: (0.9>0.6, 0.9>0.1, 0.4>0.1) = 3 of 4.
  const auto s = make({{0.9, H}, {0.4, H}, {0.6, M}, {0.1, M}});
  CHECK(auroc(s) == 0.75);
  // Steps: t=0.9 recall 1/2 precision 1; t=0.4 recall 1 precision 2/3.
  CHECK(aupr(s) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
  // 95% TPR needs both humans, so t = 0.4 admits the 0.6 machine.
  CHECK(fpr_at_tpr(s) == 0.5);
}

TEST_CASE("metrics need both classes") {
  const auto only_h = make({{0.1, H}, {0.2, H}});
  CHECK_THROWS_AS(auroc(only_h), DataError);
  CHECK_THROWS_AS(fpr_at_tpr(only_h), DataError);
  const auto only_m = make({{0.1, M}});
  CHECK_THROWS_AS(aupr(only_m), DataError);
}

TEST_CASE("non-finite score is rejected") {
  const auto s = make({{std::nan(""), H}, {0.2, M}});
  CHECK_THROWS_AS(auroc(s), NumericError);
}

TEST_CASE("metrics agree exactly with brute-force oracles") {
  std::mt19937_64 rng(20240);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = oracle::random_scores(rng, 120, trial % 2 == 0);
    CAPTURE(trial);
    CHECK(auroc(s) == oracle::brute_auroc(s));
    CHECK(aupr(s) == oracle::brute_aupr(s));
    CHECK(fpr_at_tpr(s, 0.95) == oracle::brute_fpr_at_tpr(s, 0.95));
  }
}

TEST_CASE("AUROC is invariant to strictly increasing transforms") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = oracle::random_scores(rng, 80, trial % 3 == 0);
    const double before = auroc(s);
    for (auto& x : s) x.score = std::exp(0.5 * x.score) + 3.0;
    CHECK(auroc(s) == before);
  }
}

TEST_CASE("AUROC flips under score negation") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = oracle::random_scores(rng, 80, trial % 2 == 0);
    const double before = auroc(s);
    for (auto& x : s) x.score = -x.score;
    CHECK(auroc(s) == doctest::Approx(1.0 - before).epsilon(1e-12));
  }
}

TEST_CASE("accuracy and F1 at a threshold match direct counting") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3.5, 3.5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_scores(rng, 100, trial % 2 == 0);
    const double t = trial % 4 == 0 ? s[trial % s.size()].score : u(rng);
    const auto got = accuracy_f1(s, t);
    const auto c = oracle::count_at(s, t, false);
    CHECK(got.accuracy == oracle::accuracy_of(c));
    CHECK(got.f1 == oracle::f1_of(c));
  }
}

TEST_CASE("score equal to threshold is classified machine") {
  const auto s = make({{0.5, H}, {0.5, M}});
  const auto r = accuracy_f1(s, 0.5);
  CHECK(r.accuracy == 0.5);
  CHECK(r.f1 == 0.0);
}

TEST_CASE("TPR95 calibration reaches the target with the fewest false positives") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_scores(rng, 100, trial % 2 == 0);
    const double t = calibrate_threshold(s, ThresholdPolicy::TPR95);
    const auto c = oracle::count_at(s, t, false);
    const std::uint64_t np = oracle::positives(s);
    CHECK(static_cast<double>(c.tp) >= 0.95 * static_cast<double>(np) - 1e-9);
    // Same operating point as FPR95.
    CHECK(static_cast<double>(c.fp) / static_cast<double>(s.size() - np) == fpr_at_tpr(s, 0.95));
  }
}

TEST_CASE("MaxF1 calibration matches exhaustive sweep") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_scores(rng, 100, trial % 2 == 0);
    CHECK(calibrate_threshold(s, ThresholdPolicy::MaxF1) == oracle::brute_maxf1_threshold(s));
  }
}

TEST_CASE("policy parsing") {
  CHECK(parse_policy("tpr95") == ThresholdPolicy::TPR95);
  CHECK(parse_policy("maxf1") == ThresholdPolicy::MaxF1);
  CHECK_THROWS_AS(parse_policy("youden"), ConfigError);
}

TEST_CASE("evaluate fills optional fields only with a threshold") {
  const auto s = make({{0.9, H}, {0.4, H}, {0.6, M}, {0.1, M}});
  const auto plain = evaluate(s);
  CHECK_FALSE(plain.accuracy.has_value());
  CHECK(plain.n_pos == 2);
  CHECK(plain.n_neg == 2);
  const auto with_t = evaluate(s, 0.5);
  REQUIRE(with_t.accuracy.has_value());
  CHECK(*with_t.accuracy == 0.5);
  CHECK(*with_t.threshold_used == 0.5);
  const auto j = report_to_json(with_t);
  CHECK(j["auroc"] == 0.75);
  CHECK(j["threshold_used"] == 0.5);
  CHECK(report_to_json(plain)["f1"].is_null());
}

TEST_CASE("table shows percentages") {
  const auto s = make({{0.9, H}, {0.4, H}, {0.6, M}, {0.1, M}});
  const std::string t = render_table(evaluate(s), "dsvdd");
  CHECK(t.find("75.00") != std::string::npos);
  CHECK(t.find("AUROC") != std::string::npos);
}
