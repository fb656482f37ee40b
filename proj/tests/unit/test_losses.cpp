#include <doctest.h>

#include <random>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "mgtood/losses.hpp"

using namespace mgtood;

namespace {

// Direct-formula contrastive value for one query.
double contrastive_direct(const Vec& q, const std::vector<Vec>& pos, const std::vector<Vec>& neg, double tau,
                          ContrastiveMode mode) {
  double neg_sum = 0.0;
  for (const auto& n : neg) neg_sum += std::exp(oracle::cosine(q, n) / tau);
  if (mode == ContrastiveMode::MeanInsideExp) {
    double mean = 0.0;
    for (const auto& p : pos) mean += oracle::cosine(q, p);
    mean /= static_cast<double>(pos.size());
    const double e = std::exp(mean / tau);
    return -std::log(e / (e + neg_sum));
  }
  double total = 0.0;
  for (const auto& p : pos) {
    const double e = std::exp(oracle::cosine(q, p) / tau);
    total += -std::log(e / (e + neg_sum));
  }
  return total / static_cast<double>(pos.size());
}

}  // namespace

TEST_CASE("deepsvdd loss value and gradient") {
  std::vector<Vec> phi = {Vec::Constant(2, 1.0), Vec::Constant(2, 3.0)};
  const Vec c = Vec::Constant(2, 1.0);
  const auto obj = deepsvdd_loss(phi, c);
  // (0 + 2 * 4) / 2
  CHECK(obj.value == 4.0);
  CHECK(obj.grads[0].isZero());
  CHECK(obj.grads[1] == Vec::Constant(2, 2.0));
  CHECK(deepsvdd_loss(std::vector<Vec>{c, c}, c).value == 0.0);
}

TEST_CASE("contrastive loss equals the direct formula") {
  std::mt19937_64 rng(1);
  for (auto mode : {ContrastiveMode::MeanInsideExp, ContrastiveMode::PerPositive}) {
    for (int trial = 0; trial < 30; ++trial) {
      ContrastiveBatch b;
      b.query = oracle::random_vec(4, rng);
      for (int i = 0; i < 3; ++i) b.positives.push_back(oracle::random_vec(4, rng));
      for (int i = 0; i < 4; ++i) b.negatives.push_back(oracle::random_vec(4, rng));
      b.temperature = 0.07;
      const double expected = contrastive_direct(b.query, b.positives, b.negatives, 0.07, mode);
      CHECK(contrastive_loss(b, mode).value == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("one positive makes both contrastive modes agree") {
  std::mt19937_64 rng(2);
  ContrastiveBatch b;
  b.query = oracle::random_vec(4, rng);
  b.positives = {oracle::random_vec(4, rng)};
  b.negatives = {oracle::random_vec(4, rng), oracle::random_vec(4, rng)};
  CHECK(contrastive_loss(b, ContrastiveMode::MeanInsideExp).value ==
        doctest::Approx(contrastive_loss(b, ContrastiveMode::PerPositive).value).epsilon(1e-12));
}

TEST_CASE("contrastive loss is scale invariant in its inputs") {
  std::mt19937_64 rng(3);
  ContrastiveBatch b;
  b.query = oracle::random_vec(4, rng);
  b.positives = {oracle::random_vec(4, rng), oracle::random_vec(4, rng)};
  b.negatives = {oracle::random_vec(4, rng)};
  const double v = contrastive_loss(b).value;
  b.query *= 5.0;
  b.positives[0] *= 0.1;
  CHECK(contrastive_loss(b).value == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("contrastive loss without negatives is zero") {
  ContrastiveBatch b;
  b.query = Vec::Ones(3);
  b.positives = {Vec::Ones(3)};
  CHECK(contrastive_loss(b).value == doctest::Approx(0.0));
}

TEST_CASE("contrastive loss rejects zero vectors and bad temperature") {
  ContrastiveBatch b;
  b.query = Vec::Zero(3);
  b.positives = {Vec::Ones(3)};
  CHECK_THROWS(contrastive_loss(b));
  b.query = Vec::Ones(3);
  b.temperature = 0.0;
  CHECK_THROWS(contrastive_loss(b));
}

TEST_CASE("batch contrastive averages over queries with a partner") {
  std::mt19937_64 rng(4);
  std::vector<Vec> outs;
  for (int i = 0; i < 5; ++i) outs.push_back(oracle::random_vec(3, rng));
  const std::vector<int> groups = {0, 0, 1, -1, 2};  // queries: 0 and 1 only
  const auto obj = batch_contrastive_loss(outs, groups, 0.1);
  const double q0 = contrastive_direct(outs[0], {outs[1]}, {outs[2], outs[3], outs[4]}, 0.1, ContrastiveMode::MeanInsideExp);
  const double q1 = contrastive_direct(outs[1], {outs[0]}, {outs[2], outs[3], outs[4]}, 0.1, ContrastiveMode::MeanInsideExp);
  CHECK(obj.value == doctest::Approx((q0 + q1) / 2).epsilon(1e-12));
  const std::vector<int> lonely = {0, 1, 2, -1, -1};
  CHECK(batch_contrastive_loss(outs, lonely, 0.1).value == 0.0);
}

TEST_CASE("hrn loss value and power in the log domain") {
  Vec g(2);
  g << 0.6, 0.8;  // norm 1
  const auto r = hrn_loss(0.0, g, {0.1, 12});
  CHECK(r.value == doctest::Approx(std::log(2.0) + 0.1));
  CHECK(r.penalty == doctest::Approx(0.1));
  CHECK(r.grad_logit == doctest::Approx(-0.5));
  CHECK((r.grad_input_grad - 1.2 * g).norm() < 1e-12);
  // Large logits stay finite.
  CHECK(std::isfinite(hrn_loss(-800.0, g, {}).value));
  CHECK(hrn_loss(800.0, g * 0.5, {}).value == doctest::Approx(0.1 * std::pow(0.5, 12)));
  CHECK_THROWS_AS(hrn_loss(0.0, g, {0.1, 3}), ConfigError);
  CHECK_THROWS_AS(hrn_loss(0.0, g, {0.1, 0}), ConfigError);
}

TEST_CASE("hrn loss gradient w.r.t. the input gradient") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec g = oracle::random_vec(4, rng, 0.5);
    const double f = std::normal_distribution<double>(0, 2)(rng);
    const auto r = hrn_loss(f, g, {});
    // Only the penalty depends on g; differencing it alone avoids the
    // round-off of the much larger likelihood term.
    auto by_g = [&](const Vec& x) { return hrn_loss(f, x, {}).penalty; };
    CHECK(gradcheck::compare(by_g, g, r.grad_input_grad, 1e-6, 1e-5).max_rel_error < 1e-5);
    const double h = 1e-6;
    CHECK(r.grad_logit == doctest::Approx((hrn_loss(f + h, g, {}).value - hrn_loss(f - h, g, {}).value) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("energy score and helpers") {
  Vec l(3);
  l << 1.0, 2.0, 3.0;
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(log_sum_exp(l) == doctest::Approx(lse));
  CHECK(energy_score(l) == doctest::Approx(-lse));
  CHECK(softmax(l).sum() == doctest::Approx(1.0));
  Vec big(2);
  big << 1000.0, 1000.0;
  CHECK(energy_score(big) == doctest::Approx(-1000.0 - std::log(2.0)));
  CHECK_THROWS(energy_score(Vec()));
}

TEST_CASE("energy loss equals the direct formula") {
  std::mt19937_64 rng(6);
  const EnergyHyper hyper{-3.0, -1.0, 0.1};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabeledLogits> id;
    std::vector<Vec> ood;
    for (int i = 0; i < 4; ++i) id.push_back({oracle::random_vec(3, rng, 2.0), i % 3});
    for (int i = 0; i < 3; ++i) ood.push_back(oracle::random_vec(3, rng, 2.0));
    double ce = 0, hin = 0, hout = 0;
    for (const auto& s : id) {
      double z = 0;
      for (int k = 0; k < 3; ++k) z += std::exp(s.logits[k]);
      ce += -std::log(std::exp(s.logits[s.family]) / z) / 4;
      const double e = -std::log(z);
      hin += std::pow(std::max(0.0, e - hyper.m_in), 2) / 4;
    }
    for (const auto& l : ood) {
      double z = 0;
      for (int k = 0; k < 3; ++k) z += std::exp(l[k]);
      hout += std::pow(std::max(0.0, hyper.m_out + std::log(z)), 2) / 3;
    }
    const auto r = energy_loss(id, ood, hyper);
    CHECK(r.cross_entropy == doctest::Approx(ce).epsilon(1e-12));
    CHECK(r.id_hinge == doctest::Approx(hin).epsilon(1e-12));
    CHECK(r.ood_hinge == doctest::Approx(hout).epsilon(1e-12));
    CHECK(r.value == doctest::Approx(ce + 0.1 * (hin + hout)).epsilon(1e-12));
  }
}

TEST_CASE("energy loss edge cases") {
  const EnergyHyper hyper;
  CHECK(energy_loss({}, {}, hyper).value == 0.0);
  std::vector<LabeledLogits> bad = {{Vec::Zero(2), 2}};
  CHECK_THROWS_AS(energy_loss(bad, {}, hyper), DataError);
  CHECK_THROWS_AS(validate(EnergyHyper{NAN, -5, 0.1}), ConfigError);
}

TEST_CASE("total loss combines linearly") {
  Objective a{2.0, {Vec::Ones(2)}};
  Objective b{3.0, {Vec::Constant(2, 2.0)}};
  const auto t = total_loss(a, b, {0.5, 2.0});
  CHECK(t.value == 7.0);
  CHECK(t.grads[0] == Vec::Constant(2, 4.5));
  const auto only_a = total_loss(a, Objective{1.0, {}}, {1.0, 0.0});
  CHECK(only_a.grads[0] == Vec::Ones(2));
  CHECK_THROWS_AS(validate(LossWeights{0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(validate(LossWeights{-1.0, 1.0}), ConfigError);
}

TEST_CASE("gradients through a tanh net match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    CHECK(gradcheck::deepsvdd(seed).max_rel_error < 1e-4);
    CHECK(gradcheck::contrastive(seed, ContrastiveMode::MeanInsideExp).max_rel_error < 1e-4);
    CHECK(gradcheck::contrastive(seed, ContrastiveMode::PerPositive).max_rel_error < 1e-4);
    CHECK(gradcheck::hrn(seed).max_rel_error < 1e-4);
    CHECK(gradcheck::energy(seed).max_rel_error < 1e-4);
  }
}

TEST_CASE("hrn gradient with a low power still matches") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(gradcheck::hrn(seed, {0.5, 2}).max_rel_error < 1e-4);
}
