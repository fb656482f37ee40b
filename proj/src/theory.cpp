#include "mgtood/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

namespace mgtood::theory {

using json = nlohmann::json;

DiscreteDistribution DiscreteDistribution::from(std::vector<double> probs) {
  if (probs.empty()) throw DataError("distribution over an empty space");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("distribution entries must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("distribution sums to " + std::to_string(sum) + ", not 1");
  return DiscreteDistribution{std::move(probs)};
}

LabeledDataDistribution LabeledDataDistribution::from(double q_M, DiscreteDistribution P_M, DiscreteDistribution P_H) {
  if (!(q_M > 0.0 && q_M < 1.0)) throw DataError("q_M must lie in (0, 1)");
  if (P_M.size() != P_H.size()) throw ShapeError("P_M and P_H live on different spaces");
  return LabeledDataDistribution{q_M, 1.0 - q_M, std::move(P_M), std::move(P_H)};
}

std::vector<double> LabeledDataDistribution::joint() const {
  std::vector<double> out(size());
  for (std::size_t x = 0; x < size(); ++x) out[x] = q_M * P_M[x] + q_H * P_H[x];
  return out;
}

std::vector<double> LabeledDataDistribution::posterior_machine() const {
  std::vector<double> out(size(), 0.0);
  for (std::size_t x = 0; x < size(); ++x) {
    const double pd = q_M * P_M[x] + q_H * P_H[x];
    if (pd > 0.0) out[x] = q_M * P_M[x] / pd;
  }
  return out;
}

namespace {

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

void require_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": size mismatch");
}

// Bisection for a monotone g on [lo, hi] with g(lo) and g(hi) bracketing 0.
double bisect(const std::function<double(double)>& g, double lo, double hi, bool increasing) {
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) return mid;
    const double v = g(mid);
    if (std::abs(v) < 1e-12) return mid;
    if ((v < 0.0) == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<double> dirichlet_ones(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double sum = 0.0;
  for (auto& x : v) {
    x = e(rng);
    sum += x;
  }
  for (auto& x : v) x /= sum;
  return v;
}

std::vector<double> renormalized(std::vector<double> v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

double binary_entropy(double p) { return -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p); }

double binary_cross_entropy(double p, double q) { return -xlogy(p, q) - xlogy(1.0 - p, 1.0 - q); }

double binary_kl(double p, double q) {
  return xlogy(p, p) - xlogy(p, q) + xlogy(1.0 - p, 1.0 - p) - xlogy(1.0 - p, 1.0 - q);
}

double consistency_residual(const LabeledDataDistribution& dist, const GroundTruth& truth) {
  require_size(dist.size(), truth.p_hat_M.size(), "consistency_residual");
  double worst = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    const double p = truth.p_hat_M[x];
    worst = std::max(worst, std::abs(dist.q_M * dist.P_M[x] * (1.0 - p) - dist.q_H * dist.P_H[x] * p));
  }
  return worst;
}

double ce_loss(const LabeledDataDistribution& dist, const SoftClassifier& classifier) {
  require_size(dist.size(), classifier.p0.size(), "ce_loss");
  double loss = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    const double p0 = std::clamp(classifier.p0[x], kClip, 1.0 - kClip);
    loss -= dist.q_M * dist.P_M[x] * std::log(p0) + dist.q_H * dist.P_H[x] * std::log(1.0 - p0);
  }
  return loss;
}

SoftClassifier bayes_classifier(const LabeledDataDistribution& dist) { return {dist.posterior_machine()}; }

double entropy_floor(const LabeledDataDistribution& dist, const GroundTruth& truth) {
  const double residual = consistency_residual(dist, truth);
  if (!(residual < 1e-9)) {
    throw DataError("entropy_floor: distribution is inconsistent with the ground truth (residual " +
                    std::to_string(residual) + ")");
  }
  const auto pd = dist.joint();
  double h = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) h += pd[x] * binary_entropy(truth.p_hat_M[x]);
  return h;
}

double pearson_chi2(const DiscreteDistribution& P1, const DiscreteDistribution& P2) {
  require_size(P1.size(), P2.size(), "pearson_chi2");
  double s = 0.0;
  for (std::size_t x = 0; x < P1.size(); ++x) {
    if (P1[x] == 0.0) continue;
    if (P2[x] == 0.0) return kInfinity;
    s += P1[x] * P1[x] / P2[x];
  }
  return std::max(0.0, s - 1.0);
}

ShiftedBiased shifted_biased(const DiscreteDistribution& P_hat_H, const std::vector<bool>& region, double C1) {
  require_size(P_hat_H.size(), region.size(), "shifted_biased");
  double mu = 0.0;
  for (std::size_t x = 0; x < region.size(); ++x) {
    if (region[x]) mu += P_hat_H[x];
  }
  if (!(mu > 0.0 && mu < 1.0)) throw DataError("shifted_biased: region mass must lie strictly between 0 and 1");
  if (!(C1 > 0.0) || !(C1 * mu < 1.0)) throw DataError("shifted_biased: need C1 > 0 and C1 * mu < 1");
  const double C2 = (1.0 - C1 * mu) / (1.0 - mu);
  std::vector<double> ph(P_hat_H.size());
  for (std::size_t x = 0; x < ph.size(); ++x) ph[x] = (region[x] ? C1 : C2) * P_hat_H[x];
  ShiftedBiased out{DiscreteDistribution::from(std::move(ph)), C1, C2, mu, mu / C1 + (1.0 - mu) / C2 - 1.0};
  return out;
}

SoftClassifier construct_theorem1_classifier(const LabeledDataDistribution& D, const LabeledDataDistribution& D_hat,
                                             const GroundTruth& truth, double delta0) {
  if (!(delta0 >= 0.0)) throw DataError("delta0 must be non-negative");
  require_size(D.size(), D_hat.size(), "construct_theorem1_classifier");
  if (!(consistency_residual(D, truth) < 1e-9) || !(consistency_residual(D_hat, truth) < 1e-9)) {
    throw DataError("construct_theorem1_classifier: both distributions must be consistent with the ground truth");
  }
  const auto pd = D.joint();
  const auto pd_hat = D_hat.joint();
  SoftClassifier out;
  out.p0.resize(D.size());
  for (std::size_t x = 0; x < D.size(); ++x) {
    const double p = truth.p_hat_M[x];
    if (pd_hat[x] > 0.0 && pd[x] == 0.0) {
      throw DataError("construct_theorem1_classifier: P_D(x) = 0 where P_Dhat(x) > 0 at x = " + std::to_string(x));
    }
    const double delta_x = pd_hat[x] > 0.0 ? delta0 * pd_hat[x] / pd[x] : 0.0;
    if (delta_x == 0.0) {
      out.p0[x] = p;
      continue;
    }
    const double target = binary_entropy(p) + delta_x;
    auto gap = [p, target](double q) { return binary_cross_entropy(p, q) - target; };
    if (p > kClip && gap(kClip) >= 0.0) {
      out.p0[x] = bisect(gap, kClip, p, /*increasing=*/false);
    } else if (p < 1.0 - kClip && gap(1.0 - kClip) >= 0.0) {
      out.p0[x] = bisect(gap, p, 1.0 - kClip, /*increasing=*/true);
    } else {
      throw NumericError("construct_theorem1_classifier: suboptimality " + std::to_string(delta_x) +
                         " unreachable under clipping at x = " + std::to_string(x));
    }
  }
  return out;
}

Theorem1Report verify_theorem1(const LabeledDataDistribution& D, const LabeledDataDistribution& D_hat,
                               const GroundTruth& truth, double delta0) {
  if (std::abs(D.q_M - D_hat.q_M) > 1e-12) throw DataError("verify_theorem1: D and D_hat must share q_M");
  Theorem1Report r;
  r.delta0 = delta0;
  r.chi2 = pearson_chi2(D_hat.P_H, D.P_H);
  if (!std::isfinite(r.chi2)) throw DataError("verify_theorem1: chi2(P_hat_H || P_H) is infinite");
  r.classifier = construct_theorem1_classifier(D, D_hat, truth, delta0);
  r.train_gap = ce_loss(D, r.classifier) - entropy_floor(D, truth);
  r.gen_gap = ce_loss(D_hat, r.classifier) - entropy_floor(D_hat, truth);
  r.bound = 0.9 * D.q_H * (r.chi2 + 1.0) * delta0;
  r.identity_bound = D.q_H * (r.chi2 + 1.0) * delta0;
  r.pass = r.train_gap <= delta0 * (1.0 + 1e-6) && r.gen_gap >= r.bound;
  return r;
}

double kwality(const LabeledDataDistribution& D, const GroundTruth& truth) {
  require_size(D.size(), truth.p_hat_M.size(), "kwality");
  const auto pd = D.joint();
  const auto post = D.posterior_machine();
  double k = 0.0;
  for (std::size_t x = 0; x < D.size(); ++x) {
    if (pd[x] > 0.0) k += pd[x] * binary_kl(truth.p_hat_M[x], post[x]);
  }
  return k;
}

Theorem2Report verify_theorem2(const LabeledDataDistribution& D, const DiscreteDistribution& D_hat_text, double delta) {
  if (!(delta >= 0.0)) throw DataError("delta must be non-negative");
  require_size(D.size(), D_hat_text.size(), "verify_theorem2");
  const auto pd = D.joint();
  const auto post = D.posterior_machine();
  for (std::size_t x = 0; x < D.size(); ++x) {
    if ((pd[x] > 0.0) != (D_hat_text[x] > 0.0)) {
      throw DataError("verify_theorem2: P_D and P_Dhat are not mutually absolutely continuous at x = " + std::to_string(x));
    }
  }
  Theorem2Report r;
  r.delta = delta;
  r.truth.p_hat_M.resize(D.size());
  for (std::size_t x = 0; x < D.size(); ++x) {
    if (pd[x] == 0.0) {
      r.truth.p_hat_M[x] = 0.5;
      continue;
    }
    const double target = delta * D_hat_text[x] / pd[x];
    const double q = post[x];
    if (target == 0.0) {
      r.truth.p_hat_M[x] = q;
      continue;
    }
    auto gap = [q, target](double p) { return binary_kl(p, q) - target; };
    if (q < 1.0 - kClip && gap(1.0 - kClip) >= 0.0) {
      r.truth.p_hat_M[x] = bisect(gap, q, 1.0 - kClip, /*increasing=*/true);
    } else if (q > kClip && gap(kClip) >= 0.0) {
      r.truth.p_hat_M[x] = bisect(gap, kClip, q, /*increasing=*/false);
    } else {
      throw NumericError("verify_theorem2: KL target " + std::to_string(target) + " unreachable at x = " +
                         std::to_string(x));
    }
  }
  r.kwality = kwality(D, r.truth);
  r.kwality_check = std::abs(r.kwality - delta) < 1e-8;

  // Open-world dataset: text distribution P_Dhat labelled by p_hat.
  std::vector<double> pm_hat(D.size());
  std::vector<double> ph_hat(D.size());
  double q_hat_m = 0.0;
  for (std::size_t x = 0; x < D.size(); ++x) q_hat_m += r.truth.p_hat_M[x] * D_hat_text[x];
  for (std::size_t x = 0; x < D.size(); ++x) {
    pm_hat[x] = r.truth.p_hat_M[x] * D_hat_text[x] / q_hat_m;
    ph_hat[x] = (1.0 - r.truth.p_hat_M[x]) * D_hat_text[x] / (1.0 - q_hat_m);
  }
  const auto D_hat = LabeledDataDistribution::from(q_hat_m, DiscreteDistribution::from(renormalized(std::move(pm_hat))),
                                                   DiscreteDistribution::from(renormalized(std::move(ph_hat))));
  r.gen_gap = ce_loss(D_hat, SoftClassifier{post}) - entropy_floor(D_hat, r.truth);

  const DiscreteDistribution PD = DiscreteDistribution::from(renormalized(pd));
  r.chi2 = pearson_chi2(PD, D_hat_text);
  r.bound = delta * r.chi2;
  r.chi2_reverse = pearson_chi2(D_hat_text, PD);
  r.identity_value = delta * (r.chi2_reverse + 1.0);
  r.equality = std::abs(r.gen_gap - r.bound) < 1e-8;
  r.pass = r.kwality_check && r.gen_gap >= r.bound - 1e-8;
  return r;
}

Theorem1Instance random_theorem1_instance(std::uint64_t seed, std::size_t size, double min_chi2) {
  if (size < 2) throw DataError("random_theorem1_instance: need at least 2 points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const auto p_hat_h = DiscreteDistribution::from(dirichlet_ones(size, rng));
    std::vector<bool> region(size);
    std::size_t in_region = 0;
    for (std::size_t x = 0; x < size; ++x) {
      region[x] = unit(rng) < 0.5;
      in_region += region[x] ? 1 : 0;
    }
    if (in_region == 0 || in_region == size) continue;
    double mu = 0.0;
    for (std::size_t x = 0; x < size; ++x) {
      if (region[x]) mu += p_hat_h[x];
    }
    // C2 log-uniform in [0.005, 0.2]; C1 follows from normalization.
    const double c2 = std::exp(std::log(0.005) + unit(rng) * (std::log(0.2) - std::log(0.005)));
    const double c1 = (1.0 - c2 * (1.0 - mu)) / mu;
    const ShiftedBiased sb = shifted_biased(p_hat_h, region, c1);
    if (sb.closed_form_chi2 < min_chi2) continue;
    const auto& ph = sb.P_H.probs;

    // P_M = P_H g / Z with sum_x P_H g (r - 1) = 0, r = P_hat_H / P_H.
    std::vector<double> g(size);
    for (auto& v : g) v = 0.1 + 0.9 * unit(rng);
    double above = 0.0;
    double below = 0.0;
    for (std::size_t x = 0; x < size; ++x) {
      const double r = p_hat_h[x] / ph[x];
      if (r > 1.0) above += ph[x] * g[x] * (r - 1.0);
      if (r < 1.0) below += ph[x] * g[x] * (1.0 - r);
    }
    if (!(above > 0.0 && below > 0.0)) continue;
    for (std::size_t x = 0; x < size; ++x) {
      if (p_hat_h[x] / ph[x] > 1.0) g[x] *= below / above;
    }
    std::vector<double> pm(size);
    for (std::size_t x = 0; x < size; ++x) pm[x] = ph[x] * g[x];
    pm = renormalized(std::move(pm));
    std::vector<double> pm_hat(size);
    for (std::size_t x = 0; x < size; ++x) pm_hat[x] = pm[x] * p_hat_h[x] / ph[x];
    pm_hat = renormalized(std::move(pm_hat));

    const double q_m = 0.2 + 0.6 * unit(rng);
    Theorem1Instance inst{LabeledDataDistribution::from(q_m, DiscreteDistribution::from(pm), sb.P_H),
                          LabeledDataDistribution::from(q_m, DiscreteDistribution::from(pm_hat), p_hat_h),
                          GroundTruth{},
                          sb.closed_form_chi2};
    inst.truth.p_hat_M = inst.D.posterior_machine();
    return inst;
  }
  throw NumericError("random_theorem1_instance: no instance found");
}

Theorem2Instance random_theorem2_instance(std::uint64_t seed, std::size_t size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pm = DiscreteDistribution::from(dirichlet_ones(size, rng));
  auto ph = DiscreteDistribution::from(dirichlet_ones(size, rng));
  auto pd_hat = DiscreteDistribution::from(dirichlet_ones(size, rng));
  const double q_m = 0.2 + 0.6 * unit(rng);
  return {LabeledDataDistribution::from(q_m, std::move(pm), std::move(ph)), std::move(pd_hat)};
}

json to_json(const Theorem1Report& r) {
  return {{"delta0", r.delta0},
          {"train_gap", r.train_gap},
          {"gen_gap", r.gen_gap},
          {"chi2", r.chi2},
          {"bound", r.bound},
          {"identity_bound", r.identity_bound},
          {"classifier_p0", r.classifier.p0},
          {"pass", r.pass}};
}

json to_json(const Theorem2Report& r) {
  return {{"delta", r.delta},
          {"p_hat_M", r.truth.p_hat_M},
          {"kwality", r.kwality},
          {"kwality_check", r.kwality_check},
          {"gen_gap", r.gen_gap},
          {"chi2", r.chi2},
          {"bound", r.bound},
          {"chi2_reverse", r.chi2_reverse},
          {"identity_value", r.identity_value},
          {"equality", r.equality},
          {"pass", r.pass}};
}

LabeledDataDistribution distribution_from_json(const json& j, const char* pm_key, const char* ph_key) {
  try {
    return LabeledDataDistribution::from(j.at("q_M").get<double>(),
                                         DiscreteDistribution::from(j.at(pm_key).get<std::vector<double>>()),
                                         DiscreteDistribution::from(j.at(ph_key).get<std::vector<double>>()));
  } catch (const json::exception& e) {
    throw DataError(std::string("theory instance: ") + e.what());
  }
}

}  // namespace mgtood::theory
