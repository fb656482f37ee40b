#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mgtood/core.hpp"

// Finite, discrete versions of the binary-classifier generalization results:
// every integral over the text space is a sum over a finite set X, so the
// constructive proofs become executable and their bounds checkable.
namespace mgtood::theory {

inline constexpr double kClip = 1e-12;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct DiscreteDistribution {
  std::vector<double> probs;

  /// Validates non-negativity and sum-to-one (1e-9).
  static DiscreteDistribution from(std::vector<double> probs);
  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

/// Class priors and class-conditional text distributions. Label 0 is
/// machine, label 1 is human.
struct LabeledDataDistribution {
  double q_M = 0.5;
  double q_H = 0.5;
  DiscreteDistribution P_M;
  DiscreteDistribution P_H;

  static LabeledDataDistribution from(double q_M, DiscreteDistribution P_M, DiscreteDistribution P_H);
  std::size_t size() const { return P_M.size(); }
  /// P_D(x) = q_M P_M(x) + q_H P_H(x)
  std::vector<double> joint() const;
  /// Posterior machine probability q_M P_M(x) / P_D(x); 0 where P_D(x) = 0.
  std::vector<double> posterior_machine() const;
};

/// p_theta(y = 0 | x) per point.
struct SoftClassifier {
  std::vector<double> p0;
};

/// Ground-truth machine probability p_hat_M(x) per point.
struct GroundTruth {
  std::vector<double> p_hat_M;
};

double binary_entropy(double p);
/// H((p, 1-p), (q, 1-q)) with 0 log 0 = 0 on the first argument.
double binary_cross_entropy(double p, double q);
double binary_kl(double p, double q);

double consistency_residual(const LabeledDataDistribution& dist, const GroundTruth& truth);

/// -sum_x [q_M P_M(x) log p0(x) + q_H P_H(x) log(1 - p0(x))], p0 clipped to [kClip, 1 - kClip].
double ce_loss(const LabeledDataDistribution& dist, const SoftClassifier& classifier);

SoftClassifier bayes_classifier(const LabeledDataDistribution& dist);

/// sum_x P_D(x) H(p_hat_M(x)); requires a consistent pair.
double entropy_floor(const LabeledDataDistribution& dist, const GroundTruth& truth);

/// sum P1^2 / P2 - 1, or kInfinity when P1 has mass outside the support of P2.
double pearson_chi2(const DiscreteDistribution& P1, const DiscreteDistribution& P2);

struct ShiftedBiased {
  DiscreteDistribution P_H;
  double C1 = 1.0;
  double C2 = 1.0;
  double mu = 0.0;
  double closed_form_chi2 = 0.0;  // mu / C1 + (1 - mu) / C2 - 1
};

/// Reweights P_hat_H by C1 on `region` and C2 = (1 - C1 mu) / (1 - mu) elsewhere.
ShiftedBiased shifted_biased(const DiscreteDistribution& P_hat_H, const std::vector<bool>& region, double C1);

/// Per-point inverse problem of the first theorem: p0(x) with cross-entropy
/// exactly H(p_hat(x)) + Delta0 P_Dhat(x) / P_D(x). Solved by bisection on
/// the side p0 < p_hat_M(x); points where that side cannot reach the target
/// under clipping use the side p0 > p_hat_M(x).
SoftClassifier construct_theorem1_classifier(const LabeledDataDistribution& D, const LabeledDataDistribution& D_hat,
                                             const GroundTruth& truth, double delta0);

struct Theorem1Report {
  double delta0 = 0.0;
  double train_gap = 0.0;
  double gen_gap = 0.0;
  double chi2 = 0.0;             // D_chi2(P_hat_H || P_H)
  double bound = 0.0;            // 0.9 q_H (chi2 + 1) delta0
  double identity_bound = 0.0;   // q_H (chi2 + 1) delta0
  bool pass = false;
  SoftClassifier classifier;
};

Theorem1Report verify_theorem1(const LabeledDataDistribution& D, const LabeledDataDistribution& D_hat,
                               const GroundTruth& truth, double delta0);

/// E_{P_D} KL(p_hat(.|x) || p_D(.|x)) with the posterior of D.
double kwality(const LabeledDataDistribution& D, const GroundTruth& truth);

struct Theorem2Report {
  double delta = 0.0;
  GroundTruth truth;
  double kwality = 0.0;
  bool kwality_check = false;      // |kwality - delta| < 1e-8
  double gen_gap = 0.0;
  double chi2 = 0.0;               // D_chi2(P_D || P_Dhat), as in the published bound
  double bound = 0.0;              // delta * chi2
  double chi2_reverse = 0.0;       // D_chi2(P_Dhat || P_D)
  double identity_value = 0.0;     // delta * (chi2_reverse + 1); equals gen_gap
  bool equality = false;           // gen_gap == bound within 1e-8
  bool pass = false;               // kwality_check && gen_gap >= bound - 1e-8
};

/// Builds p_hat with KL(p_hat(.|x) || p_D(.|x)) = delta P_Dhat(x) / P_D(x)
/// (side p_hat_M > posterior, other side only if unreachable), then measures
/// the open-world suboptimality of the posterior classifier of D.
Theorem2Report verify_theorem2(const LabeledDataDistribution& D, const DiscreteDistribution& D_hat_text, double delta);

// ---------------------------------------------------------------------------
// Seeded instance generators for the randomized verification suites.

struct Theorem1Instance {
  LabeledDataDistribution D;
  LabeledDataDistribution D_hat;
  GroundTruth truth;
  double chi2 = 0.0;
};

/// Consistent (D, D_hat) pair: P_H is a shifted-biased copy of a
/// Dirichlet(1) P_hat_H with chi2 >= min_chi2; P_M is a random positive
/// reweighting of P_H balanced so that P_hat_M = P_M P_hat_H / P_H sums to 1.
Theorem1Instance random_theorem1_instance(std::uint64_t seed, std::size_t size = 8, double min_chi2 = 5.0);

struct Theorem2Instance {
  LabeledDataDistribution D;
  DiscreteDistribution D_hat_text;
};

/// P_M, P_H, P_Dhat ~ Dirichlet(1), q_M ~ U(0.2, 0.8).
Theorem2Instance random_theorem2_instance(std::uint64_t seed, std::size_t size = 8);

nlohmann::json to_json(const Theorem1Report& r);
nlohmann::json to_json(const Theorem2Report& r);

/// Instance files: {"q_M", "P_M", "P_H", "P_hat_M", "P_hat_H" | ("X0", "C1"), "p_hat_M" | "delta", "delta0"}.
LabeledDataDistribution distribution_from_json(const nlohmann::json& j, const char* pm_key, const char* ph_key);

}  // namespace mgtood::theory
