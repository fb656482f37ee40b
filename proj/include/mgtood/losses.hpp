#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mgtood/core.hpp"

namespace mgtood {

/// A loss value together with its gradient with respect to each of a list
/// of vectors (projected embeddings or logits).
struct Objective {
  double value = 0.0;
  std::vector<Vec> grads;
};

// ---------------------------------------------------------------------------
// One-class hypersphere loss

/// Mean squared distance of projected machine embeddings to a fixed center.
/// grads[i] = 2 (phi_i - c) / N; the center receives no gradient.
Objective deepsvdd_loss(std::span<const Vec> projected, const Vec& center);

// ---------------------------------------------------------------------------
// Contrastive loss

enum class ContrastiveMode {
  MeanInsideExp,  // exp(mean_p S(q,z_p)/tau) in numerator and denominator
  PerPositive,    // mean over positives of -log(exp(s_p) / (exp(s_p) + sum_n exp(s_n)))
};

struct ContrastiveBatch {
  Vec query;
  std::vector<Vec> positives;
  std::vector<Vec> negatives;
  double temperature = 0.07;
};

struct ContrastiveResult {
  double value = 0.0;
  Vec grad_query;
  std::vector<Vec> grad_positives;
  std::vector<Vec> grad_negatives;
};

ContrastiveResult contrastive_loss(const ContrastiveBatch& batch,
                                   ContrastiveMode mode = ContrastiveMode::MeanInsideExp);

/// In-batch contrastive objective. group[i] >= 0 names the positive group of
/// sample i; group[i] < 0 marks a sample that only ever acts as a negative.
/// Every sample with at least one same-group partner is a query; the loss is
/// the mean over queries. grads are w.r.t. each embedding in `outputs`.
Objective batch_contrastive_loss(std::span<const Vec> outputs, std::span<const int> group,
                                 double temperature,
                                 ContrastiveMode mode = ContrastiveMode::MeanInsideExp);

// ---------------------------------------------------------------------------
// H-regularized one-class loss

struct HRNHyper {
  double lambda = 0.1;
  int n = 12;  // even
};

void validate(const HRNHyper& hyper);

struct HRNLoss {
  double value = 0.0;
  double penalty = 0.0;
  double grad_logit = 0.0;
  Vec grad_input_grad;  // d loss / d (grad_x f)
};

/// -log(sigmoid(f)) + lambda * ||grad_x f||_2^n, with the power evaluated as
/// exp(n log ||g||) and ||g|| clamped below at 1e-30.
HRNLoss hrn_loss(double logit, const Vec& input_grad, const HRNHyper& hyper);

// ---------------------------------------------------------------------------
// Energy score and margin loss

struct EnergyHyper {
  double m_in = -27.0;
  double m_out = -5.0;
  double lambda = 0.1;
};

/// Throws on non-finite values; warns when m_in >= m_out.
void validate(const EnergyHyper& hyper);

/// E = -log sum_i exp(logits_i), computed with a max shift.
double energy_score(const Vec& logits);
double log_sum_exp(const Vec& values);
Vec softmax(const Vec& logits);

struct EnergyLoss {
  double value = 0.0;
  double cross_entropy = 0.0;
  double id_hinge = 0.0;
  double ood_hinge = 0.0;
  std::vector<Vec> grads_id;
  std::vector<Vec> grads_ood;
};

struct LabeledLogits {
  Vec logits;
  int family = 0;
};

/// Mean cross-entropy over ID samples plus lambda times the squared hinge
/// terms max(0, E - m_in)^2 (ID) and max(0, m_out - E)^2 (OOD). An empty
/// list contributes zero.
EnergyLoss energy_loss(std::span<const LabeledLogits> id, std::span<const Vec> ood,
                       const EnergyHyper& hyper);

// ---------------------------------------------------------------------------

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
};

void validate(const LossWeights& weights);

/// alpha * ood + beta * contrastive, gradients combined per vector.
Objective total_loss(const Objective& ood, const Objective& contrastive, const LossWeights& weights);

}  // namespace mgtood
