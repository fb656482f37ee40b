#include "mgtood/losses.hpp"

#include <cmath>
#include <string>

namespace mgtood {

namespace {

// Cosine similarity and its gradients w.r.t. both arguments.
struct CosineGrad {
  double sim;
  Vec d_a;
  Vec d_b;
};

CosineGrad cosine_with_grad(const Vec& a, const Vec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("contrastive_loss: zero-norm embedding");
  const double s = a.dot(b) / (na * nb);
  return {s, b / (na * nb) - s * a / (na * na), a / (na * nb) - s * b / (nb * nb)};
}

}  // namespace

Objective deepsvdd_loss(std::span<const Vec> projected, const Vec& center) {
  if (projected.empty()) throw DataError("deepsvdd_loss: empty batch");
  Objective out;
  const double n = static_cast<double>(projected.size());
  out.grads.reserve(projected.size());
  for (const auto& p : projected) {
    if (p.size() != center.size()) throw ShapeError("deepsvdd_loss: dimension mismatch with center");
    const Vec diff = p - center;
    out.value += diff.squaredNorm();
    out.grads.push_back(2.0 * diff / n);
  }
  out.value /= n;
  return out;
}

double log_sum_exp(const Vec& values) {
  if (values.size() == 0) throw DataError("log_sum_exp: empty input");
  const double m = values.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("log_sum_exp: non-finite input");
  return m + std::log((values.array() - m).exp().sum());
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

ContrastiveResult contrastive_loss(const ContrastiveBatch& batch, ContrastiveMode mode) {
  if (batch.positives.empty()) throw DataError("contrastive_loss: no positives");
  if (!(batch.temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be positive");
  const double tau = batch.temperature;
  const std::size_t np = batch.positives.size();
  const std::size_t nn = batch.negatives.size();

  std::vector<CosineGrad> pos;
  std::vector<CosineGrad> neg;
  pos.reserve(np);
  neg.reserve(nn);
  for (const auto& z : batch.positives) pos.push_back(cosine_with_grad(batch.query, z));
  for (const auto& z : batch.negatives) neg.push_back(cosine_with_grad(batch.query, z));

  // Logits: index 0 is the positive term, 1..nn the negatives.
  Vec neg_logits(static_cast<Eigen::Index>(nn));
  for (std::size_t k = 0; k < nn; ++k) neg_logits[static_cast<Eigen::Index>(k)] = neg[k].sim / tau;

  ContrastiveResult r;
  r.grad_query = Vec::Zero(batch.query.size());
  r.grad_positives.assign(np, Vec::Zero(batch.query.size()));
  r.grad_negatives.assign(nn, Vec::Zero(batch.query.size()));

  // d loss / d s_n for the negatives, accumulated across positive terms.
  Vec d_neg = Vec::Zero(static_cast<Eigen::Index>(nn));

  auto one_term = [&](double s_plus, double weight) {
    Vec logits(static_cast<Eigen::Index>(nn + 1));
    logits[0] = s_plus;
    logits.tail(static_cast<Eigen::Index>(nn)) = neg_logits;
    r.value += weight * (log_sum_exp(logits) - s_plus);
    const Vec p = softmax(logits);
    d_neg += weight * p.tail(static_cast<Eigen::Index>(nn));
    return weight * (p[0] - 1.0);  // d loss / d s_plus
  };

  if (mode == ContrastiveMode::MeanInsideExp) {
    double s_plus = 0.0;
    for (const auto& c : pos) s_plus += c.sim / tau;
    s_plus /= static_cast<double>(np);
    const double d_splus = one_term(s_plus, 1.0);
    for (std::size_t k = 0; k < np; ++k) {
      const double d_sim = d_splus / (tau * static_cast<double>(np));
      r.grad_query += d_sim * pos[k].d_a;
      r.grad_positives[k] = d_sim * pos[k].d_b;
    }
  } else {
    const double w = 1.0 / static_cast<double>(np);
    for (std::size_t k = 0; k < np; ++k) {
      const double d_sim = one_term(pos[k].sim / tau, w) / tau;
      r.grad_query += d_sim * pos[k].d_a;
      r.grad_positives[k] = d_sim * pos[k].d_b;
    }
  }
  for (std::size_t k = 0; k < nn; ++k) {
    const double d_sim = d_neg[static_cast<Eigen::Index>(k)] / tau;
    r.grad_query += d_sim * neg[k].d_a;
    r.grad_negatives[k] = d_sim * neg[k].d_b;
  }
  return r;
}

Objective batch_contrastive_loss(std::span<const Vec> outputs, std::span<const int> group,
                                 double temperature, ContrastiveMode mode) {
  if (outputs.size() != group.size()) throw ShapeError("batch_contrastive_loss: group size mismatch");
  Objective out;
  out.grads.assign(outputs.size(), Vec::Zero(outputs.empty() ? 0 : outputs[0].size()));
  std::size_t queries = 0;
  std::vector<std::size_t> pos_idx;
  std::vector<std::size_t> neg_idx;
  std::vector<ContrastiveResult> results;
  std::vector<std::size_t> query_of;
  std::vector<std::vector<std::size_t>> pos_of;
  std::vector<std::vector<std::size_t>> neg_of;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (group[i] < 0) continue;
    ContrastiveBatch b;
    b.query = outputs[i];
    b.temperature = temperature;
    pos_idx.clear();
    neg_idx.clear();
    for (std::size_t j = 0; j < outputs.size(); ++j) {
      if (j == i) continue;
      if (group[j] == group[i]) {
        pos_idx.push_back(j);
        b.positives.push_back(outputs[j]);
      } else {
        neg_idx.push_back(j);
        b.negatives.push_back(outputs[j]);
      }
    }
    if (b.positives.empty()) continue;
    results.push_back(contrastive_loss(b, mode));
    query_of.push_back(i);
    pos_of.push_back(pos_idx);
    neg_of.push_back(neg_idx);
    ++queries;
  }
  if (queries == 0) return out;
  const double scale = 1.0 / static_cast<double>(queries);
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& r = results[q];
    out.value += scale * r.value;
    out.grads[query_of[q]] += scale * r.grad_query;
    for (std::size_t k = 0; k < pos_of[q].size(); ++k) out.grads[pos_of[q][k]] += scale * r.grad_positives[k];
    for (std::size_t k = 0; k < neg_of[q].size(); ++k) out.grads[neg_of[q][k]] += scale * r.grad_negatives[k];
  }
  return out;
}

void validate(const HRNHyper& hyper) {
  if (!(hyper.lambda >= 0.0) || !std::isfinite(hyper.lambda)) throw ConfigError("HRN lambda must be non-negative");
  if (hyper.n <= 0 || hyper.n % 2 != 0) throw ConfigError("HRN exponent n must be a positive even integer");
}

HRNLoss hrn_loss(double logit, const Vec& input_grad, const HRNHyper& hyper) {
  validate(hyper);
  if (!std::isfinite(logit) || !input_grad.allFinite()) throw NumericError("hrn_loss: non-finite input");
  HRNLoss r;
  // -log(sigmoid(f)) = log(1 + exp(-f)), evaluated stably.
  r.value = logit >= 0.0 ? std::log1p(std::exp(-logit)) : -logit + std::log1p(std::exp(logit));
  const double sig_neg = 1.0 / (1.0 + std::exp(logit));  // sigmoid(-f)
  r.grad_logit = -sig_neg;
  const double norm = std::max(input_grad.norm(), 1e-30);
  const double log_norm = std::log(norm);
  const double n = static_cast<double>(hyper.n);
  r.penalty = hyper.lambda * std::exp(n * log_norm);
  r.value += r.penalty;
  // d/dg lambda ||g||^n = lambda n ||g||^(n-2) g
  r.grad_input_grad = hyper.lambda * n * std::exp((n - 2.0) * log_norm) * input_grad;
  return r;
}

void validate(const EnergyHyper& hyper) {
  if (!std::isfinite(hyper.m_in) || !std::isfinite(hyper.m_out) || !std::isfinite(hyper.lambda)) {
    throw ConfigError("energy hyperparameters must be finite");
  }
  if (hyper.lambda < 0.0) throw ConfigError("energy lambda must be non-negative");
  if (hyper.m_in >= hyper.m_out) warn("energy margins: m_in >= m_out");
}

double energy_score(const Vec& logits) {
  if (logits.size() == 0) throw DataError("energy_score: empty logits");
  return -log_sum_exp(logits);
}

EnergyLoss energy_loss(std::span<const LabeledLogits> id, std::span<const Vec> ood, const EnergyHyper& hyper) {
  EnergyLoss r;
  if (!id.empty()) {
    const double n = static_cast<double>(id.size());
    for (const auto& s : id) {
      if (s.family < 0 || s.family >= s.logits.size()) {
        throw DataError("energy_loss: label index " + std::to_string(s.family) + " out of range");
      }
      const double lse = log_sum_exp(s.logits);
      const double energy = -lse;
      const Vec p = softmax(s.logits);
      r.cross_entropy += (lse - s.logits[s.family]) / n;
      Vec g = p / n;
      g[s.family] -= 1.0 / n;
      const double gap = std::max(0.0, energy - hyper.m_in);
      r.id_hinge += gap * gap / n;
      // dE/dlogits = -softmax
      g -= hyper.lambda * 2.0 * gap / n * p;
      r.grads_id.push_back(std::move(g));
    }
  }
  if (!ood.empty()) {
    const double n = static_cast<double>(ood.size());
    for (const auto& logits : ood) {
      const double energy = energy_score(logits);
      const double gap = std::max(0.0, hyper.m_out - energy);
      r.ood_hinge += gap * gap / n;
      // d/dE (m_out - E)^2 = -2 gap; chain with dE/dlogits = -softmax.
      r.grads_ood.push_back(hyper.lambda * 2.0 * gap / n * softmax(logits));
    }
  }
  r.value = r.cross_entropy + hyper.lambda * (r.id_hinge + r.ood_hinge);
  return r;
}

void validate(const LossWeights& weights) {
  if (!(weights.alpha >= 0.0) || !(weights.beta >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (weights.alpha == 0.0 && weights.beta == 0.0) throw ConfigError("loss weights alpha and beta are both zero");
}

Objective total_loss(const Objective& ood, const Objective& contrastive, const LossWeights& weights) {
  validate(weights);
  Objective out;
  out.value = weights.alpha * ood.value + weights.beta * contrastive.value;
  const std::size_t n = std::max(ood.grads.size(), contrastive.grads.size());
  if ((!ood.grads.empty() && ood.grads.size() != n) ||
      (!contrastive.grads.empty() && contrastive.grads.size() != n)) {
    throw ShapeError("total_loss: gradient list sizes differ");
  }
  out.grads.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!ood.grads.empty()) out.grads[i] = weights.alpha * ood.grads[i];
    if (!contrastive.grads.empty()) {
      out.grads[i] = out.grads[i].size() == 0 ? Vec(weights.beta * contrastive.grads[i])
                                              : Vec(out.grads[i] + weights.beta * contrastive.grads[i]);
    }
  }
  return out;
}

}  // namespace mgtood
