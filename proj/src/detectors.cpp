#include "mgtood/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "mgtood/metrics.hpp"

namespace mgtood {

using json = nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::DeepSVDD: return "dsvdd";
    case Method::HRN: return "hrn";
    case Method::Energy: return "energy";
    case Method::Bce: return "bce";
  }
  return "dsvdd";
}

Method parse_method(std::string_view text) {
  if (text == "dsvdd") return Method::DeepSVDD;
  if (text == "hrn") return Method::HRN;
  if (text == "energy") return Method::Energy;
  if (text == "bce") return Method::Bce;
  throw ConfigError("unknown method '" + std::string(text) + "' (expected dsvdd|hrn|energy|bce)");
}

void validate(const TrainConfig& c) {
  if (c.epochs <= 0) throw ConfigError("epochs must be positive");
  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0) || !(c.beta2 > 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(c.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (c.out_dim <= 0) throw ConfigError("out_dim must be positive");
  if (c.patience <= 0) throw ConfigError("patience must be positive");
  for (int h : c.hidden_dims) {
    if (h <= 0) throw ConfigError("hidden dims must be positive");
  }
  validate(c.weights);
  validate(c.hrn);
  validate(c.energy);
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vec uniform_vec(int n, double bound, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

Mat uniform_mat(int rows, int cols, double bound, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = u(rng);
  }
  return m;
}

void check_dim(const Detector& d, const Embedding& x) {
  if (x.size() != d.input_dim()) {
    throw ShapeError("score: sample dim " + std::to_string(x.size()) + " != detector input dim " +
                     std::to_string(d.input_dim()));
  }
}

json base_json(const Detector& d) {
  json j;
  j["version"] = 1;
  j["detector"] = to_string(d.method());
  j["families"] = d.families;
  j["threshold"] = d.threshold ? json(*d.threshold) : json(nullptr);
  j["hyper"] = d.hyper;
  return j;
}

void merge_net(json& j, const ProjectionNet& net) {
  const json net_json = net_to_json(net);
  for (const auto& [k, v] : net_json.items()) {
    if (k != "version") j[k] = v;
  }
}

}  // namespace

double Detector::score(const Sample& sample) const { return score(sample.embedding); }

DeepSVDDDetector::DeepSVDDDetector(ProjectionNet n, Vec c) : net(std::move(n)), center_(std::move(c)) {
  if (center_.size() != net.output_dim()) throw ShapeError("DeepSVDD center dim != net output dim");
  if (!center_.allFinite()) throw NumericError("DeepSVDD center must be finite");
}

double DeepSVDDDetector::score(const Embedding& x) const {
  check_dim(*this, x);
  return (forward(net, x) - center_).norm();
}

json DeepSVDDDetector::to_json() const {
  json j = base_json(*this);
  merge_net(j, net);
  j["center"] = vec_json(center_);
  return j;
}

double HRNDetector::score(const Embedding& x) const {
  check_dim(*this, x);
  if (heads.empty()) throw Error("HRN detector has no heads");
  double agg = 0.0;
  for (const auto& h : heads) {
    const double p = sigmoid(h.logit(x));
    agg = aggregation == HrnAggregation::Max ? std::max(agg, p) : agg + p;
  }
  if (aggregation == HrnAggregation::Mean) agg /= static_cast<double>(heads.size());
  return 1.0 - agg;
}

json HRNDetector::to_json() const {
  json j = base_json(*this);
  j["aggregation"] = aggregation == HrnAggregation::Max ? "max" : "mean";
  json heads_json = json::array();
  for (const auto& h : heads) {
    json hj = net_to_json(h.net);
    hj.erase("version");
    hj["head_weight"] = vec_json(h.weight);
    hj["head_bias"] = h.bias;
    heads_json.push_back(std::move(hj));
  }
  j["heads"] = std::move(heads_json);
  return j;
}

Vec EnergyDetector::logits(const Embedding& x) const {
  check_dim(*this, x);
  return classifier * forward(net, x) + classifier_bias;
}

double EnergyDetector::score(const Embedding& x) const { return energy_score(logits(x)); }

json EnergyDetector::to_json() const {
  json j = base_json(*this);
  merge_net(j, net);
  json rows = json::array();
  for (Eigen::Index r = 0; r < classifier.rows(); ++r) rows.push_back(vec_json(classifier.row(r).transpose()));
  j["classifier"] = {{"weights", rows}, {"bias", vec_json(classifier_bias)}};
  return j;
}

double BinaryHeadDetector::score(const Embedding& x) const {
  check_dim(*this, x);
  return weight.dot(forward(net, x)) + bias;
}

json BinaryHeadDetector::to_json() const {
  json j = base_json(*this);
  merge_net(j, net);
  j["head_weight"] = vec_json(weight);
  j["head_bias"] = bias;
  return j;
}

Kind classify(const Detector& detector, const Embedding& x, double threshold) {
  if (!std::isfinite(threshold)) throw ConfigError("classify: threshold must be finite");
  return detector.score(x) > threshold ? Kind::Human : Kind::Machine;
}

Vec compute_center(std::span<const Embedding> machine_train, const ProjectionNet& net, double guard) {
  if (machine_train.empty()) throw DataError("compute_center: no machine training samples");
  Vec c = Vec::Zero(net.output_dim());
  for (const auto& x : machine_train) c += forward(net, x);
  c /= static_cast<double>(machine_train.size());
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    if (std::abs(c[j]) < guard) c[j] = c[j] < 0.0 ? -guard : guard;
  }
  return c;
}

HrnHeadObjective hrn_head_objective(const HrnHead& head, std::span<const Embedding> in_class,
                                    const HRNHyper& hyper) {
  HrnHeadObjective out;
  out.net_grad = GradientBundle::zeros_like(head.net);
  out.weight_grad = Vec::Zero(head.weight.size());
  if (in_class.empty()) return out;
  const double n = static_cast<double>(in_class.size());
  for (const auto& x : in_class) {
    const ForwardTrace t = forward_trace(head.net, x);
    const double f = head.weight.dot(t.output()) + head.bias;
    const Vec input_grad = *backward(head.net, t, head.weight, true).input_grad;
    const HRNLoss h = hrn_loss(f, input_grad, hyper);
    out.value += h.value / n;
    const double d_f = h.grad_logit / n;
    out.output_grads.push_back(d_f * head.weight);
    out.weight_grad += d_f * t.output();
    out.bias_grad += d_f;
    // Penalty: d/dtheta <u, J^T w> = d/dtheta w^T J u with u held fixed.
    const DirectionalGradient dg = directional_backward(head.net, x, h.grad_input_grad / n, head.weight);
    out.net_grad += dg.params;
    out.weight_grad += dg.jvp;
  }
  return out;
}

json log_to_json(const TrainLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"total", e.total},
                      {"ood", e.ood},
                      {"contrastive", e.contrastive},
                      {"val_auroc", e.val_auroc ? json(*e.val_auroc) : json(nullptr)}});
  }
  return {{"epochs", epochs}, {"best_epoch", log.best_epoch}, {"stopped_early", log.stopped_early}};
}

json hyper_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.beta1},
          {"adam_beta2", c.beta2},
          {"seed", c.seed},
          {"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"temperature", c.temperature},
          {"contrastive_mode", c.contrastive_mode == ContrastiveMode::MeanInsideExp ? "mean_inside_exp" : "per_positive"},
          {"human_contrastive_group", c.human_contrastive_group},
          {"hrn_lambda", c.hrn.lambda},
          {"hrn_n", c.hrn.n},
          {"hrn_aggregation", c.hrn_aggregation == HrnAggregation::Max ? "max" : "mean"},
          {"energy_lambda", c.energy.lambda},
          {"m_in", c.energy.m_in},
          {"m_out", c.energy.m_out},
          {"hidden_dims", c.hidden_dims},
          {"out_dim", c.out_dim},
          {"activation", to_string(c.activation)},
          {"center_guard", c.center_guard},
          {"early_stopping", c.early_stopping},
          {"patience", c.patience}};
}

// ---------------------------------------------------------------------------
// Training

namespace {

class Adam {
 public:
  Adam(Eigen::Index n, const TrainConfig& c)
      : m_(Vec::Zero(n)), v_(Vec::Zero(n)), lr_(c.learning_rate), b1_(c.beta1), b2_(c.beta2), eps_(c.adam_epsilon) {}

  void step(Vec& params, const Vec& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  Vec m_;
  Vec v_;
  double lr_;
  double b1_;
  double b2_;
  double eps_;
  int t_ = 0;
};

struct BatchLoss {
  double total = 0.0;
  double ood = 0.0;
  double contrastive = 0.0;
};

using Batch = std::vector<const Sample*>;

// Packs parameter blocks of a detector into one flat vector and back.
class ParamPack {
 public:
  void add_net(ProjectionNet* net) { blocks_.push_back({net, nullptr, nullptr, nullptr}); }
  void add_vec(Vec* v) { blocks_.push_back({nullptr, v, nullptr, nullptr}); }
  void add_mat(Mat* m) { blocks_.push_back({nullptr, nullptr, m, nullptr}); }
  void add_scalar(double* s) { blocks_.push_back({nullptr, nullptr, nullptr, s}); }

  Vec get() const {
    std::vector<double> flat;
    for (const auto& b : blocks_) {
      if (b.net) {
        const Vec p = flatten_params(*b.net);
        flat.insert(flat.end(), p.data(), p.data() + p.size());
      } else if (b.vec) {
        flat.insert(flat.end(), b.vec->data(), b.vec->data() + b.vec->size());
      } else if (b.mat) {
        flat.insert(flat.end(), b.mat->data(), b.mat->data() + b.mat->size());
      } else {
        flat.push_back(*b.scalar);
      }
    }
    return Eigen::Map<const Vec>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  }

  void set(const Vec& flat) const {
    Eigen::Index at = 0;
    for (const auto& b : blocks_) {
      if (b.net) {
        const auto n = static_cast<Eigen::Index>(b.net->param_count());
        assign_params(*b.net, flat.segment(at, n));
        at += n;
      } else if (b.vec) {
        *b.vec = flat.segment(at, b.vec->size());
        at += b.vec->size();
      } else if (b.mat) {
        b.mat->reshaped() = flat.segment(at, b.mat->size());
        at += b.mat->size();
      } else {
        *b.scalar = flat[at++];
      }
    }
  }

 private:
  struct Block {
    ProjectionNet* net;
    Vec* vec;
    Mat* mat;
    double* scalar;
  };
  std::vector<Block> blocks_;
};

// Flat gradient assembled in the same block order as ParamPack.
class GradPack {
 public:
  void add(const GradientBundle& g) {
    const Vec f = g.flatten();
    flat_.insert(flat_.end(), f.data(), f.data() + f.size());
  }
  void add(const Vec& v) { flat_.insert(flat_.end(), v.data(), v.data() + v.size()); }
  void add(const Mat& m) { flat_.insert(flat_.end(), m.data(), m.data() + m.size()); }
  void add(double s) { flat_.push_back(s); }
  Vec get() const { return Eigen::Map<const Vec>(flat_.data(), static_cast<Eigen::Index>(flat_.size())); }

 private:
  std::vector<double> flat_;
};

std::vector<int> contrastive_groups(const Batch& batch, const Dataset& ds, bool human_group) {
  std::vector<int> groups;
  groups.reserve(batch.size());
  const int human_id = static_cast<int>(ds.families.size());
  for (const auto* s : batch) {
    if (s->is_machine()) {
      groups.push_back(*ds.family_index(*s->label->family));
    } else {
      groups.push_back(human_group ? human_id : -1);
    }
  }
  return groups;
}

struct NetPass {
  std::vector<ForwardTrace> traces;
  std::vector<Vec> outputs;
};

NetPass run_net(const ProjectionNet& net, const Batch& batch) {
  NetPass p;
  p.traces.reserve(batch.size());
  p.outputs.reserve(batch.size());
  for (const auto* s : batch) {
    p.traces.push_back(forward_trace(net, s->embedding));
    p.outputs.push_back(p.traces.back().output());
  }
  return p;
}

Objective contrastive_term(const NetPass& pass, const Batch& batch, const Dataset& ds, const TrainConfig& c) {
  if (c.weights.beta == 0.0) return {0.0, {}};
  const auto groups = contrastive_groups(batch, ds, c.human_contrastive_group);
  return batch_contrastive_loss(pass.outputs, groups, c.temperature, c.contrastive_mode);
}

GradientBundle backprop_outputs(const ProjectionNet& net, const NetPass& pass, const std::vector<Vec>& grads) {
  GradientBundle g = GradientBundle::zeros_like(net);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() == 0) continue;
    g += backward(net, pass.traces[i], grads[i]);
  }
  return g;
}

// Objective of one projection net plus its readout, with the gradient
// appended to `grad` in ParamPack order.
using BatchObjective = std::function<BatchLoss(const Batch&, GradPack&)>;

struct TrainSetup {
  ParamPack params;
  BatchObjective objective;
  Detector* detector;
};

TrainLog run_training(TrainSetup& setup, const Dataset& ds, const TrainConfig& c) {
  Batch train_set;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train && s.labeled()) train_set.push_back(&s);
  }
  std::vector<ScoredSample> val_template;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Val && s.labeled()) val_template.push_back({s.id, s.label->kind, 0.0});
  }
  std::vector<const Sample*> val_samples;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Val && s.labeled()) val_samples.push_back(&s);
  }
  const bool has_val = std::any_of(val_template.begin(), val_template.end(), [](const auto& v) { return v.truth == Kind::Human; }) &&
                       std::any_of(val_template.begin(), val_template.end(), [](const auto& v) { return v.truth == Kind::Machine; });
  const bool early = c.early_stopping && has_val;
  if (c.early_stopping && !has_val) warn("validation split lacks both classes; early stopping disabled");

  Vec params = setup.params.get();
  Adam adam(params.size(), c);
  std::mt19937_64 rng(c.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  double best_auroc = -1.0;
  Vec best_params = params;
  int since_best = 0;
  const std::size_t bs = static_cast<std::size_t>(c.batch_size);

  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      Batch batch;
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(train_set[order[k]]);
      GradPack gp;
      const int batch_no = static_cast<int>(n_batches) + 1;
      BatchLoss loss;
      try {
        loss = setup.objective(batch, gp);
      } catch (const NumericError& err) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                           " (" + err.what() + ")");
      }
      const Vec grad = gp.get();
      if (!std::isfinite(loss.total) || !grad.allFinite()) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      }
      adam.step(params, grad);
      if (!params.allFinite()) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      }
      setup.params.set(params);
      e.total += loss.total;
      e.ood += loss.ood;
      e.contrastive += loss.contrastive;
      ++n_batches;
    }
    if (n_batches > 0) {
      e.total /= static_cast<double>(n_batches);
      e.ood /= static_cast<double>(n_batches);
      e.contrastive /= static_cast<double>(n_batches);
    }
    if (has_val) {
      std::vector<ScoredSample> scored = val_template;
      for (std::size_t i = 0; i < scored.size(); ++i) scored[i].score = setup.detector->score(val_samples[i]->embedding);
      e.val_auroc = auroc(scored);
    }
    log.epochs.push_back(e);
    if (early) {
      // Ties keep the later parameters: a saturated validation AUROC should
      // not freeze the first epoch.
      if (*e.val_auroc >= best_auroc) {
        best_auroc = *e.val_auroc;
        best_params = params;
        log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= c.patience) {
        log.stopped_early = true;
        break;
      }
    }
  }
  if (early) {
    setup.params.set(best_params);
  } else {
    log.best_epoch = static_cast<int>(log.epochs.size());
  }
  return log;
}

std::vector<int> layer_dims_for(int input_dim, const TrainConfig& c) {
  std::vector<int> dims{input_dim};
  if (c.hidden_dims.empty()) {
    dims.push_back(input_dim);
  } else {
    dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  }
  dims.push_back(c.out_dim);
  return dims;
}

}  // namespace

TrainResult train(Method method, const Dataset& ds, const TrainConfig& c) {
  validate(c);
  std::vector<Embedding> machine_train;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train && s.is_machine()) machine_train.push_back(s.embedding);
  }
  if (machine_train.empty()) throw DataError("train: no machine training samples");
  const std::size_t n_fam = ds.families.size();
  if (method == Method::Energy && n_fam < 2) {
    warn("energy detector with a single family: the cross-entropy term is identically zero");
  }
  const auto dims = layer_dims_for(ds.dim, c);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(c.out_dim));
  const LossWeights w = c.weights;

  TrainResult result;
  TrainSetup setup;

  switch (method) {
    case Method::DeepSVDD: {
      ProjectionNet net = init_net(dims, c.activation, c.seed);
      Vec center = compute_center(machine_train, net, c.center_guard);
      auto det = std::make_unique<DeepSVDDDetector>(std::move(net), std::move(center));
      DeepSVDDDetector* d = det.get();
      setup.params.add_net(&d->net);
      setup.objective = [d, &ds, &c, w](const Batch& batch, GradPack& gp) {
        const NetPass pass = run_net(d->net, batch);
        std::vector<Vec> machine_out;
        std::vector<std::size_t> machine_idx;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          if (batch[i]->is_machine()) {
            machine_out.push_back(pass.outputs[i]);
            machine_idx.push_back(i);
          }
        }
        Objective ood{0.0, std::vector<Vec>(batch.size(), Vec::Zero(d->net.output_dim()))};
        if (!machine_out.empty()) {
          const Objective sv = deepsvdd_loss(machine_out, d->center());
          ood.value = sv.value;
          for (std::size_t k = 0; k < machine_idx.size(); ++k) ood.grads[machine_idx[k]] = sv.grads[k];
        }
        const Objective con = contrastive_term(pass, batch, ds, c);
        const Objective tot = total_loss(ood, con, w);
        gp.add(backprop_outputs(d->net, pass, tot.grads));
        return BatchLoss{tot.value, ood.value, con.value};
      };
      setup.detector = d;
      result.detector = std::move(det);
      break;
    }
    case Method::Energy: {
      auto det = std::make_unique<EnergyDetector>();
      EnergyDetector* d = det.get();
      d->net = init_net(dims, c.activation, c.seed);
      d->classifier = uniform_mat(static_cast<int>(n_fam), c.out_dim, head_bound, c.seed + 7919);
      d->classifier_bias = Vec::Zero(static_cast<Eigen::Index>(n_fam));
      d->hyper = c.energy;
      setup.params.add_net(&d->net);
      setup.params.add_mat(&d->classifier);
      setup.params.add_vec(&d->classifier_bias);
      setup.objective = [d, &ds, &c, w](const Batch& batch, GradPack& gp) {
        const NetPass pass = run_net(d->net, batch);
        std::vector<LabeledLogits> id;
        std::vector<Vec> ood_logits;
        std::vector<std::size_t> id_idx;
        std::vector<std::size_t> ood_idx;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Vec logits = d->classifier * pass.outputs[i] + d->classifier_bias;
          if (batch[i]->is_machine()) {
            id.push_back({std::move(logits), *ds.family_index(*batch[i]->label->family)});
            id_idx.push_back(i);
          } else {
            ood_logits.push_back(std::move(logits));
            ood_idx.push_back(i);
          }
        }
        const EnergyLoss el = energy_loss(id, ood_logits, d->hyper);
        Objective ood{el.value, std::vector<Vec>(batch.size())};
        Mat grad_c = Mat::Zero(d->classifier.rows(), d->classifier.cols());
        Vec grad_b = Vec::Zero(d->classifier_bias.size());
        auto route = [&](std::size_t i, const Vec& g_logits) {
          ood.grads[i] = d->classifier.transpose() * g_logits;
          grad_c += w.alpha * g_logits * pass.outputs[i].transpose();
          grad_b += w.alpha * g_logits;
        };
        for (std::size_t k = 0; k < id_idx.size(); ++k) route(id_idx[k], el.grads_id[k]);
        for (std::size_t k = 0; k < ood_idx.size(); ++k) route(ood_idx[k], el.grads_ood[k]);
        const Objective con = contrastive_term(pass, batch, ds, c);
        const Objective tot = total_loss(ood, con, w);
        gp.add(backprop_outputs(d->net, pass, tot.grads));
        gp.add(grad_c);
        gp.add(grad_b);
        return BatchLoss{tot.value, ood.value, con.value};
      };
      setup.detector = d;
      result.detector = std::move(det);
      break;
    }
    case Method::Bce: {
      auto det = std::make_unique<BinaryHeadDetector>();
      BinaryHeadDetector* d = det.get();
      d->net = init_net(dims, c.activation, c.seed);
      d->weight = uniform_vec(c.out_dim, head_bound, c.seed + 7919);
      setup.params.add_net(&d->net);
      setup.params.add_vec(&d->weight);
      setup.params.add_scalar(&d->bias);
      setup.objective = [d, &ds, &c, w](const Batch& batch, GradPack& gp) {
        const NetPass pass = run_net(d->net, batch);
        const double n = static_cast<double>(batch.size());
        Objective ood{0.0, std::vector<Vec>(batch.size())};
        Vec grad_w = Vec::Zero(d->weight.size());
        double grad_b = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const double f = d->weight.dot(pass.outputs[i]) + d->bias;
          const double y = batch[i]->is_human() ? 1.0 : 0.0;
          // BCE with logits: max(f,0) - f y + log(1 + exp(-|f|))
          ood.value += (std::max(f, 0.0) - f * y + std::log1p(std::exp(-std::abs(f)))) / n;
          const double d_f = (sigmoid(f) - y) / n;
          ood.grads[i] = d_f * d->weight;
          grad_w += w.alpha * d_f * pass.outputs[i];
          grad_b += w.alpha * d_f;
        }
        const Objective con = contrastive_term(pass, batch, ds, c);
        const Objective tot = total_loss(ood, con, w);
        gp.add(backprop_outputs(d->net, pass, tot.grads));
        gp.add(grad_w);
        gp.add(grad_b);
        return BatchLoss{tot.value, ood.value, con.value};
      };
      setup.detector = d;
      result.detector = std::move(det);
      break;
    }
    case Method::HRN: {
      auto det = std::make_unique<HRNDetector>();
      HRNDetector* d = det.get();
      d->hyper = c.hrn;
      d->aggregation = c.hrn_aggregation;
      d->heads.resize(n_fam);
      for (std::size_t k = 0; k < n_fam; ++k) {
        auto& h = d->heads[k];
        h.net = init_net(dims, c.activation, c.seed + 101 * (k + 1));
        h.weight = uniform_vec(c.out_dim, head_bound, c.seed + 7919 + k);
        setup.params.add_net(&h.net);
        setup.params.add_vec(&h.weight);
        setup.params.add_scalar(&h.bias);
      }
      // Heads share batches but not parameters, so summing their objectives
      // trains each head independently; logged losses are head averages.
      setup.objective = [d, &ds, &c, w](const Batch& batch, GradPack& gp) {
        BatchLoss total;
        const double k_heads = static_cast<double>(d->heads.size());
        for (std::size_t k = 0; k < d->heads.size(); ++k) {
          const HrnHead& head = d->heads[k];
          const NetPass pass = run_net(head.net, batch);
          std::vector<Embedding> in_class;
          std::vector<std::size_t> in_idx;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            if (batch[i]->is_machine() && *ds.family_index(*batch[i]->label->family) == static_cast<int>(k)) {
              in_class.push_back(batch[i]->embedding);
              in_idx.push_back(i);
            }
          }
          const HrnHeadObjective ho = hrn_head_objective(head, in_class, d->hyper);
          Objective ood{ho.value, std::vector<Vec>(batch.size())};
          for (std::size_t m = 0; m < in_idx.size(); ++m) ood.grads[in_idx[m]] = ho.output_grads[m];
          const Objective con = contrastive_term(pass, batch, ds, c);
          const Objective tot = total_loss(ood, con, w);
          GradientBundle g = backprop_outputs(head.net, pass, tot.grads);
          GradientBundle pen = ho.net_grad;
          pen *= w.alpha;
          g += pen;
          gp.add(g);
          gp.add(Vec(w.alpha * ho.weight_grad));
          gp.add(w.alpha * ho.bias_grad);
          total.total += tot.value / k_heads;
          total.ood += ood.value / k_heads;
          total.contrastive += con.value / k_heads;
        }
        return total;
      };
      setup.detector = d;
      result.detector = std::move(det);
      break;
    }
  }
  result.detector->families = ds.families;
  result.detector->hyper = hyper_to_json(c);
  result.detector->hyper["method"] = to_string(method);
  result.log = run_training(setup, ds, c);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

std::string serialize_detector(const Detector& detector) { return detector.to_json().dump(1) + "\n"; }

void save_detector(const Detector& detector, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << serialize_detector(detector);
}

std::unique_ptr<Detector> detector_from_json(const json& j) {
  try {
    if (!j.contains("version") || j["version"] != 1) {
      throw VersionError("unsupported checkpoint version " + (j.contains("version") ? j["version"].dump() : std::string("<missing>")));
    }
    const Method method = parse_method(j.at("detector").get<std::string>());
    std::unique_ptr<Detector> det;
    auto net_json = [&j]() {
      json n = j;
      n["version"] = 1;
      return n;
    };
    switch (method) {
      case Method::DeepSVDD: {
        det = std::make_unique<DeepSVDDDetector>(net_from_json(net_json()), vec_from_json(j.at("center")));
        break;
      }
      case Method::Energy: {
        auto d = std::make_unique<EnergyDetector>();
        d->net = net_from_json(net_json());
        const auto& rows = j.at("classifier").at("weights");
        d->classifier.resize(static_cast<Eigen::Index>(rows.size()), d->net.output_dim());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const Vec row = vec_from_json(rows[r]);
          if (row.size() != d->net.output_dim()) throw DataError("classifier row width mismatch");
          d->classifier.row(static_cast<Eigen::Index>(r)) = row.transpose();
        }
        d->classifier_bias = vec_from_json(j.at("classifier").at("bias"));
        if (d->classifier_bias.size() != d->classifier.rows()) throw DataError("classifier bias size mismatch");
        const auto& h = j.at("hyper");
        if (h.contains("m_in")) d->hyper.m_in = h["m_in"];
        if (h.contains("m_out")) d->hyper.m_out = h["m_out"];
        if (h.contains("energy_lambda")) d->hyper.lambda = h["energy_lambda"];
        det = std::move(d);
        break;
      }
      case Method::Bce: {
        auto d = std::make_unique<BinaryHeadDetector>();
        d->net = net_from_json(net_json());
        d->weight = vec_from_json(j.at("head_weight"));
        d->bias = j.at("head_bias").get<double>();
        if (d->weight.size() != d->net.output_dim()) throw DataError("head weight size mismatch");
        det = std::move(d);
        break;
      }
      case Method::HRN: {
        auto d = std::make_unique<HRNDetector>();
        d->aggregation = j.value("aggregation", std::string("mean")) == "max" ? HrnAggregation::Max : HrnAggregation::Mean;
        for (const auto& hj : j.at("heads")) {
          json n = hj;
          n["version"] = 1;
          HrnHead head;
          head.net = net_from_json(n);
          head.weight = vec_from_json(hj.at("head_weight"));
          head.bias = hj.at("head_bias").get<double>();
          if (head.weight.size() != head.net.output_dim()) throw DataError("head weight size mismatch");
          d->heads.push_back(std::move(head));
        }
        if (d->heads.empty()) throw DataError("HRN checkpoint has no heads");
        const auto& h = j.at("hyper");
        if (h.contains("hrn_lambda")) d->hyper.lambda = h["hrn_lambda"];
        if (h.contains("hrn_n")) d->hyper.n = h["hrn_n"];
        det = std::move(d);
        break;
      }
    }
    det->families = j.at("families").get<std::vector<std::string>>();
    if (!j.at("threshold").is_null()) det->threshold = j["threshold"].get<double>();
    det->hyper = j.at("hyper");
    return det;
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupted checkpoint: ") + e.what());
  }
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corrupted checkpoint: ") + e.what());
  }
  return detector_from_json(j);
}

}  // namespace mgtood
