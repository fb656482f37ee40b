#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtood/core.hpp"
#include "mgtood/losses.hpp"
#include "mgtood/projection.hpp"

namespace mgtood {

/// Bce is the binary classification-head baseline used in ablations.
enum class Method { DeepSVDD, HRN, Energy, Bce };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);

enum class HrnAggregation { Mean, Max };

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights;
  double temperature = 0.07;
  ContrastiveMode contrastive_mode = ContrastiveMode::MeanInsideExp;
  bool human_contrastive_group = true;
  HRNHyper hrn;
  HrnAggregation hrn_aggregation = HrnAggregation::Mean;
  EnergyHyper energy;
  std::vector<int> hidden_dims;  // empty: one hidden layer of the input width
  int out_dim = 128;
  Activation activation = Activation::Tanh;
  double center_guard = 0.1;
  bool early_stopping = true;
  int patience = 3;
};

void validate(const TrainConfig& config);

/// Per-family head for HRN: a projection net and a scalar affine readout.
struct HrnHead {
  ProjectionNet net;
  Vec weight;
  double bias = 0.0;

  double logit(const Embedding& x) const { return weight.dot(forward(net, x)) + bias; }
};

class Detector {
 public:
  virtual ~Detector() = default;

  virtual Method method() const = 0;
  virtual int input_dim() const = 0;
  /// OOD score; higher means more likely human.
  virtual double score(const Embedding& x) const = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual std::unique_ptr<Detector> clone() const = 0;

  double score(const Sample& sample) const;

  std::vector<std::string> families;
  std::optional<double> threshold;
  nlohmann::json hyper = nlohmann::json::object();  // resolved training settings
};

class DeepSVDDDetector final : public Detector {
 public:
  DeepSVDDDetector(ProjectionNet net, Vec center);

  Method method() const override { return Method::DeepSVDD; }
  int input_dim() const override { return net.input_dim(); }
  double score(const Embedding& x) const override;
  using Detector::score;
  nlohmann::json to_json() const override;
  std::unique_ptr<Detector> clone() const override { return std::make_unique<DeepSVDDDetector>(*this); }

  ProjectionNet net;
  const Vec& center() const { return center_; }

 private:
  Vec center_;
};

class HRNDetector final : public Detector {
 public:
  Method method() const override { return Method::HRN; }
  int input_dim() const override { return heads.front().net.input_dim(); }
  double score(const Embedding& x) const override;
  using Detector::score;
  nlohmann::json to_json() const override;
  std::unique_ptr<Detector> clone() const override { return std::make_unique<HRNDetector>(*this); }

  std::vector<HrnHead> heads;  // aligned with families
  HrnAggregation aggregation = HrnAggregation::Mean;
  HRNHyper hyper;
};

class EnergyDetector final : public Detector {
 public:
  Method method() const override { return Method::Energy; }
  int input_dim() const override { return net.input_dim(); }
  double score(const Embedding& x) const override;
  using Detector::score;
  nlohmann::json to_json() const override;
  std::unique_ptr<Detector> clone() const override { return std::make_unique<EnergyDetector>(*this); }

  Vec logits(const Embedding& x) const;

  ProjectionNet net;
  Mat classifier;  // families x output dim
  Vec classifier_bias;
  EnergyHyper hyper;
};

/// Binary cross-entropy head; score is the human logit.
class BinaryHeadDetector final : public Detector {
 public:
  Method method() const override { return Method::Bce; }
  int input_dim() const override { return net.input_dim(); }
  double score(const Embedding& x) const override;
  using Detector::score;
  nlohmann::json to_json() const override;
  std::unique_ptr<Detector> clone() const override { return std::make_unique<BinaryHeadDetector>(*this); }

  ProjectionNet net;
  Vec weight;
  double bias = 0.0;
};

/// HRN objective of one head over its in-class samples (mean NLL plus mean
/// input-gradient penalty) with gradients for every head parameter. The
/// penalty gradient goes through directional_backward.
struct HrnHeadObjective {
  double value = 0.0;
  GradientBundle net_grad;
  Vec weight_grad;
  double bias_grad = 0.0;
  std::vector<Vec> output_grads;  // NLL part only, w.r.t. each projected sample
};
HrnHeadObjective hrn_head_objective(const HrnHead& head, std::span<const Embedding> in_class,
                                    const HRNHyper& hyper);

/// Mean of the net outputs, then every coordinate with |c_j| < guard is
/// pushed to +-guard (sign preserved, zero goes to +guard).
Vec compute_center(std::span<const Embedding> machine_train, const ProjectionNet& net, double guard = 0.1);

struct EpochLog {
  int epoch = 0;
  double total = 0.0;
  double ood = 0.0;
  double contrastive = 0.0;
  std::optional<double> val_auroc;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
};

nlohmann::json log_to_json(const TrainLog& log);

struct TrainResult {
  std::unique_ptr<Detector> detector;
  TrainLog log;
};

TrainResult train(Method method, const Dataset& dataset, const TrainConfig& config);

/// Human iff score > threshold.
Kind classify(const Detector& detector, const Embedding& x, double threshold);

nlohmann::json hyper_to_json(const TrainConfig& config);

void save_detector(const Detector& detector, const std::filesystem::path& path);
std::string serialize_detector(const Detector& detector);
std::unique_ptr<Detector> load_detector(const std::filesystem::path& path);
std::unique_ptr<Detector> detector_from_json(const nlohmann::json& j);

}  // namespace mgtood
