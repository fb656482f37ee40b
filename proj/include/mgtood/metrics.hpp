#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtood/core.hpp"

namespace mgtood {

// Human is the positive class throughout; higher scores mean "more human".

struct ScoredSample {
  std::string id;
  Kind truth = Kind::Machine;
  double score = 0.0;
};

double auroc(std::span<const ScoredSample> scored);
double aupr(std::span<const ScoredSample> scored);
double fpr_at_tpr(std::span<const ScoredSample> scored, double tpr_target = 0.95);

enum class ThresholdPolicy { TPR95, MaxF1 };

ThresholdPolicy parse_policy(std::string_view text);

/// Threshold for the strict rule "Human iff score > threshold".
double calibrate_threshold(std::span<const ScoredSample> scored, ThresholdPolicy policy);

struct AccuracyF1 {
  double accuracy = 0.0;
  double f1 = 0.0;
};

AccuracyF1 accuracy_f1(std::span<const ScoredSample> scored, double threshold);

struct EvalReport {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  std::optional<double> accuracy;
  std::optional<double> f1;
  std::optional<double> threshold_used;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

EvalReport evaluate(std::span<const ScoredSample> scored, std::optional<double> threshold = std::nullopt);

nlohmann::json report_to_json(const EvalReport& report);

/// Aligned text table with AUROC / AUPR / FPR95 columns (percent).
std::string render_table(const EvalReport& report, const std::string& name);

}  // namespace mgtood
