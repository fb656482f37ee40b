#include "mgtood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>

namespace mgtood {

namespace {

struct Group {
  double score;
  std::uint64_t pos;
  std::uint64_t neg;
};

// Distinct scores in ascending order with per-class counts.
std::vector<Group> group_scores(std::span<const ScoredSample> scored) {
  std::vector<std::pair<double, bool>> v;
  v.reserve(scored.size());
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw NumericError("metrics: non-finite score for '" + s.id + "'");
    v.emplace_back(s.score, s.truth == Kind::Human);
  }
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Group> groups;
  for (const auto& [score, human] : v) {
    if (groups.empty() || groups.back().score != score) groups.push_back({score, 0, 0});
    (human ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

void count_classes(const std::vector<Group>& groups, std::uint64_t& np, std::uint64_t& nn) {
  np = nn = 0;
  for (const auto& g : groups) {
    np += g.pos;
    nn += g.neg;
  }
}

void require_both(std::uint64_t np, std::uint64_t nn, const char* what) {
  if (np == 0 || nn == 0) throw DataError(std::string(what) + ": needs at least one human and one machine sample");
}

bool meets_tpr(std::uint64_t tp, std::uint64_t np, double target) {
  return static_cast<double>(tp) >= target * static_cast<double>(np) - 1e-9;
}

double f1_score(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

// Index (into ascending groups) of the largest threshold t such that the
// rule "score >= t" reaches the TPR target.
std::size_t tpr_group(const std::vector<Group>& groups, std::uint64_t np, double target) {
  std::uint64_t tp = 0;
  for (std::size_t k = groups.size(); k-- > 0;) {
    tp += groups[k].pos;
    if (meets_tpr(tp, np, target)) return k;
  }
  return 0;
}

}  // namespace

double auroc(std::span<const ScoredSample> scored) {
  const auto groups = group_scores(scored);
  std::uint64_t np = 0;
  std::uint64_t nn = 0;
  count_classes(groups, np, nn);
  require_both(np, nn, "auroc");
  // Twice the Mann-Whitney U: each tie counts one half.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (const auto& g : groups) {
    twice_u += 2 * g.pos * neg_below + g.pos * g.neg;
    neg_below += g.neg;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

double aupr(std::span<const ScoredSample> scored) {
  const auto groups = group_scores(scored);
  std::uint64_t np = 0;
  std::uint64_t nn = 0;
  count_classes(groups, np, nn);
  if (np == 0) throw DataError("aupr: no human samples");
  // Step-wise sum over distinct thresholds, highest first.
  double area = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  for (std::size_t k = groups.size(); k-- > 0;) {
    tp += groups[k].pos;
    fp += groups[k].neg;
    if (groups[k].pos == 0) continue;
    area += static_cast<double>(groups[k].pos) / static_cast<double>(np) *
            (static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return area;
}

double fpr_at_tpr(std::span<const ScoredSample> scored, double tpr_target) {
  const auto groups = group_scores(scored);
  std::uint64_t np = 0;
  std::uint64_t nn = 0;
  count_classes(groups, np, nn);
  require_both(np, nn, "fpr_at_tpr");
  const std::size_t k = tpr_group(groups, np, tpr_target);
  std::uint64_t fp = 0;
  for (std::size_t i = k; i < groups.size(); ++i) fp += groups[i].neg;
  return static_cast<double>(fp) / static_cast<double>(nn);
}

ThresholdPolicy parse_policy(std::string_view text) {
  if (text == "tpr95") return ThresholdPolicy::TPR95;
  if (text == "maxf1") return ThresholdPolicy::MaxF1;
  throw ConfigError("unknown threshold policy '" + std::string(text) + "' (expected tpr95|maxf1)");
}

double calibrate_threshold(std::span<const ScoredSample> scored, ThresholdPolicy policy) {
  const auto groups = group_scores(scored);
  std::uint64_t np = 0;
  std::uint64_t nn = 0;
  count_classes(groups, np, nn);
  require_both(np, nn, "calibrate_threshold");

  if (policy == ThresholdPolicy::TPR95) {
    const std::size_t k = tpr_group(groups, np, 0.95);
    // Midpoint to the next lower score keeps group k on the Human side.
    return k == 0 ? groups[0].score - 1.0 : 0.5 * (groups[k].score + groups[k - 1].score);
  }

  // MaxF1: candidate thresholds are min - 1 (everything Human) and every
  // distinct score; ascending sweep with strict improvement keeps the
  // smaller threshold on ties.
  std::uint64_t tp = np;
  std::uint64_t fp = nn;
  double best_threshold = groups[0].score - 1.0;
  double best_f1 = f1_score(tp, fp, np - tp);
  for (const auto& g : groups) {
    tp -= g.pos;
    fp -= g.neg;
    const double f1 = f1_score(tp, fp, np - tp);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_threshold = g.score;
    }
  }
  return best_threshold;
}

AccuracyF1 accuracy_f1(std::span<const ScoredSample> scored, double threshold) {
  if (!std::isfinite(threshold)) throw ConfigError("accuracy_f1: threshold must be finite");
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
  for (const auto& s : scored) {
    const bool predicted_human = s.score > threshold;
    const bool human = s.truth == Kind::Human;
    if (predicted_human && human) ++tp;
    else if (predicted_human) ++fp;
    else if (human) ++fn;
    else ++tn;
  }
  AccuracyF1 r;
  if (!scored.empty()) r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scored.size());
  r.f1 = f1_score(tp, fp, fn);
  return r;
}

EvalReport evaluate(std::span<const ScoredSample> scored, std::optional<double> threshold) {
  EvalReport r;
  for (const auto& s : scored) (s.truth == Kind::Human ? r.n_pos : r.n_neg) += 1;
  r.auroc = auroc(scored);
  r.aupr = aupr(scored);
  r.fpr95 = fpr_at_tpr(scored, 0.95);
  if (threshold) {
    const auto af = accuracy_f1(scored, *threshold);
    r.accuracy = af.accuracy;
    r.f1 = af.f1;
    r.threshold_used = threshold;
  }
  return r;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j = {{"auroc", report.auroc},
                      {"aupr", report.aupr},
                      {"fpr95", report.fpr95},
                      {"n_pos", report.n_pos},
                      {"n_neg", report.n_neg}};
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["accuracy"] = opt(report.accuracy);
  j["f1"] = opt(report.f1);
  j["threshold_used"] = opt(report.threshold_used);
  return j;
}

std::string render_table(const EvalReport& report, const std::string& name) {
  std::ostringstream out;
  const int w = std::max<int>(8, static_cast<int>(name.size()));
  out << std::left << std::setw(w) << "Method" << "  " << std::right << std::setw(8) << "AUROC"
      << std::setw(8) << "AUPR" << std::setw(8) << "FPR95";
  if (report.accuracy) out << std::setw(10) << "Accuracy" << std::setw(8) << "F1";
  out << '\n';
  out << std::left << std::setw(w) << name << "  " << std::right << std::fixed << std::setprecision(2)
      << std::setw(8) << 100.0 * report.auroc << std::setw(8) << 100.0 * report.aupr << std::setw(8)
      << 100.0 * report.fpr95;
  if (report.accuracy) out << std::setw(10) << 100.0 * *report.accuracy << std::setw(8) << 100.0 * *report.f1;
  out << '\n';
  return out.str();
}

}  // namespace mgtood
