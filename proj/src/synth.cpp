#include "mgtood/synth.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace mgtood {

namespace {

Vec random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = n(rng);
  } while (v.norm() < 1e-8);
  return v.normalized();
}

Vec gaussian_around(const Vec& center, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(center.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = center[i] + sigma * n(rng);
  return v;
}

// Splits of a group of n samples: first 70% train, next 15% val, rest test.
Split split_of(int index, int n) {
  const int n_train = (n * 70) / 100;
  const int n_val = (n * 15) / 100;
  if (index < n_train) return Split::Train;
  if (index < n_train + n_val) return Split::Val;
  return Split::Test;
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.dim < 2) throw ConfigError("synth: dim must be at least 2");
  if (spec.n_families < 1) throw ConfigError("synth: n_families must be positive");
  if (spec.n_human_modes < 1) throw ConfigError("synth: n_human_modes must be positive");
  if (spec.samples_per_group < 1) throw ConfigError("synth: samples_per_group must be positive");
  if (!(spec.machine_sigma >= 0.0)) throw ConfigError("synth: machine_sigma must be non-negative");
  if (!(spec.human_sigma > 0.0)) throw ConfigError("synth: human_sigma must be positive");
  if (!(spec.mode_separation > 0.0)) throw ConfigError("synth: mode_separation must be positive");
  if (spec.unseen_test_human_modes < 0) throw ConfigError("synth: unseen_test_human_modes must be non-negative");
}

Dataset generate(const SynthSpec& spec) {
  validate(spec);
  if (spec.human_sigma <= spec.machine_sigma) warn("synth: human_sigma <= machine_sigma; human data will not be more dispersed");

  std::mt19937_64 rng(spec.seed);
  const Vec anchor = random_unit(spec.dim, rng);

  std::vector<Vec> family_centers;
  for (int k = 0; k < spec.n_families; ++k) {
    family_centers.push_back(spec.mode_separation * (anchor + random_unit(spec.dim, rng)).normalized());
  }
  std::vector<Vec> human_centers;
  for (int j = 0; j < spec.n_human_modes; ++j) {
    human_centers.push_back(spec.mode_separation * (-anchor + random_unit(spec.dim, rng)).normalized());
  }
  // Separate stream so enabling the shift leaves every other sample unchanged.
  std::mt19937_64 unseen_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Vec> unseen_centers;
  for (int j = 0; j < spec.unseen_test_human_modes; ++j) {
    unseen_centers.push_back(spec.mode_separation * random_unit(spec.dim, unseen_rng));
  }

  Dataset ds;
  ds.dim = spec.dim;
  ds.encoder = "synthetic";
  const int n = spec.samples_per_group;

  for (int k = 0; k < spec.n_families; ++k) {
    const std::string family = "family" + std::to_string(k);
    ds.families.push_back(family);
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.id = "m" + std::to_string(k) + "-" + std::to_string(i);
      s.embedding = gaussian_around(family_centers[k], spec.machine_sigma, rng);
      s.label = Label::machine(family);
      s.split = split_of(i, n);
      ds.samples.push_back(std::move(s));
    }
  }

  std::uniform_int_distribution<int> pick_mode(0, spec.n_human_modes - 1);
  std::uniform_int_distribution<int> pick_unseen(0, std::max(0, spec.unseen_test_human_modes - 1));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = "h-" + std::to_string(i);
    s.split = split_of(i, n);
    const bool unseen = s.split == Split::Test && !unseen_centers.empty();
    const Vec& center = unseen ? unseen_centers[pick_unseen(rng)] : human_centers[pick_mode(rng)];
    s.embedding = gaussian_around(center, spec.human_sigma, rng);
    s.label = Label::human();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace mgtood
