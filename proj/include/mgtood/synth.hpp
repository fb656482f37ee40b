#pragma once

#include <cstdint>

#include "mgtood/core.hpp"

namespace mgtood {

struct SynthSpec {
  int dim = 16;
  int n_families = 3;
  double machine_sigma = 0.1;
  int n_human_modes = 4;
  double human_sigma = 1.0;
  int samples_per_group = 200;
  double mode_separation = 3.0;
  std::uint64_t seed = 0;
  /// When positive, test-split humans come from this many fresh modes
  /// instead of the training modes (unseen-human shift). The fresh modes
  /// point in uniformly random directions.
  int unseen_test_human_modes = 0;
};

void validate(const SynthSpec& spec);

/// Machine families are tight Gaussians around a shared anchor direction;
/// human modes sit on the opposite side and are wider. Each machine family
/// and the human pool are split 70/15/15 train/val/test.
Dataset generate(const SynthSpec& spec);

}  // namespace mgtood
