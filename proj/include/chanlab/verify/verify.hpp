#pragma once

#include <chanlab/lm/gradients.hpp>

#include <string>
#include <vector>

namespace chanlab::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Reverse-mode gradients of one subset against central differences on a
// seeded 2-layer toy LM.
CheckResult gradient_check(lm::GradientSubset subset, int coordinates = 100, double step = 1e-4,
                           double tolerance = 1e-3);

// Trains every tuning method for `steps` steps and compares per-tensor hashes
// of everything that is not the method's own delta.
CheckResult frozen_parameters(int steps = 100);

// Ensemble score equals the sum of one-demonstration scores.
CheckResult ensemble_additivity(double tolerance = 1e-9);
// Ensemble predictions under all 4! orderings of a K=4 set.
CheckResult ensemble_permutation_invariance(double tolerance = 1e-9);
// Searches seeded LMs for a concat prediction that flips under reordering
// while the ensemble prediction stays put.
CheckResult concat_order_flip();

// All nine scoring cells on a bigram-table LM against hand computation.
CheckResult bigram_oracle(double tolerance = 1e-9);

// Identity transform, fresh untied head and prompt rows copied from real
// embeddings reproduce the untuned scores.
CheckResult zero_effect_deltas(double tolerance = 1e-6);

std::vector<CheckResult> run_all();

}  // namespace chanlab::verify
