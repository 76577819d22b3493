#pragma once

#include <chanlab/data/dataset.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chanlab::data {

// Binary tasks: label 0 is c+ and label 1 is c-.
inline constexpr Label kPositiveLabel = 0;
inline constexpr Label kNegativeLabel = 1;

struct SamplingSpec {
  std::size_t k = 16;
  std::uint64_t data_seed = 0;
  // Exact fraction of c- examples; rounded half away from zero to a count.
  std::optional<double> p_minus;
  bool upsample = false;
  std::optional<Label> excluded_label;

  bool operator==(const SamplingSpec&) const = default;
};

struct FewShotSet {
  std::vector<Example> examples;
  std::vector<std::size_t> pool_indices;  // parallel to examples
  SamplingSpec spec;

  std::size_t size() const { return examples.size(); }
  std::vector<std::size_t> label_counts(std::size_t num_labels) const;
  bool operator==(const FewShotSet&) const = default;
};

// Number of c- examples for a K-shot draw at ratio p_minus.
std::size_t minus_count(std::size_t k, double p_minus);

// The label held out for a data seed in the unseen-label ablation.
Label pick_excluded_label(std::size_t num_labels, std::uint64_t data_seed);

FewShotSet sample_fewshot(const Dataset& pool, const SamplingSpec& spec);

std::string to_json(const FewShotSet& set, const std::vector<std::string>& labels);

}  // namespace chanlab::data
