#include <chanlab/data/sampling.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/common/random.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace chanlab::data {
namespace {

constexpr std::uint64_t kDrawStream = 11;
constexpr std::uint64_t kExcludeStream = 12;

// First `count` entries of a seeded Fisher-Yates permutation of `from`.
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> from, std::size_t count,
                                                  Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, from.size() - i);
    std::swap(from[i], from[j]);
  }
  from.resize(count);
  return from;
}

void validate(const Dataset& pool, const SamplingSpec& spec) {
  if (spec.k == 0) {
    throw ConfigError("K must be positive");
  }
  if (spec.excluded_label &&
      (*spec.excluded_label < 0 || static_cast<std::size_t>(*spec.excluded_label) >= pool.num_labels())) {
    throw ConfigError("excluded_label " + std::to_string(*spec.excluded_label) +
                      " is outside the label set");
  }
  if (spec.p_minus) {
    if (pool.num_labels() != 2) {
      throw ConfigError("p_minus requires a binary task");
    }
    if (!(*spec.p_minus >= 0.0 && *spec.p_minus <= 0.5)) {
      throw ConfigError("p_minus must lie in [0, 0.5]");
    }
    if (spec.excluded_label) {
      throw ConfigError("p_minus and excluded_label cannot be combined");
    }
  }
}

}  // namespace

std::vector<std::size_t> FewShotSet::label_counts(std::size_t num_labels) const {
  std::vector<std::size_t> counts(num_labels, 0);
  for (const Example& ex : examples) {
    ++counts.at(static_cast<std::size_t>(ex.label));
  }
  return counts;
}

std::size_t minus_count(std::size_t k, double p_minus) {
  return static_cast<std::size_t>(std::lround(p_minus * static_cast<double>(k)));
}

Label pick_excluded_label(std::size_t num_labels, std::uint64_t data_seed) {
  if (num_labels == 0) {
    throw ConfigError("cannot exclude a label from an empty label set");
  }
  Rng rng = make_rng(data_seed, kExcludeStream);
  return static_cast<Label>(uniform_index(rng, num_labels));
}

FewShotSet sample_fewshot(const Dataset& pool, const SamplingSpec& spec) {
  validate(pool, spec);
  Rng rng = make_rng(spec.data_seed, kDrawStream);
  std::vector<std::size_t> chosen;
  if (spec.p_minus) {
    std::vector<std::size_t> plus;
    std::vector<std::size_t> minus;
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
      (pool.examples[i].label == kNegativeLabel ? minus : plus).push_back(i);
    }
    const std::size_t n_minus = minus_count(spec.k, *spec.p_minus);
    const std::size_t n_plus = spec.k - n_minus;
    if (n_minus > minus.size() || n_plus > plus.size()) {
      throw ConfigError("train pool too small for K=" + std::to_string(spec.k) +
                        " at p_minus=" + std::to_string(*spec.p_minus));
    }
    chosen = draw_without_replacement(std::move(plus), n_plus, rng);
    const std::vector<std::size_t> negatives = draw_without_replacement(std::move(minus), n_minus, rng);
    chosen.insert(chosen.end(), negatives.begin(), negatives.end());
    shuffle(chosen.begin(), chosen.end(), rng);
  } else {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
      if (!spec.excluded_label || pool.examples[i].label != *spec.excluded_label) {
        eligible.push_back(i);
      }
    }
    if (spec.k > eligible.size()) {
      throw ConfigError("train pool has " + std::to_string(eligible.size()) +
                        " eligible examples, fewer than K=" + std::to_string(spec.k));
    }
    chosen = draw_without_replacement(std::move(eligible), spec.k, rng);
  }

  if (spec.upsample) {
    std::vector<std::vector<std::size_t>> by_label(pool.num_labels());
    for (std::size_t idx : chosen) {
      by_label[static_cast<std::size_t>(pool.examples[idx].label)].push_back(idx);
    }
    std::size_t target = 0;
    for (const auto& group : by_label) {
      target = std::max(target, group.size());
    }
    for (const auto& group : by_label) {
      for (std::size_t i = group.size(); !group.empty() && i < target; ++i) {
        chosen.push_back(group[i % group.size()]);
      }
    }
    shuffle(chosen.begin(), chosen.end(), rng);
  }

  FewShotSet set;
  set.spec = spec;
  set.pool_indices = chosen;
  for (std::size_t idx : chosen) {
    set.examples.push_back(pool.examples[idx]);
  }
  return set;
}

std::string to_json(const FewShotSet& set, const std::vector<std::string>& labels) {
  nlohmann::ordered_json spec = {{"k", set.spec.k},
                                 {"data_seed", set.spec.data_seed},
                                 {"upsample", set.spec.upsample}};
  spec["p_minus"] = set.spec.p_minus ? nlohmann::ordered_json(*set.spec.p_minus) : nullptr;
  spec["excluded_label"] = set.spec.excluded_label
                               ? nlohmann::ordered_json(labels.at(static_cast<std::size_t>(*set.spec.excluded_label)))
                               : nullptr;
  nlohmann::ordered_json examples = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    examples.push_back({{"pool_index", set.pool_indices[i]},
                        {"text", set.examples[i].text},
                        {"label", labels.at(static_cast<std::size_t>(set.examples[i].label))}});
  }
  return nlohmann::ordered_json({{"spec", spec}, {"examples", examples}}).dump();
}

}  // namespace chanlab::data
