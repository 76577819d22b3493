#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace chanlab::data {

using Label = int;

struct Example {
  std::string text;
  Label label = 0;

  bool operator==(const Example&) const = default;
};

enum class Split { TrainPool, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct Dataset {
  std::string name;
  Split split = Split::TrainPool;
  std::vector<std::string> labels;
  std::vector<Example> examples;

  std::size_t num_labels() const { return labels.size(); }
  // Index of `name` in the label set; throws SchemaError when absent.
  Label label_index(std::string_view name) const;
  std::vector<std::size_t> label_counts() const;

  bool operator==(const Dataset&) const = default;
};

// JSON-lines records {"text": ..., "label": ...} plus a manifest at
// manifest_path(path) holding name, split and the ordered label set.
std::string manifest_path(const std::string& path);
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Parses records against a known label set; `source` prefixes diagnostics.
std::vector<Example> parse_records(std::string_view jsonl, const std::vector<std::string>& labels,
                                   const std::string& source);

}  // namespace chanlab::data
