#pragma once

#include <chanlab/data/dataset.hpp>
#include <chanlab/data/synthetic.hpp>

#include <string>
#include <vector>

namespace chanlab::scoring {

using data::Label;

// Maps every label of a task to the text the LM scores for it.
struct Verbalizer {
  std::string name;
  std::vector<std::string> labels;
  std::vector<std::string> surface;  // parallel to labels

  std::size_t size() const { return labels.size(); }
  const std::string& operator()(Label label) const;
  // Throws ConfigError on empty or duplicate surfaces or a size mismatch.
  void validate() const;

  static Verbalizer from_template(std::string name, const std::string& pattern,
                                  const std::vector<std::string>& labels);

  bool operator==(const Verbalizer&) const = default;
};

std::vector<Verbalizer> default_verbalizers(const data::TaskProfile& profile);
const Verbalizer& find_verbalizer(const std::vector<Verbalizer>& all, const std::string& name);

// {"verbalizers": [{"name": ..., "mapping": {label: surface, ...}}, ...]}
void write_verbalizers(const std::vector<Verbalizer>& verbalizers, const std::string& path);
// Mappings must cover exactly `labels`; surfaces are ordered like `labels`.
std::vector<Verbalizer> load_verbalizers(const std::string& path,
                                         const std::vector<std::string>& labels);

}  // namespace chanlab::scoring
