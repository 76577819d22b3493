#include <chanlab/data/dataset.hpp>

#include <chanlab/common/errors.hpp>

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace chanlab::data {

using nlohmann::json;

std::string_view to_string(Split split) {
  return split == Split::Test ? "test" : "train_pool";
}

Split parse_split(std::string_view name) {
  if (name == "test") {
    return Split::Test;
  }
  if (name == "train_pool") {
    return Split::TrainPool;
  }
  throw SchemaError("unknown split '" + std::string(name) + "'");
}

Label Dataset::label_index(std::string_view name) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == name) {
      return static_cast<Label>(i);
    }
  }
  throw SchemaError("label '" + std::string(name) + "' is not in the label set");
}

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> counts(labels.size(), 0);
  for (const Example& ex : examples) {
    ++counts.at(static_cast<std::size_t>(ex.label));
  }
  return counts;
}

std::string manifest_path(const std::string& path) {
  const std::string ext = ".jsonl";
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0) {
    return path.substr(0, path.size() - ext.size()) + ".labels.json";
  }
  return path + ".labels.json";
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write dataset to " + path);
  }
  for (const Example& ex : dataset.examples) {
    const json record = {{"text", ex.text},
                         {"label", dataset.labels.at(static_cast<std::size_t>(ex.label))}};
    out << record.dump() << '\n';
  }
  std::ofstream manifest(manifest_path(path));
  if (!manifest) {
    throw IoError("cannot write label manifest " + manifest_path(path));
  }
  const json m = {{"name", dataset.name},
                  {"split", std::string(to_string(dataset.split))},
                  {"labels", dataset.labels}};
  manifest << m.dump(2) << '\n';
  if (!out || !manifest) {
    throw IoError("failed writing dataset " + path);
  }
}

std::vector<Example> parse_records(std::string_view jsonl, const std::vector<std::string>& labels,
                                   const std::string& source) {
  std::vector<Example> examples;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) {
      end = jsonl.size();
    }
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(where + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("text") || !record["text"].is_string() ||
        !record.contains("label") || !record["label"].is_string()) {
      throw SchemaError(where + ": expected string fields 'text' and 'label'");
    }
    const std::string label = record["label"].get<std::string>();
    Label index = -1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) {
        index = static_cast<Label>(i);
      }
    }
    if (index < 0) {
      throw SchemaError(where + ": unknown label '" + label + "'");
    }
    examples.push_back({record["text"].get<std::string>(), index});
  }
  return examples;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream manifest_in(manifest_path(path));
  if (!manifest_in) {
    throw IoError("missing label manifest " + manifest_path(path));
  }
  json m;
  try {
    m = json::parse(manifest_in);
  } catch (const json::parse_error& e) {
    throw SchemaError(manifest_path(path) + ": " + e.what());
  }
  if (!m.contains("labels") || !m["labels"].is_array() || m["labels"].empty()) {
    throw SchemaError(manifest_path(path) + ": 'labels' must be a non-empty array");
  }
  Dataset d;
  d.name = m.value("name", std::string());
  d.split = parse_split(m.value("split", std::string("train_pool")));
  for (const json& label : m["labels"]) {
    if (!label.is_string() || label.get<std::string>().empty()) {
      throw SchemaError(manifest_path(path) + ": labels must be non-empty strings");
    }
    d.labels.push_back(label.get<std::string>());
  }
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read dataset " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  d.examples = parse_records(buffer.str(), d.labels, path);
  return d;
}

}  // namespace chanlab::data
