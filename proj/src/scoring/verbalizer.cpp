#include <chanlab/scoring/verbalizer.hpp>

#include <chanlab/common/errors.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace chanlab::scoring {

using nlohmann::ordered_json;

const std::string& Verbalizer::operator()(Label label) const {
  return surface.at(static_cast<std::size_t>(label));
}

void Verbalizer::validate() const {
  if (labels.empty() || labels.size() != surface.size()) {
    throw ConfigError("verbalizer '" + name + "' must map every label");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < surface.size(); ++i) {
    if (surface[i].find_first_not_of(" \t\n") == std::string::npos) {
      throw ConfigError("verbalizer '" + name + "' maps label '" + labels[i] + "' to empty text");
    }
    if (!seen.insert(surface[i]).second) {
      throw ConfigError("verbalizer '" + name + "' maps two labels to '" + surface[i] + "'");
    }
  }
}

Verbalizer Verbalizer::from_template(std::string name, const std::string& pattern,
                                     const std::vector<std::string>& labels) {
  const auto at = pattern.find("MASK");
  if (at == std::string::npos) {
    throw ConfigError("verbalizer template '" + pattern + "' has no MASK");
  }
  Verbalizer v;
  v.name = std::move(name);
  v.labels = labels;
  for (const std::string& label : labels) {
    std::string text = pattern;
    text.replace(at, 4, label);
    v.surface.push_back(std::move(text));
  }
  v.validate();
  return v;
}

std::vector<Verbalizer> default_verbalizers(const data::TaskProfile& profile) {
  std::vector<Verbalizer> out;
  for (const data::NamedTemplate& t : profile.verbalizer_templates) {
    out.push_back(Verbalizer::from_template(t.name, t.pattern, profile.labels));
  }
  return out;
}

const Verbalizer& find_verbalizer(const std::vector<Verbalizer>& all, const std::string& name) {
  for (const Verbalizer& v : all) {
    if (v.name == name) {
      return v;
    }
  }
  std::string known;
  for (const Verbalizer& v : all) {
    known += (known.empty() ? "" : ", ") + v.name;
  }
  throw ConfigError("unknown verbalizer '" + name + "' (known: " + known + ")");
}

void write_verbalizers(const std::vector<Verbalizer>& verbalizers, const std::string& path) {
  ordered_json list = ordered_json::array();
  for (const Verbalizer& v : verbalizers) {
    ordered_json mapping = ordered_json::object();
    for (std::size_t i = 0; i < v.size(); ++i) {
      mapping[v.labels[i]] = v.surface[i];
    }
    list.push_back({{"name", v.name}, {"mapping", mapping}});
  }
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write verbalizers to " + path);
  }
  out << ordered_json({{"verbalizers", list}}).dump(2) << '\n';
}

std::vector<Verbalizer> load_verbalizers(const std::string& path,
                                         const std::vector<std::string>& labels) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read verbalizers from " + path);
  }
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  if (!doc.contains("verbalizers") || !doc["verbalizers"].is_array()) {
    throw SchemaError(path + ": expected a 'verbalizers' array");
  }
  std::vector<Verbalizer> out;
  for (const ordered_json& entry : doc["verbalizers"]) {
    if (!entry.contains("name") || !entry.contains("mapping") || !entry["mapping"].is_object()) {
      throw SchemaError(path + ": each verbalizer needs 'name' and a 'mapping' object");
    }
    Verbalizer v;
    v.name = entry["name"].get<std::string>();
    v.labels = labels;
    const ordered_json& mapping = entry["mapping"];
    for (const auto& [label, _] : mapping.items()) {
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        throw SchemaError(path + ": verbalizer '" + v.name + "' maps unknown label '" + label + "'");
      }
    }
    for (const std::string& label : labels) {
      if (!mapping.contains(label) || !mapping[label].is_string()) {
        throw SchemaError(path + ": verbalizer '" + v.name + "' has no text for label '" + label + "'");
      }
      v.surface.push_back(mapping[label].get<std::string>());
    }
    v.validate();
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace chanlab::scoring
