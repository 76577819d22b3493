#include <chanlab/cli/config.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/harness/harness.hpp>

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace chanlab::cli {
namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads the fields of one JSON object, remembering which keys were used.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
    }
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Reader(it == j_.end() ? empty : *it, join(path_, key));
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) {
      out = convert<T>(*it, join(path_, key));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(join(path_, it.key()) + ": unknown field");
      }
    }
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) {
        throw ConfigError(path + ": expected true or false");
      }
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) {
        throw ConfigError(path + ": expected a string");
      }
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) {
        throw ConfigError(path + ": expected a number");
      }
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(path + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) {
        throw ConfigError(path + ": expected an integer");
      }
      return v.get<T>();
    } else if constexpr (requires { typename T::value_type; std::declval<T>().has_value(); }) {
      if (v.is_null()) {
        return T{};
      }
      return T(convert<typename T::value_type>(v, path));
    } else {
      if (!v.is_array()) {
        throw ConfigError(path + ": expected an array");
      }
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json task_json(const ExperimentConfig& c) {
  const auto& o = c.task.options;
  json j;
  j["names"] = c.task.names;
  j["train_pool_size"] = o.train_pool_size;
  j["test_size"] = o.test_size;
  j["corpus_size"] = o.corpus_size;
  j["overlap"] = o.overlap;
  j["class_prior"] = o.class_prior;
  j["long_inputs"] = o.long_inputs;
  return j;
}

json lm_json(const ExperimentConfig& c) {
  json j;
  j["layers"] = c.lm.layers;
  j["heads"] = c.lm.heads;
  j["model_dim"] = c.lm.model_dim;
  j["max_seq_len"] = c.lm.max_seq_len;
  return j;
}

json pretrain_json(const ExperimentConfig& c) {
  const auto& o = c.pretrain.options;
  json j;
  j["steps"] = c.pretrain.steps;
  j["batch_size"] = o.batch_size;
  j["context_len"] = o.context_len;
  j["lr"] = o.lr;
  j["final_lr_fraction"] = o.final_lr_fraction;
  return j;
}

json to_json_object(const ExperimentConfig& c) {
  json j;
  j["task"] = task_json(c);
  j["lm"] = lm_json(c);
  j["pretrain"] = pretrain_json(c);
  json t;
  t["steps"] = c.train.steps;
  t["batch_size"] = c.train.batch_size;
  t["lr_grid"] = c.train.lr_grid;
  t["full_finetune_lr"] = c.train.full_finetune_lr;
  t["prompt_len"] = c.train.prompt_len;
  t["prompt_init_top"] = c.train.prompt_init_top;
  t["select_window"] = c.train.select_window;
  t["adam_beta1"] = c.train.adam.beta1;
  t["adam_beta2"] = c.train.adam.beta2;
  t["adam_eps"] = c.train.adam.eps;
  j["train"] = t;
  json g;
  g["task"] = c.grid.task;
  g["methods"] = c.grid.methods;
  g["verbalizers"] = c.grid.verbalizers;
  g["k"] = c.grid.k;
  g["data_seeds"] = c.grid.data_seeds;
  g["train_seeds"] = c.grid.train_seeds;
  g["p_minus"] = c.grid.p_minus ? json(*c.grid.p_minus) : json(nullptr);
  g["upsample"] = c.grid.upsample;
  g["exclude_label"] = c.grid.exclude_label;
  g["test_limit"] = c.grid.test_limit;
  g["length_normalize"] = c.grid.length_normalize;
  j["grid"] = g;
  json a;
  a["kind"] = c.ablation.kind;
  a["target_task"] = c.ablation.target_task;
  a["ks"] = c.ablation.ks;
  a["p_minus"] = c.ablation.p_minus;
  j["ablation"] = a;
  json s;
  s["task"] = c.seeds.task;
  s["data"] = c.seeds.data;
  s["train"] = c.seeds.train;
  j["seeds"] = s;
  j["out"] = c.out;
  j["workers"] = c.workers;
  return j;
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) {
    throw ConfigError(field + ": " + message);
  }
}

}  // namespace

std::vector<std::string> default_methods() {
  return {"direct:zero-shot", "direct++:zero-shot", "channel:zero-shot",
          "direct:concat",    "direct++:concat",    "channel:concat",
          "direct:ensemble",  "direct++:ensemble",  "channel:ensemble",
          "head",             "transform",          "direct-prompt",
          "channel-prompt",   "full"};
}

ExperimentConfig::ExperimentConfig() {
  // Room for K=16 concatenated demonstrations of short inputs.
  lm.max_seq_len = 512;
  grid.methods = default_methods();
}

void ExperimentConfig::validate() const {
  require(!task.names.empty(), "task.names", "must list at least one task");
  for (std::size_t i = 0; i < task.names.size(); ++i) {
    try {
      data::parse_task_kind(task.names[i]);
    } catch (const ConfigError& e) {
      throw ConfigError("task.names[" + std::to_string(i) + "]: " + e.what());
    }
  }
  require(task.options.train_pool_size > 0, "task.train_pool_size", "must be positive");
  require(task.options.test_size > 0, "task.test_size", "must be positive");
  require(task.options.corpus_size > 0, "task.corpus_size", "must be positive");
  require(task.options.overlap >= 0.0 && task.options.overlap <= 1.0, "task.overlap",
          "must be in [0, 1]");

  require(lm.layers > 0, "lm.layers", "must be positive");
  require(lm.heads > 0, "lm.heads", "must be positive");
  require(lm.model_dim > 0, "lm.model_dim", "must be positive");
  require(lm.model_dim % std::max(lm.heads, 1) == 0, "lm.model_dim", "must be divisible by lm.heads");
  require(lm.max_seq_len > 1, "lm.max_seq_len", "must be at least 2");

  require(pretrain.steps >= 0, "pretrain.steps", "must be non-negative");
  require(pretrain.options.batch_size > 0, "pretrain.batch_size", "must be positive");
  require(pretrain.options.context_len >= 0 && pretrain.options.context_len <= lm.max_seq_len,
          "pretrain.context_len", "must be in [0, lm.max_seq_len]");
  require(pretrain.options.lr > 0.0, "pretrain.lr", "must be positive");

  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()));
  }

  require(std::find(task.names.begin(), task.names.end(), grid.task) != task.names.end(),
          "grid.task", "must be one of task.names");
  require(!grid.methods.empty(), "grid.methods", "must list at least one method");
  for (std::size_t i = 0; i < grid.methods.size(); ++i) {
    try {
      harness::MethodSpec::parse(grid.methods[i]);
    } catch (const ConfigError& e) {
      throw ConfigError("grid.methods[" + std::to_string(i) + "]: " + e.what());
    }
  }
  require(grid.k > 0, "grid.k", "must be positive");
  require(grid.data_seeds > 0, "grid.data_seeds", "must be positive");
  require(grid.train_seeds > 0, "grid.train_seeds", "must be positive");
  if (grid.p_minus) {
    require(*grid.p_minus >= 0.0 && *grid.p_minus <= 0.5, "grid.p_minus", "must be in [0, 0.5]");
    require(!grid.exclude_label, "grid.p_minus", "cannot be combined with grid.exclude_label");
  }

  try {
    harness::parse_ablation_kind(ablation.kind);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("ablation.kind: ") + e.what());
  }
  if (ablation.kind == "transfer") {
    require(std::find(task.names.begin(), task.names.end(), ablation.target_task) !=
                task.names.end(),
            "ablation.target_task", "must be one of task.names");
  }
  for (double p : ablation.p_minus) {
    require(p >= 0.0 && p <= 0.5, "ablation.p_minus", "values must be in [0, 0.5]");
  }
  require(!out.empty(), "out", "must not be empty");
  require(workers > 0, "workers", "must be positive");
}

std::vector<std::uint64_t> ExperimentConfig::data_seed_list() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < grid.data_seeds; ++i) {
    out.push_back(seeds.data + static_cast<std::uint64_t>(i));
  }
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::train_seed_list() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < grid.train_seeds; ++i) {
    out.push_back(seeds.train + static_cast<std::uint64_t>(i));
  }
  return out;
}

ExperimentConfig parse_config(const std::string& json_text, const std::string& source) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  ExperimentConfig c;
  Reader r(root, "");

  Reader t = r.child("task");
  t.get("names", c.task.names);
  t.get("train_pool_size", c.task.options.train_pool_size);
  t.get("test_size", c.task.options.test_size);
  t.get("corpus_size", c.task.options.corpus_size);
  t.get("overlap", c.task.options.overlap);
  t.get("class_prior", c.task.options.class_prior);
  t.get("long_inputs", c.task.options.long_inputs);
  t.finish();

  Reader l = r.child("lm");
  l.get("layers", c.lm.layers);
  l.get("heads", c.lm.heads);
  l.get("model_dim", c.lm.model_dim);
  l.get("max_seq_len", c.lm.max_seq_len);
  l.finish();

  Reader p = r.child("pretrain");
  p.get("steps", c.pretrain.steps);
  p.get("batch_size", c.pretrain.options.batch_size);
  p.get("context_len", c.pretrain.options.context_len);
  p.get("lr", c.pretrain.options.lr);
  p.get("final_lr_fraction", c.pretrain.options.final_lr_fraction);
  p.finish();

  Reader tr = r.child("train");
  tr.get("steps", c.train.steps);
  tr.get("batch_size", c.train.batch_size);
  tr.get("lr_grid", c.train.lr_grid);
  tr.get("full_finetune_lr", c.train.full_finetune_lr);
  tr.get("prompt_len", c.train.prompt_len);
  tr.get("prompt_init_top", c.train.prompt_init_top);
  tr.get("select_window", c.train.select_window);
  tr.get("adam_beta1", c.train.adam.beta1);
  tr.get("adam_beta2", c.train.adam.beta2);
  tr.get("adam_eps", c.train.adam.eps);
  tr.finish();

  Reader g = r.child("grid");
  g.get("task", c.grid.task);
  g.get("methods", c.grid.methods);
  g.get("verbalizers", c.grid.verbalizers);
  g.get("k", c.grid.k);
  g.get("data_seeds", c.grid.data_seeds);
  g.get("train_seeds", c.grid.train_seeds);
  g.get("p_minus", c.grid.p_minus);
  g.get("upsample", c.grid.upsample);
  g.get("exclude_label", c.grid.exclude_label);
  g.get("test_limit", c.grid.test_limit);
  g.get("length_normalize", c.grid.length_normalize);
  g.finish();

  Reader a = r.child("ablation");
  a.get("kind", c.ablation.kind);
  a.get("target_task", c.ablation.target_task);
  a.get("ks", c.ablation.ks);
  a.get("p_minus", c.ablation.p_minus);
  a.finish();

  Reader s = r.child("seeds");
  s.get("task", c.seeds.task);
  s.get("data", c.seeds.data);
  s.get("train", c.seeds.train);
  s.finish();

  r.get("out", c.out);
  r.get("workers", c.workers);
  r.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path);
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

std::string to_json(const ExperimentConfig& config) { return to_json_object(config).dump(2) + "\n"; }

std::string task_stamp(const ExperimentConfig& config) {
  json j = task_json(config);
  j["seed"] = config.seeds.task;
  return j.dump();
}

std::string lm_stamp(const ExperimentConfig& config) {
  json j;
  j["task"] = task_json(config);
  j["seed"] = config.seeds.task;
  j["lm"] = lm_json(config);
  j["pretrain"] = pretrain_json(config);
  return j.dump();
}

}  // namespace chanlab::cli
