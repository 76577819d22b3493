#pragma once

#include <chanlab/data/synthetic.hpp>
#include <chanlab/lm/config.hpp>
#include <chanlab/lm/pretrain.hpp>
#include <chanlab/tuning/tuning.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chanlab::cli {

struct TaskSpec {
  std::vector<std::string> names = {"binary-sentiment"};
  data::SyntheticOptions options;  // seed comes from Seeds::task
};

struct PretrainSpec {
  int steps = 2000;
  lm::PretrainOptions options{2, 512, 3e-3, 0.1};
};

struct GridSpec {
  std::string task = "binary-sentiment";
  std::vector<std::string> methods;
  std::vector<std::string> verbalizers;  // empty = all of the task's
  std::size_t k = 16;
  int data_seeds = 5;
  int train_seeds = 4;
  std::optional<double> p_minus;
  bool upsample = false;
  bool exclude_label = false;
  std::size_t test_limit = 0;
  bool length_normalize = true;
};

struct AblationSpec {
  std::string kind = "imbalance";
  std::string target_task;
  std::vector<std::size_t> ks = {4, 16, 64, 0};
  std::vector<double> p_minus = {0.0, 0.125, 0.25, 0.375, 0.5};
};

// The only sources of randomness: task generation and LM initialisation,
// few-shot sampling, and tuning.
struct Seeds {
  std::uint64_t task = 1;
  std::uint64_t data = 0;
  std::uint64_t train = 0;
};

struct ExperimentConfig {
  TaskSpec task;
  lm::LMConfig lm;  // vocab_size and seed are filled in at pretraining
  PretrainSpec pretrain;
  tuning::TrainConfig train;
  GridSpec grid;
  AblationSpec ablation;
  Seeds seeds;
  std::string out = "runs";
  int workers = 1;

  ExperimentConfig();

  // Throws ConfigError naming the offending field, e.g. "train.steps: must be positive".
  void validate() const;

  std::vector<std::uint64_t> data_seed_list() const;
  std::vector<std::uint64_t> train_seed_list() const;
};

std::vector<std::string> default_methods();

// Unknown fields and type mismatches are ConfigErrors naming the field path.
ExperimentConfig parse_config(const std::string& json_text, const std::string& source = "config");
ExperimentConfig load_config(const std::string& path);

// Canonical JSON; identical configs give identical text.
std::string to_json(const ExperimentConfig& config);

// Snapshot of the fields that determine generated tasks / the pretrained LM.
std::string task_stamp(const ExperimentConfig& config);
std::string lm_stamp(const ExperimentConfig& config);

}  // namespace chanlab::cli
