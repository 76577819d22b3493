#pragma once

#include <chanlab/data/dataset.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace chanlab::data {

enum class TaskKind { BinarySentiment, FiveWaySentiment, Topic, QuestionType };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);
std::vector<TaskKind> all_task_kinds();

struct SyntheticOptions {
  std::size_t train_pool_size = 10000;
  std::size_t test_size = 1000;
  std::size_t corpus_size = 20000;
  // Fraction of content words drawn from another class's word list.
  double overlap = 0.1;
  // Label prior for the train pool and corpus; empty means uniform.
  std::vector<double> class_prior;
  // 30-200 word inputs instead of 5-15.
  bool long_inputs = false;
  std::uint64_t seed = 0;
};

struct NamedTemplate {
  std::string name;
  std::string pattern;  // contains "MASK" exactly once
};

// The generating distribution of a task. Each word of an input is a class
// content word with probability content_rate (own class with probability
// 1 - overlap, otherwise a uniformly chosen other class) or a filler word.
// Inputs without any content word are redrawn.
struct TaskProfile {
  TaskKind kind = TaskKind::BinarySentiment;
  std::string name;
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> class_words;
  std::vector<std::vector<double>> class_weights;  // normalized per class
  std::vector<std::string> keywords;               // heaviest word of each class
  std::vector<std::string> filler;
  double content_rate = 0.5;
  double overlap = 0.1;
  std::size_t min_len = 5;
  std::size_t max_len = 15;
  std::vector<NamedTemplate> verbalizer_templates;
  std::vector<std::string> extra_templates;  // corpus-only label phrases

  std::size_t num_labels() const { return labels.size(); }
  double word_logprob(std::string_view word, Label label) const;
  double text_logprob(std::string_view text, Label label) const;
  // Unigram Bayes classifier under a uniform prior; ties go to the lowest label.
  Label bayes_predict(std::string_view text) const;
};

TaskProfile task_profile(TaskKind kind, const SyntheticOptions& options = {});

struct SyntheticTask {
  TaskProfile profile;
  std::vector<std::string> corpus;
  Dataset train_pool;
  Dataset test;
};

// Pretraining corpus documents pair an input with a label phrase built from
// the task templates, placed before or after it (or omitted); 10% of phrases
// carry a wrong label. The test split is balanced and disjoint from the pool.
SyntheticTask generate_synthetic_task(TaskKind kind, const SyntheticOptions& options);

double bayes_accuracy(const TaskProfile& profile, const Dataset& dataset);

}  // namespace chanlab::data
