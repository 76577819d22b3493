#pragma once

#include <chanlab/data/dataset.hpp>
#include <chanlab/data/sampling.hpp>
#include <chanlab/lm/params.hpp>
#include <chanlab/lm/vocab.hpp>
#include <chanlab/scoring/scoring.hpp>
#include <chanlab/scoring/verbalizer.hpp>
#include <chanlab/tuning/tuning.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace chanlab::harness {

using data::Label;

// One evaluated method: a scoring cell or a tuning method.
struct MethodSpec {
  std::optional<scoring::ScoringSpec> scoring;
  std::optional<tuning::TuningKind> tuning;

  bool is_tuning() const { return tuning.has_value(); }
  bool is_zero_shot() const { return scoring && scoring->mode == scoring::Mode::ZeroShot; }
  // "channel:concat", "direct++:zero-shot", or a tuning method name.
  std::string name() const;
  static MethodSpec parse(std::string_view name);

  bool operator==(const MethodSpec&) const = default;
};

// Sentinel K meaning "the entire train pool".
inline constexpr std::size_t kFullK = 0;

struct Cell {
  std::string verbalizer;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::uint64_t> train_seed;

  bool operator==(const Cell&) const = default;
};

struct ExperimentGrid {
  std::string task;                 // test split and evaluation verbalizers
  std::string train_task;           // few-shot pool; empty = task
  MethodSpec method;
  std::vector<std::string> verbalizers;
  std::vector<std::uint64_t> data_seeds = {0, 1, 2, 3, 4};
  std::vector<std::uint64_t> train_seeds = {0, 1, 2, 3};
  std::size_t k = 16;
  std::optional<double> p_minus;
  bool upsample = false;
  bool exclude_label = false;  // hold out one label per data seed

  // Zero-shot: verbalizers; demonstrations: x data seeds; tuning: x train seeds.
  std::vector<Cell> cells() const;
  const std::string& source_task() const { return train_task.empty() ? task : train_task; }
  void validate() const;
};

struct TaskData {
  std::string name;
  data::Dataset train_pool;
  data::Dataset test;
  std::vector<scoring::Verbalizer> verbalizers;
};

// Everything a cell needs besides its coordinates. Read-only while grids run.
struct Lab {
  const lm::Vocab* vocab = nullptr;
  std::shared_ptr<const lm::LMParams> base;
  std::map<std::string, TaskData> tasks;
  tuning::TrainConfig train;
  bool length_normalize = true;
  std::size_t test_limit = 0;  // evaluate on the first n test examples; 0 = all

  const TaskData& task(const std::string& name) const;
};

struct RunResult {
  std::string task;
  std::string train_task;
  std::string method;
  std::size_t k = 0;  // effective few-shot size; 0 for zero-shot
  std::optional<double> p_minus;
  bool upsample = false;
  std::optional<Label> excluded_label;
  Cell cell;
  double accuracy = 0.0;
  std::vector<Label> predictions;
  std::optional<double> selected_lr;
  bool all_diverged = false;
  std::string error;  // non-empty when the cell failed

  bool ok() const { return error.empty(); }
  // Share of predictions equal to the held-out label.
  double excluded_rate() const;
};

// Evaluates a single cell; throws on failure.
RunResult run_cell(const ExperimentGrid& grid, const Cell& cell, const Lab& lab);

// Every cell of the grid, in cells() order. Failures are recorded in the
// result and the remaining cells still run.
std::vector<RunResult> run_grid(const ExperimentGrid& grid, const Lab& lab, int workers = 1);

struct Aggregate {
  double avg = 0.0;
  double worst = 0.0;
  double best = 0.0;
  double std = 0.0;  // population
  std::size_t runs = 0;
  std::size_t failed = 0;

  bool complete() const { return failed == 0; }
};

// Over the successful runs; throws ConfigError when there are none.
Aggregate aggregate(const std::vector<RunResult>& results);

// Accuracy of always predicting the most frequent test label.
double majority_baseline(const data::Dataset& test, std::size_t limit = 0);

enum class AblationKind { VaryK, Imbalance, UnseenLabel, Transfer };
std::string_view to_string(AblationKind kind);
AblationKind parse_ablation_kind(std::string_view name);

struct AblationParams {
  std::string task;
  std::string target_task;  // transfer only
  std::vector<MethodSpec> methods;
  std::vector<std::string> verbalizers;  // empty = all of the task's
  std::vector<std::uint64_t> data_seeds = {0, 1, 2, 3, 4};
  std::vector<std::uint64_t> train_seeds = {0, 1, 2, 3};
  std::size_t k = 16;
  std::vector<std::size_t> ks = {4, 16, 64, kFullK};
  std::vector<double> p_minus = {0.0, 0.125, 0.25, 0.375, 0.5};
};

// One grid of an ablation plus where it sits on the ablation's axis.
struct GridOutcome {
  std::string ablation;
  std::string x;  // axis value: K, p-, ...
  ExperimentGrid grid;
  std::vector<RunResult> results;
  double majority = 0.0;
  std::optional<Aggregate> summary;  // empty when every cell failed
};

std::vector<ExperimentGrid> ablation_grids(AblationKind kind, const AblationParams& params,
                                           const Lab& lab);
std::vector<GridOutcome> run_ablation(AblationKind kind, const AblationParams& params,
                                      const Lab& lab, int workers = 1);

// Runs a plain grid and summarizes it under `label`.
GridOutcome run_outcome(const ExperimentGrid& grid, const Lab& lab, int workers = 1,
                        std::string ablation = "grid", std::string x = "");

struct ReportMeta {
  std::string config_json;  // snapshot stored beside the results
  std::string code_version;
};

// Writes results.jsonl, report.tsv, curves.csv and config.json into `dir`.
// Identical inputs give byte-identical files.
void write_report(const std::vector<GridOutcome>& outcomes, const ReportMeta& meta,
                  const std::string& dir);

// Rebuilds outcomes from a results.jsonl written by write_report.
std::vector<GridOutcome> load_results(const std::string& path);

}  // namespace chanlab::harness
