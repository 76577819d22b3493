#pragma once

#include <chanlab/cli/config.hpp>
#include <chanlab/harness/harness.hpp>
#include <chanlab/lm/vocab.hpp>

#include <iosfwd>
#include <memory>
#include <string>

namespace chanlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Keeps freed blocks in the heap instead of returning them to the OS after
// every large matrix.
void tune_allocator();

// Entry point shared by the binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Artifact layout under config.out.
std::string tasks_dir(const ExperimentConfig& config);
std::string lm_dir(const ExperimentConfig& config);

// gen-task: writes every configured task (pool, test split, corpus,
// verbalizers) and a stamp of the generating configuration.
void generate_tasks(const ExperimentConfig& config, std::ostream& log);
// pretrain: trains one LM over the corpora of all configured tasks.
void pretrain_lm(const ExperimentConfig& config, std::ostream& log);

struct Workspace {
  lm::Vocab vocab;
  harness::Lab lab;
};

// Loads tasks and the pretrained LM, checking both were produced by this
// configuration.
std::unique_ptr<Workspace> load_workspace(const ExperimentConfig& config);

}  // namespace chanlab::cli
