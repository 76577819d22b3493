#pragma once

#include <chanlab/lm/params.hpp>
#include <chanlab/lm/vocab.hpp>

#include <span>
#include <string>
#include <vector>

namespace chanlab::lm {

struct PretrainOptions {
  int batch_size = 8;        // packed sequences per step
  int context_len = 0;       // tokens per packed sequence incl. BOS; 0 = max_seq_len
  double lr = 3e-3;
  double final_lr_fraction = 0.1;  // linear decay to lr * fraction at the last step
};

struct PretrainResult {
  LMParams params;
  std::vector<double> loss_curve;  // mean next-token NLL per step
};

// Trains a tied-head LM on `corpus` (one document per entry). Documents are
// shuffled per epoch with config.seed, joined by the newline token and cut
// into packed sequences that each start with BOS. steps == 0 returns the
// seeded initialisation unchanged.
PretrainResult pretrain(const LMConfig& config, const Vocab& vocab,
                        std::span<const std::string> corpus, int steps,
                        const PretrainOptions& options = {});

// Per-token perplexity of `documents` (each framed on its own).
double perplexity(const LMParams& params, const Vocab& vocab, std::span<const std::string> documents);

}  // namespace chanlab::lm
