#pragma once

#include <chanlab/data/sampling.hpp>
#include <chanlab/lm/adam.hpp>
#include <chanlab/lm/gradients.hpp>
#include <chanlab/lm/model.hpp>
#include <chanlab/lm/vocab.hpp>
#include <chanlab/scoring/scoring.hpp>
#include <chanlab/scoring/verbalizer.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace chanlab::tuning {

using lm::Matrix;

enum class TuningKind {
  HeadTuning,
  TransformationTuning,
  DirectPromptTuning,
  ChannelPromptTuning,
  FullFinetune
};

std::string_view to_string(TuningKind kind);
TuningKind parse_tuning_kind(std::string_view name);
std::vector<TuningKind> all_tuning_kinds();
bool is_channel(TuningKind kind);
lm::GradientSubset subset_of(TuningKind kind);

struct TrainConfig {
  int steps = 100;
  int batch_size = 32;  // 16 for long inputs
  std::vector<double> lr_grid = {0.1, 0.01, 0.001};
  double full_finetune_lr = 1e-5;
  int prompt_len = 20;
  std::size_t prompt_init_top = 5000;
  int select_window = 10;  // final steps averaged by select_lr
  lm::AdamOptions adam;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PromptState {
  Matrix embeddings;                      // n x h
  std::vector<lm::TokenId> init_token_ids;  // token whose embedding seeded each row
};

// Frozen base parameters plus exactly one trainable delta.
struct TunedModel {
  TuningKind kind = TuningKind::HeadTuning;
  std::shared_ptr<const lm::LMParams> base;
  lm::TokenId bos = 0;
  std::optional<Matrix> head;          // HeadTuning: O'
  std::optional<Matrix> transform;     // TransformationTuning: U
  std::optional<PromptState> prompt;   // prompt tuning
  std::optional<lm::LMParams> full;    // FullFinetune: every parameter
  std::vector<double> loss_curve;      // batch loss before each update
  double lr = 0.0;

  // Evaluation handle; valid while this object is alive and unmoved.
  lm::ModelView view() const;
  // Hash of the trainable delta only.
  std::uint64_t delta_fingerprint() const;
};

// HeadTuning copies the (tied) embedding into an untied head, transformation
// tuning starts from U = I, prompt tuning seeds rows from embeddings of
// tokens drawn without replacement from the min(prompt_init_top,
// |V| - reserved) most frequent tokens, full finetuning copies the base.
TunedModel init_tuning(TuningKind kind, std::shared_ptr<const lm::LMParams> base,
                       const lm::Vocab& vocab, const TrainConfig& config);

// Direct kinds learn P(v(c) | x); channel prompt tuning learns P(x | v(c)).
std::vector<lm::TrainingExample> training_examples(TuningKind kind,
                                                   const data::FewShotSet& fewshot,
                                                   const scoring::Verbalizer& verbalizer,
                                                   const lm::Vocab& vocab);

// Runs config.steps Adam updates over batches of min(batch_size, K) examples,
// cycling through the set with a fresh shuffle per epoch. Throws
// NumericalError naming the step when the loss stops being finite.
TunedModel train(const TunedModel& init, const data::FewShotSet& fewshot,
                 const scoring::Verbalizer& verbalizer, const lm::Vocab& vocab,
                 const TrainConfig& config, double lr);

struct LrTrial {
  double lr = 0.0;
  double final_loss = 0.0;  // mean over the last select_window steps
  bool diverged = false;
  std::string error;
};

struct LrSelection {
  double lr = 0.0;
  bool all_diverged = false;
  std::vector<LrTrial> trials;
  TunedModel model;  // the run trained with `lr`
};

// The learning rates tried for a method: the configured grid, or the single
// full-finetuning rate.
std::vector<double> lr_grid_for(TuningKind kind, const TrainConfig& config);

// Trains once per grid value and keeps the lowest final training loss (ties
// toward the smaller lr; diverged runs excluded). When every run diverges the
// smallest lr is reported with the untrained model.
LrSelection select_lr(const TunedModel& init, const data::FewShotSet& fewshot,
                      const scoring::Verbalizer& verbalizer, const lm::Vocab& vocab,
                      const TrainConfig& config);

// Zero-shot scoring through the tuned model; direction follows the method.
scoring::Scorer make_scorer(const TunedModel& model, const lm::Vocab& vocab,
                            const scoring::Verbalizer& verbalizer, bool length_normalize = true);
scoring::ClassScores tuned_score(const TunedModel& model, const lm::Vocab& vocab,
                                 const scoring::Verbalizer& verbalizer, std::string_view input);

// Versioned, method-tagged delta file; loading checks the base fingerprint.
void save_tuned(const TunedModel& model, const std::string& path);
TunedModel load_tuned(const std::string& path, std::shared_ptr<const lm::LMParams> base,
                      lm::TokenId bos);

void write_loss_curve(const std::vector<double>& curve, const std::string& path);

}  // namespace chanlab::tuning
