#pragma once

#include <chanlab/lm/model.hpp>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace chanlab::lm {

enum class GradientSubset { HeadOnly, TransformOnly, PromptEmbeddingsOnly, AllParams };

std::string_view to_string(GradientSubset subset);

// One training sequence: `context` is conditioning only, every token of
// `target` contributes a loss term. BOS and prompt slots are added in front.
struct TrainingExample {
  TokenSequence context;
  TokenSequence target;
};

// Gradients for exactly the requested subset; the other members stay empty.
struct Gradients {
  double loss = 0.0;      // mean NLL over all target tokens in the batch
  std::size_t tokens = 0; // number of target tokens
  std::optional<Matrix> head;
  std::optional<Matrix> transform;
  std::optional<Matrix> prompt;
  std::optional<LMParams> all;  // same layout as the parameters
};

// Exact reverse-mode gradients of the batch loss. HeadOnly differentiates
// with respect to the head in use (adapter head, untied head, or the tied
// embedding treated as a separate matrix). TransformOnly and
// PromptEmbeddingsOnly require the matching adapter. AllParams covers every
// LMParams tensor; with a tied head the embedding receives both terms.
//
// Throws ConfigError on an empty batch or a subset without its adapter and
// NumericalError when the loss is not finite.
Gradients compute_gradients(const ModelView& model, std::span<const TrainingExample> batch,
                            GradientSubset subset);

// Mean NLL only (no backward pass).
double batch_loss(const ModelView& model, std::span<const TrainingExample> batch);

// Final hidden states that predict each target token, computed once with the
// transformer frozen. Head and transformation tuning train on these directly.
struct HeadFeatures {
  Matrix hidden;               // one row per target token across the batch
  std::vector<TokenId> target; // the token each row must predict
  std::vector<std::size_t> example_offset;  // first row of each example; size n+1
};

HeadFeatures compute_head_features(const ModelView& model,
                                   std::span<const TrainingExample> examples);

// Loss and gradient of the head-only objective over the selected examples.
// `subset` must be HeadOnly or TransformOnly.
Gradients head_gradients(const HeadFeatures& features, std::span<const std::size_t> examples,
                         const Matrix& head, const Matrix* transform, GradientSubset subset);

}  // namespace chanlab::lm
