#include <chanlab/lm/model.hpp>

#include "forward.hpp"

#include <array>
#include <cmath>

namespace chanlab::lm {
namespace {

std::array<Segment, 1> whole(std::size_t n) {
  return {Segment{0, static_cast<Eigen::Index>(n)}};
}

}  // namespace

TokenSequence ModelView::frame(std::span<const TokenId> prefix) const {
  TokenSequence seq;
  seq.reserve(1 + static_cast<std::size_t>(prompt_len()) + prefix.size());
  seq.push_back(bos_);
  for (int j = 0; j < prompt_len(); ++j) {
    seq.push_back(prompt_slot(j));
  }
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  return seq;
}

DecoderState encode_prefix(const ModelView& model, std::span<const TokenId> prefix) {
  const TokenSequence seq = model.frame(prefix);
  DecoderState state;
  Forward::run(model, seq, whole(seq.size()), nullptr, &state, nullptr);
  return state;
}

DecoderState extend(const ModelView& model, const DecoderState& state,
                    std::span<const TokenId> tokens) {
  if (tokens.empty()) {
    return state;
  }
  DecoderState next;
  Forward::run(model, tokens, whole(tokens.size()), &state, &next, nullptr);
  return next;
}

double continuation_logprob(const ModelView& model, const DecoderState& state,
                            std::span<const TokenId> continuation) {
  if (continuation.empty()) {
    return 0.0;
  }
  const auto m = static_cast<Eigen::Index>(continuation.size());
  Matrix hidden(m, model.params().config().model_dim);
  hidden.row(0) = state.last_hidden();
  if (m > 1) {
    const auto fed = continuation.first(continuation.size() - 1);
    hidden.bottomRows(m - 1) = Forward::run(model, fed, whole(fed.size()), &state, nullptr, nullptr);
  }
  return sum_target_logprob(model, hidden, continuation);
}

double conditional_logprob(const ModelView& model, std::span<const TokenId> prefix,
                           std::span<const TokenId> continuation) {
  if (continuation.empty()) {
    return 0.0;
  }
  // The last continuation token is never fed; the final m rows predict the
  // m continuation tokens.
  TokenSequence seq = model.frame(prefix);
  seq.insert(seq.end(), continuation.begin(), continuation.end() - 1);
  const Matrix hidden = Forward::run(model, seq, whole(seq.size()), nullptr, nullptr, nullptr);
  const Matrix rows = hidden.bottomRows(static_cast<Eigen::Index>(continuation.size()));
  return sum_target_logprob(model, rows, continuation);
}

double conditional_logprob(const LMParams& params, TokenId bos, std::span<const TokenId> prefix,
                           std::span<const TokenId> continuation) {
  return conditional_logprob(ModelView(params, bos), prefix, continuation);
}

Matrix next_token_logprobs(const ModelView& model, std::span<const TokenId> prefix) {
  const TokenSequence seq = model.frame(prefix);
  Matrix z = Forward::run(model, seq, whole(seq.size()), nullptr, nullptr, nullptr);
  if (model.adapters().transform != nullptr) {
    z = Matrix(z * model.adapters().transform->transpose());
  }
  Matrix logits = z * model.head().transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    logits.row(i).array() -= lse;
  }
  return logits;
}

}  // namespace chanlab::lm
