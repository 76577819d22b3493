#pragma once

#include <chanlab/lm/params.hpp>
#include <chanlab/lm/vocab.hpp>

#include <span>
#include <vector>

namespace chanlab::lm {

// Sequence slot holding the j-th trainable prompt row instead of a token.
constexpr TokenId prompt_slot(int j) { return -1 - j; }
constexpr bool is_prompt_slot(TokenId id) { return id < 0; }
constexpr int prompt_row(TokenId id) { return -1 - id; }

// Optional tuning deltas applied on top of frozen parameters. Pointers are
// non-owning and must outlive every call that uses them.
struct Adapters {
  const Matrix* prompt = nullptr;     // n x h rows placed right after BOS
  const Matrix* transform = nullptr;  // U (h x h): logits = O U h
  const Matrix* head = nullptr;       // replaces params.head()
};

// Read-only handle used for evaluation: frozen parameters plus adapters.
class ModelView {
 public:
  ModelView(const LMParams& params, TokenId bos, Adapters adapters = {})
      : params_(&params), bos_(bos), adapters_(adapters) {}

  const LMParams& params() const { return *params_; }
  const Adapters& adapters() const { return adapters_; }
  const Matrix& head() const { return adapters_.head ? *adapters_.head : params_->head(); }
  TokenId bos() const { return bos_; }
  int prompt_len() const {
    return adapters_.prompt ? static_cast<int>(adapters_.prompt->rows()) : 0;
  }
  int max_seq_len() const { return params_->config().max_seq_len; }

  // BOS, then the prompt slots, then `prefix`.
  TokenSequence frame(std::span<const TokenId> prefix) const;

 private:
  const LMParams* params_;
  TokenId bos_;
  Adapters adapters_;
};

// Keys and values of an already processed sequence, plus the final hidden
// state of its last position.
class DecoderState {
 public:
  int length() const { return length_; }
  const RowVector& last_hidden() const { return last_hidden_; }

 private:
  friend class Forward;
  std::vector<Matrix> keys_;    // per layer, length x h
  std::vector<Matrix> values_;  // per layer, length x h
  RowVector last_hidden_;
  int length_ = 0;
};

// Runs BOS + prompts + prefix. Throws LengthError past max_seq_len.
DecoderState encode_prefix(const ModelView& model, std::span<const TokenId> prefix);
// Appends more tokens to a processed prefix.
DecoderState extend(const ModelView& model, const DecoderState& state,
                    std::span<const TokenId> tokens);
// Sum of log P(continuation[t] | state, continuation[<t]) in nats.
double continuation_logprob(const ModelView& model, const DecoderState& state,
                            std::span<const TokenId> continuation);

// log P(continuation | prefix) with BOS (and prompts) implicitly in front.
double conditional_logprob(const ModelView& model, std::span<const TokenId> prefix,
                           std::span<const TokenId> continuation);
double conditional_logprob(const LMParams& params, TokenId bos,
                           std::span<const TokenId> prefix,
                           std::span<const TokenId> continuation);

// Log-probabilities of every vocabulary item at each position of the framed
// sequence (row t predicts token t+1). Used by the invariant checks.
Matrix next_token_logprobs(const ModelView& model, std::span<const TokenId> prefix);

}  // namespace chanlab::lm
