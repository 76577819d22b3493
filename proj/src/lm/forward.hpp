#pragma once

// Internal: packed forward/backward passes shared by evaluation and training.

#include <chanlab/lm/model.hpp>

#include <Eigen/Core>

#include <span>
#include <vector>

namespace chanlab::lm {

// Rows [offset, offset + length) of a packed batch form one sequence whose
// positions restart at zero (or at the cache length when continuing one).
// A segment may continue another segment of the same batch: it then attends
// to rows [prefix_offset, prefix_offset + prefix_length) first and its
// positions start at prefix_length.
struct Segment {
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
  Eigen::Index prefix_offset = 0;
  Eigen::Index prefix_length = 0;
};

struct LayerTrace {
  Matrix input;
  Matrix ln1_hat;
  Eigen::VectorXd ln1_rstd;
  Matrix ln1_out;
  Matrix qkv;
  std::vector<Matrix> probs;  // [segment * heads + head], T x (prefix + T)
  Matrix attn;
  Matrix resid;
  Matrix ln2_hat;
  Eigen::VectorXd ln2_rstd;
  Matrix ln2_out;
  Matrix mlp_pre;
  Matrix mlp_act;
};

struct Trace {
  std::vector<LayerTrace> layers;
  Matrix final_hat;
  Eigen::VectorXd final_rstd;
};

class Forward {
 public:
  // Returns the final (post-norm) hidden states, one row per packed token.
  // `cache` continues a previously processed sequence and requires a single
  // segment; `out_cache` receives cache + the new keys/values. `trace`
  // records activations for backward() and requires cache == nullptr.
  static Matrix run(const ModelView& model, std::span<const TokenId> tokens,
                    std::span<const Segment> segments, const DecoderState* cache,
                    DecoderState* out_cache, Trace* trace);

  // Backpropagates d_hidden (gradient w.r.t. run()'s output). Weight
  // gradients are accumulated into `grads` when non-null; prompt-row
  // gradients into `d_prompt` when non-null.
  static void backward(const ModelView& model, std::span<const TokenId> tokens,
                       std::span<const Segment> segments, const Trace& trace,
                       const Matrix& d_hidden, LMParams* grads, Matrix* d_prompt);
};

// log_softmax(head * U * h)[target] summed over rows of `hidden`.
double sum_target_logprob(const ModelView& model, const Matrix& hidden,
                          std::span<const TokenId> targets);

}  // namespace chanlab::lm
