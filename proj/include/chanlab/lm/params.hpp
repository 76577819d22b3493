#pragma once

#include <chanlab/lm/config.hpp>
#include <chanlab/lm/tensor.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chanlab::lm {

struct LayerParams {
  RowVector ln1_gain, ln1_bias;
  Matrix attn_qkv;  // h x 3h, columns [q | k | v], heads contiguous inside each
  RowVector attn_qkv_bias;
  Matrix attn_out;  // h x h
  RowVector attn_out_bias;
  RowVector ln2_gain, ln2_bias;
  Matrix mlp_in;  // h x 4h
  RowVector mlp_in_bias;
  Matrix mlp_out;  // 4h x h
  RowVector mlp_out_bias;
};

// Weights of the pre-norm decoder-only transformer.
//
// The output head O is the input embedding while tied. untie() gives the head
// its own storage, initialised to the embedding's current value; from then on
// the two evolve independently.
class LMParams {
 public:
  // All weights ~ N(0, 0.02) from config.seed; biases zero; norm gains one.
  static LMParams initialize(const LMConfig& config);
  // Same shapes, every entry zero, tied. Used as a gradient accumulator.
  static LMParams zeros(const LMConfig& config);

  const LMConfig& config() const { return config_; }

  Matrix embedding;   // |V| x h
  Matrix positional;  // max_seq_len x h
  std::vector<LayerParams> layers;
  RowVector final_gain, final_bias;

  bool tied_head() const { return !head_.has_value(); }
  const Matrix& head() const { return head_ ? *head_ : embedding; }
  // Throws std::logic_error while tied; call untie() first.
  Matrix& untied_head();
  void untie();

  // Every tensor in a fixed order; the untied head appears last as "head".
  std::vector<TensorView> tensors();
  std::vector<ConstTensorView> tensors() const;
  std::size_t parameter_count() const;

  // FNV-1a over the raw bytes of every tensor plus the tie flag.
  std::uint64_t fingerprint() const;

  friend bool operator==(const LMParams& a, const LMParams& b);

 private:
  explicit LMParams(const LMConfig& config);

  LMConfig config_;
  std::optional<Matrix> head_;
};

std::uint64_t fingerprint(std::span<const double> values);
std::uint64_t fingerprint(const Matrix& m);

}  // namespace chanlab::lm
