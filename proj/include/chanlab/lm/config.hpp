#pragma once

#include <cstdint>

namespace chanlab::lm {

struct LMConfig {
  int layers = 2;
  int heads = 2;
  int model_dim = 64;
  int max_seq_len = 256;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  int head_dim() const { return model_dim / heads; }
  int mlp_dim() const { return 4 * model_dim; }

  // Throws ConfigError on a non-positive size or model_dim % heads != 0.
  void validate() const;

  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

}  // namespace chanlab::lm
