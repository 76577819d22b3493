#include <chanlab/lm/config.hpp>

#include <chanlab/common/errors.hpp>

#include <string>

namespace chanlab::lm {

void LMConfig::validate() const {
  auto positive = [](int value, const char* field) {
    if (value <= 0) {
      throw ConfigError(std::string("lm.") + field + " must be positive, got " +
                        std::to_string(value));
    }
  };
  positive(layers, "layers");
  positive(heads, "heads");
  positive(model_dim, "model_dim");
  positive(max_seq_len, "max_seq_len");
  positive(vocab_size, "vocab_size");
  if (model_dim % heads != 0) {
    throw ConfigError("lm.model_dim (" + std::to_string(model_dim) +
                      ") must be divisible by lm.heads (" + std::to_string(heads) + ")");
  }
}

}  // namespace chanlab::lm
