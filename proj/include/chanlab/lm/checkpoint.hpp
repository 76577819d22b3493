#pragma once

#include <chanlab/lm/params.hpp>

#include <iosfwd>
#include <string>

namespace chanlab::lm {

// Binary checkpoint: magic "CHLMCKPT", format version, config header, tie
// flag, then every tensor as (name, element count, raw little-endian
// doubles). Round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const LMParams& params, const std::string& path);
LMParams load_checkpoint(const std::string& path);

void write_params(std::ostream& out, const LMParams& params);
LMParams read_params(std::istream& in, const std::string& source);

// Matrix blocks shared with the tuned-delta format.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in, const std::string& source);

}  // namespace chanlab::lm
