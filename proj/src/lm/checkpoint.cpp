#include <chanlab/lm/checkpoint.hpp>

#include <chanlab/common/errors.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace chanlab::lm {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian hosts");

constexpr char kMagic[8] = {'C', 'H', 'L', 'M', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& source) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw SchemaError(source + ": truncated checkpoint");
  }
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& source) {
  const auto n = get<std::uint32_t>(in, source);
  if (n > 4096) {
    throw SchemaError(source + ": implausible string length in checkpoint");
  }
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) {
    throw SchemaError(source + ": truncated checkpoint");
  }
  return s;
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
  put<std::int64_t>(out, m.rows());
  put<std::int64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_matrix(std::istream& in, const std::string& source) {
  const auto rows = get<std::int64_t>(in, source);
  const auto cols = get<std::int64_t>(in, source);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) {
    throw SchemaError(source + ": bad matrix shape in checkpoint");
  }
  Matrix m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw SchemaError(source + ": truncated matrix data");
  }
  return m;
}

void write_params(std::ostream& out, const LMParams& params) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const LMConfig& c = params.config();
  put<std::int32_t>(out, c.layers);
  put<std::int32_t>(out, c.heads);
  put<std::int32_t>(out, c.model_dim);
  put<std::int32_t>(out, c.max_seq_len);
  put<std::int32_t>(out, c.vocab_size);
  put<std::uint64_t>(out, c.seed);
  put<std::uint8_t>(out, params.tied_head() ? 1 : 0);
  const auto tensors = params.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const ConstTensorView& t : tensors) {
    put_string(out, t.name);
    put<std::uint64_t>(out, t.values.size());
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size_bytes()));
  }
}

LMParams read_params(std::istream& in, const std::string& source) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError(source + ": not a chanlab LM checkpoint");
  }
  const auto version = get<std::uint32_t>(in, source);
  if (version != kCheckpointVersion) {
    throw SchemaError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  LMConfig c;
  c.layers = get<std::int32_t>(in, source);
  c.heads = get<std::int32_t>(in, source);
  c.model_dim = get<std::int32_t>(in, source);
  c.max_seq_len = get<std::int32_t>(in, source);
  c.vocab_size = get<std::int32_t>(in, source);
  c.seed = get<std::uint64_t>(in, source);
  const bool tied = get<std::uint8_t>(in, source) != 0;
  LMParams params = LMParams::zeros(c);
  if (!tied) {
    params.untie();
  }
  auto tensors = params.tensors();
  const auto count = get<std::uint32_t>(in, source);
  if (count != tensors.size()) {
    throw SchemaError(source + ": tensor count mismatch");
  }
  for (TensorView& t : tensors) {
    const std::string name = get_string(in, source);
    const auto size = get<std::uint64_t>(in, source);
    if (name != t.name || size != t.values.size()) {
      throw SchemaError(source + ": unexpected tensor '" + name + "'");
    }
    if (!in.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size_bytes()))) {
      throw SchemaError(source + ": truncated tensor '" + name + "'");
    }
  }
  return params;
}

void save_checkpoint(const LMParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write checkpoint " + path);
  }
  write_params(out, params);
  if (!out) {
    throw IoError("failed writing checkpoint " + path);
  }
}

LMParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read checkpoint " + path);
  }
  return read_params(in, path);
}

}  // namespace chanlab::lm
