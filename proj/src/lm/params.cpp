#include <chanlab/lm/params.hpp>

#include <chanlab/common/hash.hpp>

#include <cstring>
#include <random>
#include <stdexcept>

namespace chanlab::lm {
namespace {

constexpr double kInitStd = 0.02;

}  // namespace

LMParams::LMParams(const LMConfig& config) : config_(config) {
  config.validate();
  const int h = config.model_dim;
  embedding = Matrix::Zero(config.vocab_size, h);
  positional = Matrix::Zero(config.max_seq_len, h);
  layers.resize(static_cast<std::size_t>(config.layers));
  for (LayerParams& l : layers) {
    l.ln1_gain = RowVector::Zero(h);
    l.ln1_bias = RowVector::Zero(h);
    l.attn_qkv = Matrix::Zero(h, 3 * h);
    l.attn_qkv_bias = RowVector::Zero(3 * h);
    l.attn_out = Matrix::Zero(h, h);
    l.attn_out_bias = RowVector::Zero(h);
    l.ln2_gain = RowVector::Zero(h);
    l.ln2_bias = RowVector::Zero(h);
    l.mlp_in = Matrix::Zero(h, config.mlp_dim());
    l.mlp_in_bias = RowVector::Zero(config.mlp_dim());
    l.mlp_out = Matrix::Zero(config.mlp_dim(), h);
    l.mlp_out_bias = RowVector::Zero(h);
  }
  final_gain = RowVector::Zero(h);
  final_bias = RowVector::Zero(h);
}

LMParams LMParams::zeros(const LMConfig& config) { return LMParams(config); }

LMParams LMParams::initialize(const LMConfig& config) {
  LMParams p(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = normal(rng);
    }
  };
  fill(p.embedding);
  fill(p.positional);
  for (LayerParams& l : p.layers) {
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    fill(l.attn_qkv);
    fill(l.attn_out);
    fill(l.mlp_in);
    fill(l.mlp_out);
  }
  p.final_gain.setOnes();
  return p;
}

Matrix& LMParams::untied_head() {
  if (!head_) {
    throw std::logic_error("head is tied to the embedding; call untie() first");
  }
  return *head_;
}

void LMParams::untie() {
  if (!head_) {
    head_ = embedding;
  }
}

std::vector<TensorView> LMParams::tensors() {
  std::vector<TensorView> out;
  out.push_back({"embedding", flat(embedding)});
  out.push_back({"positional", flat(positional)});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerParams& l = layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.push_back({pre + "ln1_gain", flat(l.ln1_gain)});
    out.push_back({pre + "ln1_bias", flat(l.ln1_bias)});
    out.push_back({pre + "attn_qkv", flat(l.attn_qkv)});
    out.push_back({pre + "attn_qkv_bias", flat(l.attn_qkv_bias)});
    out.push_back({pre + "attn_out", flat(l.attn_out)});
    out.push_back({pre + "attn_out_bias", flat(l.attn_out_bias)});
    out.push_back({pre + "ln2_gain", flat(l.ln2_gain)});
    out.push_back({pre + "ln2_bias", flat(l.ln2_bias)});
    out.push_back({pre + "mlp_in", flat(l.mlp_in)});
    out.push_back({pre + "mlp_in_bias", flat(l.mlp_in_bias)});
    out.push_back({pre + "mlp_out", flat(l.mlp_out)});
    out.push_back({pre + "mlp_out_bias", flat(l.mlp_out_bias)});
  }
  out.push_back({"final_gain", flat(final_gain)});
  out.push_back({"final_bias", flat(final_bias)});
  if (head_) {
    out.push_back({"head", flat(*head_)});
  }
  return out;
}

std::vector<ConstTensorView> LMParams::tensors() const {
  std::vector<ConstTensorView> out;
  for (const TensorView& t : const_cast<LMParams*>(this)->tensors()) {
    out.push_back({t.name, t.values});
  }
  return out;
}

std::size_t LMParams::parameter_count() const {
  std::size_t total = 0;
  for (const ConstTensorView& t : tensors()) {
    total += t.values.size();
  }
  return total;
}

std::uint64_t LMParams::fingerprint() const {
  Fnv1a h;
  for (const ConstTensorView& t : tensors()) {
    h.update(t.name);
    h.update(t.values);
  }
  const unsigned char tied = tied_head() ? 1 : 0;
  h.update(&tied, 1);
  return h.digest();
}

// Bitwise: -0.0 differs from 0.0 and identical NaNs compare equal.
bool operator==(const LMParams& a, const LMParams& b) {
  if (!(a.config_ == b.config_) || a.tied_head() != b.tied_head()) {
    return false;
  }
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].values.size() != tb[i].values.size() ||
        std::memcmp(ta[i].values.data(), tb[i].values.data(), ta[i].values.size_bytes()) != 0) {
      return false;
    }
  }
  return true;
}

std::uint64_t fingerprint(std::span<const double> values) {
  Fnv1a h;
  h.update(values);
  return h.digest();
}

std::uint64_t fingerprint(const Matrix& m) { return fingerprint(flat(m)); }

}  // namespace chanlab::lm
