#pragma once

// Hand-built language models with known next-token distributions.

#include <chanlab/lm/params.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace chanlab::testing {

using lm::LMConfig;
using lm::LMParams;
using lm::Matrix;

// Every weight zero: all logits are zero, so the LM is uniform over the vocab.
inline LMParams uniform_lm(int vocab_size, int max_seq_len = 32) {
  LMConfig c;
  c.layers = 1;
  c.heads = 1;
  c.model_dim = 8;
  c.max_seq_len = max_seq_len;
  c.vocab_size = vocab_size;
  return LMParams::zeros(c);
}

// An LM whose next-token distribution depends only on the current token:
// P(next = j | current = i) = exp(log_table(i, j)) / sum_k exp(log_table(i, k)).
// Attention and MLP weights are zero so the residual stream carries the
// one-hot token embedding; an untied head maps its normalised form onto the
// requested logits.
inline LMParams bigram_lm(const Eigen::MatrixXd& log_table, int max_seq_len = 64) {
  const int v = static_cast<int>(log_table.rows());
  LMConfig c;
  c.layers = 1;
  c.heads = 1;
  c.model_dim = v + 2;
  c.max_seq_len = max_seq_len;
  c.vocab_size = v;
  LMParams p = LMParams::zeros(c);
  p.final_gain.setOnes();
  for (auto& layer : p.layers) {
    layer.ln1_gain.setOnes();
    layer.ln2_gain.setOnes();
  }
  p.embedding.setZero();
  for (int i = 0; i < v; ++i) {
    p.embedding(i, i) = 1.0;
  }
  // Normalised embeddings exactly as the final layer norm computes them.
  Eigen::MatrixXd hat(v, c.model_dim);
  for (int i = 0; i < v; ++i) {
    const Eigen::RowVectorXd x = p.embedding.row(i);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    hat.row(i) = (x.array() - mean) / std::sqrt(var + 1e-5);
  }
  // hat * head^T = table; hat has full row rank.
  const Eigen::MatrixXd gram = hat * hat.transpose();
  const Eigen::MatrixXd pinv = hat.transpose() * gram.ldlt().solve(Eigen::MatrixXd::Identity(v, v));
  p.untie();
  p.untied_head() = (pinv * log_table).transpose();
  return p;
}

// Row-normalised log table from an explicit probability table.
inline Eigen::MatrixXd log_of(const Eigen::MatrixXd& probs) { return probs.array().log().matrix(); }

// Seeded LM with weights scaled up so that every path carries signal.
inline LMParams random_lm(int vocab_size, std::uint64_t seed, double scale = 10.0, int layers = 2,
                          int dim = 16, int heads = 2, int max_seq_len = 48) {
  LMConfig c;
  c.layers = layers;
  c.heads = heads;
  c.model_dim = dim;
  c.max_seq_len = max_seq_len;
  c.vocab_size = vocab_size;
  c.seed = seed;
  LMParams p = LMParams::initialize(c);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& t : p.tensors()) {
    if (t.name.find("gain") != std::string::npos) {
      continue;
    }
    for (double& x : t.values) {
      x *= scale;
    }
  }
  for (auto& layer : p.layers) {
    for (double& x : lm::flat(layer.ln1_bias)) x = jitter(rng);
    for (double& x : lm::flat(layer.ln2_gain)) x = 1.0 + jitter(rng);
  }
  return p;
}

}  // namespace chanlab::testing
