#include "forward.hpp"

#include <chanlab/common/errors.hpp>

#include <cmath>
#include <limits>
#include <string>

namespace chanlab::lm {
namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

void layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, Matrix& hat,
                Eigen::VectorXd& rstd, Matrix& out) {
  const Eigen::Index n = x.rows();
  const double width = static_cast<double>(x.cols());
  hat.resize(x.rows(), x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / width;
    const double var = (x.row(i).array() - mean).square().sum() / width;
    rstd(i) = 1.0 / std::sqrt(var + kNormEps);
    hat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  out = (hat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

// dx for y = hat * gain + bias; accumulates dgain/dbias when given.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& hat, const Eigen::VectorXd& rstd,
                           const RowVector& gain, RowVector* dgain, RowVector* dbias) {
  if (dgain != nullptr) {
    *dgain += (dy.array() * hat.array()).colwise().sum().matrix();
    *dbias += dy.colwise().sum();
  }
  const double width = static_cast<double>(dy.cols());
  Matrix dhat = dy.array().rowwise() * gain.array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dhat.row(i).sum() / width;
    const double mean_dh = dhat.row(i).dot(hat.row(i)) / width;
    dx.row(i) = (dhat.row(i).array() - mean_d - hat.row(i).array() * mean_dh) * rstd(i);
  }
  return dx;
}

double gelu(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

void softmax_rows_causal(Matrix& scores, Eigen::Index past) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::Index visible = past + i + 1;
    auto row = scores.row(i);
    const double peak = row.head(visible).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < visible; ++j) {
      row(j) = std::exp(row(j) - peak);
      total += row(j);
    }
    row.head(visible) /= total;
    row.tail(row.size() - visible).setZero();
  }
}

}  // namespace

Matrix Forward::run(const ModelView& model, std::span<const TokenId> tokens,
                    std::span<const Segment> segments, const DecoderState* cache,
                    DecoderState* out_cache, Trace* trace) {
  const LMParams& p = model.params();
  const LMConfig& cfg = p.config();
  const Eigen::Index h = cfg.model_dim;
  const Eigen::Index heads = cfg.heads;
  const Eigen::Index d = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index past = cache != nullptr ? cache->length_ : 0;

  Matrix x(n, h);
  for (const Segment& seg : segments) {
    if (seg.prefix_length > 0 && past > 0) {
      throw ConfigError("segments with an in-batch prefix cannot continue a cache");
    }
    const Eigen::Index start = past + seg.prefix_length;
    if (start + seg.length > cfg.max_seq_len) {
      throw LengthError("sequence of " + std::to_string(start + seg.length) +
                        " positions exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (Eigen::Index t = 0; t < seg.length; ++t) {
      const Eigen::Index row = seg.offset + t;
      const TokenId id = tokens[static_cast<std::size_t>(row)];
      if (is_prompt_slot(id)) {
        const Matrix* prompt = model.adapters().prompt;
        if (prompt == nullptr || prompt_row(id) >= prompt->rows()) {
          throw ConfigError("prompt slot " + std::to_string(prompt_row(id)) + " has no prompt row");
        }
        x.row(row) = prompt->row(prompt_row(id));
      } else {
        if (id >= p.embedding.rows()) {
          throw ConfigError("token id " + std::to_string(id) + " outside the vocabulary");
        }
        x.row(row) = p.embedding.row(id);
      }
      x.row(row) += p.positional.row(start + t);
    }
  }

  if (trace != nullptr) {
    trace->layers.assign(p.layers.size(), {});
  }
  if (out_cache != nullptr) {
    out_cache->keys_.resize(p.layers.size());
    out_cache->values_.resize(p.layers.size());
  }

  Matrix hat, ln_out, qkv, attn, resid, mlp_pre, mlp_act;
  Eigen::VectorXd rstd;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& lp = p.layers[l];
    LayerTrace* lt = trace != nullptr ? &trace->layers[l] : nullptr;
    if (lt != nullptr) {
      lt->input = x;
    }

    layer_norm(x, lp.ln1_gain, lp.ln1_bias, hat, rstd, ln_out);
    qkv.noalias() = ln_out * lp.attn_qkv;
    qkv.rowwise() += lp.attn_qkv_bias;
    if (lt != nullptr) {
      lt->ln1_hat = hat;
      lt->ln1_rstd = rstd;
      lt->ln1_out = ln_out;
      lt->qkv = qkv;
      lt->probs.resize(segments.size() * static_cast<std::size_t>(heads));
    }

    attn.resize(n, h);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const Segment& seg = segments[s];
      const Eigen::Index lead = past + seg.prefix_length;
      const Eigen::Index total = lead + seg.length;
      for (Eigen::Index hd = 0; hd < heads; ++hd) {
        Matrix keys(total, d);
        Matrix vals(total, d);
        if (past > 0) {
          keys.topRows(past) = cache->keys_[l].block(0, hd * d, past, d);
          vals.topRows(past) = cache->values_[l].block(0, hd * d, past, d);
        } else if (seg.prefix_length > 0) {
          keys.topRows(lead) = qkv.block(seg.prefix_offset, h + hd * d, lead, d);
          vals.topRows(lead) = qkv.block(seg.prefix_offset, 2 * h + hd * d, lead, d);
        }
        keys.bottomRows(seg.length) = qkv.block(seg.offset, h + hd * d, seg.length, d);
        vals.bottomRows(seg.length) = qkv.block(seg.offset, 2 * h + hd * d, seg.length, d);
        Matrix scores = (qkv.block(seg.offset, hd * d, seg.length, d) * keys.transpose()) * scale;
        softmax_rows_causal(scores, lead);
        attn.block(seg.offset, hd * d, seg.length, d).noalias() = scores * vals;
        if (lt != nullptr) {
          lt->probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(hd)] =
              std::move(scores);
        }
      }
    }
    if (out_cache != nullptr) {
      Matrix& k = out_cache->keys_[l];
      Matrix& v = out_cache->values_[l];
      k.resize(past + n, h);
      v.resize(past + n, h);
      if (past > 0) {
        k.topRows(past) = cache->keys_[l];
        v.topRows(past) = cache->values_[l];
      }
      k.bottomRows(n) = qkv.middleCols(h, h);
      v.bottomRows(n) = qkv.middleCols(2 * h, h);
    }

    resid = x;
    resid.noalias() += attn * lp.attn_out;
    resid.rowwise() += lp.attn_out_bias;

    layer_norm(resid, lp.ln2_gain, lp.ln2_bias, hat, rstd, ln_out);
    mlp_pre.noalias() = ln_out * lp.mlp_in;
    mlp_pre.rowwise() += lp.mlp_in_bias;
    mlp_act = mlp_pre.unaryExpr([](double v) { return gelu(v); });
    x = resid;
    x.noalias() += mlp_act * lp.mlp_out;
    x.rowwise() += lp.mlp_out_bias;

    if (lt != nullptr) {
      lt->attn = attn;
      lt->resid = resid;
      lt->ln2_hat = hat;
      lt->ln2_rstd = rstd;
      lt->ln2_out = ln_out;
      lt->mlp_pre = mlp_pre;
      lt->mlp_act = mlp_act;
    }
  }

  Matrix out;
  layer_norm(x, p.final_gain, p.final_bias, hat, rstd, out);
  if (trace != nullptr) {
    trace->final_hat = hat;
    trace->final_rstd = rstd;
  }
  if (out_cache != nullptr) {
    out_cache->length_ = static_cast<int>(past + n);
    out_cache->last_hidden_ = n > 0 ? RowVector(out.row(n - 1))
                                     : (cache != nullptr ? cache->last_hidden_ : RowVector());
  }
  return out;
}

void Forward::backward(const ModelView& model, std::span<const TokenId> tokens,
                       std::span<const Segment> segments, const Trace& trace,
                       const Matrix& d_hidden, LMParams* grads, Matrix* d_prompt) {
  const LMParams& p = model.params();
  const LMConfig& cfg = p.config();
  const Eigen::Index h = cfg.model_dim;
  const Eigen::Index heads = cfg.heads;
  const Eigen::Index d = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Eigen::Index n = d_hidden.rows();

  Matrix dx = layer_norm_backward(d_hidden, trace.final_hat, trace.final_rstd, p.final_gain,
                                  grads ? &grads->final_gain : nullptr,
                                  grads ? &grads->final_bias : nullptr);

  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const LayerParams& lp = p.layers[l];
    const LayerTrace& lt = trace.layers[l];
    LayerParams* g = grads != nullptr ? &grads->layers[l] : nullptr;

    // MLP block: x_out = resid + gelu(ln2(resid) W_in + b_in) W_out + b_out
    Matrix d_act = dx * lp.mlp_out.transpose();
    if (g != nullptr) {
      g->mlp_out.noalias() += lt.mlp_act.transpose() * dx;
      g->mlp_out_bias += dx.colwise().sum();
    }
    Matrix d_pre = d_act.array() * lt.mlp_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    if (g != nullptr) {
      g->mlp_in.noalias() += lt.ln2_out.transpose() * d_pre;
      g->mlp_in_bias += d_pre.colwise().sum();
    }
    Matrix d_ln2 = d_pre * lp.mlp_in.transpose();
    Matrix d_resid = dx + layer_norm_backward(d_ln2, lt.ln2_hat, lt.ln2_rstd, lp.ln2_gain,
                                              g ? &g->ln2_gain : nullptr,
                                              g ? &g->ln2_bias : nullptr);

    // Attention block: resid = x_in + attn W_o + b_o
    Matrix d_attn = d_resid * lp.attn_out.transpose();
    if (g != nullptr) {
      g->attn_out.noalias() += lt.attn.transpose() * d_resid;
      g->attn_out_bias += d_resid.colwise().sum();
    }
    Matrix d_qkv = Matrix::Zero(n, 3 * h);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const Segment& seg = segments[s];
      const Eigen::Index lead = seg.prefix_length;
      const Eigen::Index total = lead + seg.length;
      for (Eigen::Index hd = 0; hd < heads; ++hd) {
        const Matrix& probs = lt.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(hd)];
        const auto q = lt.qkv.block(seg.offset, hd * d, seg.length, d);
        Matrix k(total, d);
        Matrix v(total, d);
        if (lead > 0) {
          k.topRows(lead) = lt.qkv.block(seg.prefix_offset, h + hd * d, lead, d);
          v.topRows(lead) = lt.qkv.block(seg.prefix_offset, 2 * h + hd * d, lead, d);
        }
        k.bottomRows(seg.length) = lt.qkv.block(seg.offset, h + hd * d, seg.length, d);
        v.bottomRows(seg.length) = lt.qkv.block(seg.offset, 2 * h + hd * d, seg.length, d);
        const auto da = d_attn.block(seg.offset, hd * d, seg.length, d);

        Matrix d_probs = da * v.transpose();
        const Matrix d_v = probs.transpose() * da;
        Eigen::VectorXd row_dot = (d_probs.array() * probs.array()).rowwise().sum();
        Matrix d_scores = probs.array() * (d_probs.colwise() - row_dot).array();
        d_scores *= scale;
        const Matrix d_k = d_scores.transpose() * q;
        d_qkv.block(seg.offset, hd * d, seg.length, d).noalias() += d_scores * k;
        d_qkv.block(seg.offset, h + hd * d, seg.length, d) += d_k.bottomRows(seg.length);
        d_qkv.block(seg.offset, 2 * h + hd * d, seg.length, d) += d_v.bottomRows(seg.length);
        if (lead > 0) {
          d_qkv.block(seg.prefix_offset, h + hd * d, lead, d) += d_k.topRows(lead);
          d_qkv.block(seg.prefix_offset, 2 * h + hd * d, lead, d) += d_v.topRows(lead);
        }
      }
    }
    if (g != nullptr) {
      g->attn_qkv.noalias() += lt.ln1_out.transpose() * d_qkv;
      g->attn_qkv_bias += d_qkv.colwise().sum();
    }
    Matrix d_ln1 = d_qkv * lp.attn_qkv.transpose();
    dx = d_resid + layer_norm_backward(d_ln1, lt.ln1_hat, lt.ln1_rstd, lp.ln1_gain,
                                       g ? &g->ln1_gain : nullptr, g ? &g->ln1_bias : nullptr);
  }

  for (const Segment& seg : segments) {
    for (Eigen::Index t = 0; t < seg.length; ++t) {
      const Eigen::Index row = seg.offset + t;
      const TokenId id = tokens[static_cast<std::size_t>(row)];
      if (is_prompt_slot(id)) {
        if (d_prompt != nullptr) {
          d_prompt->row(prompt_row(id)) += dx.row(row);
        }
      } else if (grads != nullptr) {
        grads->embedding.row(id) += dx.row(row);
      }
      if (grads != nullptr) {
        grads->positional.row(seg.prefix_length + t) += dx.row(row);
      }
    }
  }
}

double sum_target_logprob(const ModelView& model, const Matrix& hidden,
                          std::span<const TokenId> targets) {
  Matrix z = hidden;
  if (model.adapters().transform != nullptr) {
    z = hidden * model.adapters().transform->transpose();
  }
  const Matrix logits = z * model.head().transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    total += logits(i, targets[static_cast<std::size_t>(i)]) - lse;
  }
  return total;
}

}  // namespace chanlab::lm
