#include <chanlab/lm/gradients.hpp>

#include <chanlab/common/errors.hpp>

#include "forward.hpp"

#include <cmath>
#include <sstream>

namespace chanlab::lm {
namespace {

struct PackedBatch {
  TokenSequence tokens;
  std::vector<Segment> segments;
  std::vector<Eigen::Index> target_rows;  // packed row predicting each target token
  std::vector<TokenId> targets;
  std::vector<std::size_t> example_offset;
};

// With prompt rows, BOS and the prompt slots form one shared leading
// segment that every example attends to; otherwise each example is framed on
// its own.
PackedBatch pack(const ModelView& model, std::span<const TrainingExample> batch) {
  PackedBatch packed;
  packed.example_offset.push_back(0);
  const bool shared = model.prompt_len() > 0;
  Eigen::Index lead = 0;
  if (shared) {
    packed.tokens = model.frame({});
    lead = static_cast<Eigen::Index>(packed.tokens.size());
    packed.segments.push_back({0, lead});
  }
  for (const TrainingExample& ex : batch) {
    TokenSequence seq = shared ? TokenSequence(ex.context.begin(), ex.context.end())
                               : model.frame(ex.context);
    const auto offset = static_cast<Eigen::Index>(packed.tokens.size());
    const auto context_len = static_cast<Eigen::Index>(seq.size());
    if (!ex.target.empty()) {
      seq.insert(seq.end(), ex.target.begin(), ex.target.end() - 1);
    }
    for (std::size_t k = 0; k < ex.target.size(); ++k) {
      // Position (within the example's own rows) of the token predicting target k.
      const Eigen::Index pos = context_len - 1 + static_cast<Eigen::Index>(k);
      packed.target_rows.push_back(pos < 0 ? lead + pos : offset + pos);
      packed.targets.push_back(ex.target[k]);
    }
    if (!seq.empty()) {
      packed.segments.push_back({offset, static_cast<Eigen::Index>(seq.size()), 0, lead});
    }
    packed.tokens.insert(packed.tokens.end(), seq.begin(), seq.end());
    packed.example_offset.push_back(packed.targets.size());
  }
  return packed;
}

Matrix gather_rows(const Matrix& hidden, std::span<const Eigen::Index> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), hidden.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = hidden.row(rows[i]);
  }
  return out;
}

struct HeadPass {
  double loss = 0.0;
  Matrix d_head;
  Matrix d_transform;
  Matrix d_hidden;  // gradient w.r.t. the selected hidden rows
};

// Mean NLL of `targets` under softmax(O U h) and the requested gradients.
HeadPass head_pass(const Matrix& hidden, std::span<const TokenId> targets, const Matrix& head,
                   const Matrix* transform, bool want_head, bool want_transform,
                   bool want_hidden) {
  HeadPass out;
  const Eigen::Index rows = hidden.rows();
  if (rows == 0) {
    throw ConfigError("batch has no target tokens");
  }
  const Matrix z = transform != nullptr ? Matrix(hidden * transform->transpose()) : hidden;
  Matrix probs = z * head.transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    auto row = probs.row(i);
    const double peak = row.maxCoeff();
    row = (row.array() - peak).exp();
    const double norm = row.sum();
    const TokenId t = targets[static_cast<std::size_t>(i)];
    total -= std::log(row(t) / norm);
    row /= norm;
  }
  out.loss = total / static_cast<double>(rows);
  if (!std::isfinite(out.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss (" << out.loss << ") over " << rows << " target tokens";
    throw NumericalError(msg.str());
  }
  if (!want_head && !want_transform && !want_hidden) {
    return out;
  }
  Matrix& d_logits = probs;
  for (Eigen::Index i = 0; i < rows; ++i) {
    d_logits(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
  }
  d_logits /= static_cast<double>(rows);
  if (want_head) {
    out.d_head = d_logits.transpose() * z;
  }
  if (want_transform || want_hidden) {
    const Matrix d_z = d_logits * head;
    if (want_transform) {
      out.d_transform = d_z.transpose() * hidden;
    }
    if (want_hidden) {
      out.d_hidden = transform != nullptr ? Matrix(d_z * *transform) : d_z;
    }
  }
  return out;
}

void check_subset(const ModelView& model, GradientSubset subset) {
  const Adapters& a = model.adapters();
  switch (subset) {
    case GradientSubset::TransformOnly:
      if (a.transform == nullptr) {
        throw ConfigError("TransformOnly gradients need a transform adapter");
      }
      break;
    case GradientSubset::PromptEmbeddingsOnly:
      if (a.prompt == nullptr) {
        throw ConfigError("PromptEmbeddingsOnly gradients need prompt embeddings");
      }
      break;
    case GradientSubset::AllParams:
      if (a.head != nullptr) {
        throw ConfigError("AllParams gradients cannot be combined with a replacement head");
      }
      break;
    case GradientSubset::HeadOnly:
      break;
  }
}

}  // namespace

std::string_view to_string(GradientSubset subset) {
  switch (subset) {
    case GradientSubset::HeadOnly:
      return "HeadOnly";
    case GradientSubset::TransformOnly:
      return "TransformOnly";
    case GradientSubset::PromptEmbeddingsOnly:
      return "PromptEmbeddingsOnly";
    case GradientSubset::AllParams:
      return "AllParams";
  }
  return "?";
}

Gradients compute_gradients(const ModelView& model, std::span<const TrainingExample> batch,
                            GradientSubset subset) {
  if (batch.empty()) {
    throw ConfigError("compute_gradients needs a non-empty batch");
  }
  check_subset(model, subset);
  const PackedBatch packed = pack(model, batch);
  const bool deep =
      subset == GradientSubset::PromptEmbeddingsOnly || subset == GradientSubset::AllParams;

  Trace trace;
  const Matrix hidden =
      Forward::run(model, packed.tokens, packed.segments, nullptr, nullptr, deep ? &trace : nullptr);
  const Matrix selected = gather_rows(hidden, packed.target_rows);
  HeadPass pass = head_pass(selected, packed.targets, model.head(), model.adapters().transform,
                            subset == GradientSubset::HeadOnly || subset == GradientSubset::AllParams,
                            subset == GradientSubset::TransformOnly, deep);

  Gradients out;
  out.loss = pass.loss;
  out.tokens = packed.targets.size();
  switch (subset) {
    case GradientSubset::HeadOnly:
      out.head = std::move(pass.d_head);
      return out;
    case GradientSubset::TransformOnly:
      out.transform = std::move(pass.d_transform);
      return out;
    default:
      break;
  }

  Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
  for (std::size_t i = 0; i < packed.target_rows.size(); ++i) {
    d_hidden.row(packed.target_rows[i]) += pass.d_hidden.row(static_cast<Eigen::Index>(i));
  }
  if (subset == GradientSubset::PromptEmbeddingsOnly) {
    Matrix d_prompt = Matrix::Zero(model.adapters().prompt->rows(), model.adapters().prompt->cols());
    Forward::backward(model, packed.tokens, packed.segments, trace, d_hidden, nullptr, &d_prompt);
    out.prompt = std::move(d_prompt);
    return out;
  }

  LMParams grads = LMParams::zeros(model.params().config());
  if (!model.params().tied_head()) {
    grads.untie();
  }
  Forward::backward(model, packed.tokens, packed.segments, trace, d_hidden, &grads, nullptr);
  if (grads.tied_head()) {
    grads.embedding += pass.d_head;
  } else {
    grads.untied_head() += pass.d_head;
  }
  out.all = std::move(grads);
  return out;
}

double batch_loss(const ModelView& model, std::span<const TrainingExample> batch) {
  if (batch.empty()) {
    throw ConfigError("batch_loss needs a non-empty batch");
  }
  const PackedBatch packed = pack(model, batch);
  const Matrix hidden = Forward::run(model, packed.tokens, packed.segments, nullptr, nullptr, nullptr);
  return head_pass(gather_rows(hidden, packed.target_rows), packed.targets, model.head(),
                   model.adapters().transform, false, false, false)
      .loss;
}

HeadFeatures compute_head_features(const ModelView& model,
                                   std::span<const TrainingExample> examples) {
  HeadFeatures out;
  if (examples.empty()) {
    out.example_offset.push_back(0);
    out.hidden = Matrix(0, model.params().config().model_dim);
    return out;
  }
  const PackedBatch packed = pack(model, examples);
  const Matrix hidden = Forward::run(model, packed.tokens, packed.segments, nullptr, nullptr, nullptr);
  out.hidden = gather_rows(hidden, packed.target_rows);
  out.target = packed.targets;
  out.example_offset = packed.example_offset;
  return out;
}

Gradients head_gradients(const HeadFeatures& features, std::span<const std::size_t> examples,
                         const Matrix& head, const Matrix* transform, GradientSubset subset) {
  if (subset != GradientSubset::HeadOnly && subset != GradientSubset::TransformOnly) {
    throw ConfigError("head_gradients supports HeadOnly and TransformOnly only");
  }
  if (subset == GradientSubset::TransformOnly && transform == nullptr) {
    throw ConfigError("TransformOnly gradients need a transform");
  }
  std::vector<Eigen::Index> rows;
  std::vector<TokenId> targets;
  for (std::size_t e : examples) {
    for (std::size_t r = features.example_offset[e]; r < features.example_offset[e + 1]; ++r) {
      rows.push_back(static_cast<Eigen::Index>(r));
      targets.push_back(features.target[r]);
    }
  }
  HeadPass pass = head_pass(gather_rows(features.hidden, rows), targets, head, transform,
                            subset == GradientSubset::HeadOnly,
                            subset == GradientSubset::TransformOnly, false);
  Gradients out;
  out.loss = pass.loss;
  out.tokens = targets.size();
  if (subset == GradientSubset::HeadOnly) {
    out.head = std::move(pass.d_head);
  } else {
    out.transform = std::move(pass.d_transform);
  }
  return out;
}

}  // namespace chanlab::lm
