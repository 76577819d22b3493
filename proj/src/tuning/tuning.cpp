#include <chanlab/tuning/tuning.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/common/hash.hpp>
#include <chanlab/common/random.hpp>
#include <chanlab/lm/checkpoint.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace chanlab::tuning {
namespace {

constexpr std::uint64_t kPromptInitStream = 21;
constexpr std::uint64_t kBatchStream = 22;
constexpr char kTunedMagic[8] = {'C', 'H', 'T', 'U', 'N', 'E', 'D', '1'};
constexpr std::uint32_t kTunedVersion = 1;

// Per-epoch shuffled cycling over example indices.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(batch), rng_(make_rng(seed, kBatchStream)) {
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = n;
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) {
        shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  Rng rng_;
  std::size_t cursor_;
};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& source) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw SchemaError(source + ": truncated tuned-delta file");
  }
  return v;
}

}  // namespace

std::string_view to_string(TuningKind kind) {
  switch (kind) {
    case TuningKind::HeadTuning:
      return "head";
    case TuningKind::TransformationTuning:
      return "transform";
    case TuningKind::DirectPromptTuning:
      return "direct-prompt";
    case TuningKind::ChannelPromptTuning:
      return "channel-prompt";
    case TuningKind::FullFinetune:
      return "full";
  }
  return "?";
}

std::vector<TuningKind> all_tuning_kinds() {
  return {TuningKind::HeadTuning, TuningKind::TransformationTuning, TuningKind::DirectPromptTuning,
          TuningKind::ChannelPromptTuning, TuningKind::FullFinetune};
}

TuningKind parse_tuning_kind(std::string_view name) {
  for (TuningKind k : all_tuning_kinds()) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw ConfigError("unknown tuning method '" + std::string(name) +
                    "' (expected head, transform, direct-prompt, channel-prompt or full)");
}

bool is_channel(TuningKind kind) { return kind == TuningKind::ChannelPromptTuning; }

lm::GradientSubset subset_of(TuningKind kind) {
  switch (kind) {
    case TuningKind::HeadTuning:
      return lm::GradientSubset::HeadOnly;
    case TuningKind::TransformationTuning:
      return lm::GradientSubset::TransformOnly;
    case TuningKind::DirectPromptTuning:
    case TuningKind::ChannelPromptTuning:
      return lm::GradientSubset::PromptEmbeddingsOnly;
    case TuningKind::FullFinetune:
      return lm::GradientSubset::AllParams;
  }
  return lm::GradientSubset::AllParams;
}

void TrainConfig::validate() const {
  if (steps <= 0) {
    throw ConfigError("train.steps must be positive");
  }
  if (batch_size <= 0) {
    throw ConfigError("train.batch_size must be positive");
  }
  if (lr_grid.empty()) {
    throw ConfigError("train.lr_grid must not be empty");
  }
  for (double lr : lr_grid) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
      throw ConfigError("train.lr_grid values must be finite and non-negative");
    }
  }
  if (!(full_finetune_lr >= 0.0)) {
    throw ConfigError("train.full_finetune_lr must be non-negative");
  }
  if (prompt_len <= 0) {
    throw ConfigError("train.prompt_len must be positive");
  }
  if (select_window <= 0) {
    throw ConfigError("train.select_window must be positive");
  }
}

lm::ModelView TunedModel::view() const {
  if (full) {
    return lm::ModelView(*full, bos);
  }
  lm::Adapters a;
  if (head) {
    a.head = &*head;
  }
  if (transform) {
    a.transform = &*transform;
  }
  if (prompt) {
    a.prompt = &prompt->embeddings;
  }
  return lm::ModelView(*base, bos, a);
}

std::uint64_t TunedModel::delta_fingerprint() const {
  if (full) {
    return full->fingerprint();
  }
  if (head) {
    return lm::fingerprint(*head);
  }
  if (transform) {
    return lm::fingerprint(*transform);
  }
  if (prompt) {
    return lm::fingerprint(prompt->embeddings);
  }
  return 0;
}

TunedModel init_tuning(TuningKind kind, std::shared_ptr<const lm::LMParams> base,
                       const lm::Vocab& vocab, const TrainConfig& config) {
  config.validate();
  if (!base) {
    throw ConfigError("init_tuning needs base parameters");
  }
  if (!base->tied_head()) {
    throw ConfigError("tuning starts from a pretrained LM with a tied head");
  }
  if (static_cast<std::size_t>(base->config().vocab_size) != vocab.size()) {
    throw ConfigError("vocabulary size does not match the base LM");
  }
  TunedModel m;
  m.kind = kind;
  m.bos = vocab.bos();
  switch (kind) {
    case TuningKind::HeadTuning:
      m.head = base->embedding;
      break;
    case TuningKind::TransformationTuning:
      m.transform = Matrix::Identity(base->config().model_dim, base->config().model_dim);
      break;
    case TuningKind::DirectPromptTuning:
    case TuningKind::ChannelPromptTuning: {
      const std::size_t slice = std::min(config.prompt_init_top, vocab.size() - vocab.reserved_count());
      const auto n = static_cast<std::size_t>(config.prompt_len);
      if (n > slice) {
        throw ConfigError("prompt_len " + std::to_string(n) + " exceeds the " +
                          std::to_string(slice) + " most frequent tokens available for init");
      }
      std::vector<lm::TokenId> top = vocab.top_frequent(slice);
      Rng rng = make_rng(config.seed, kPromptInitStream);
      for (std::size_t i = 0; i < n; ++i) {
        std::swap(top[i], top[i + uniform_index(rng, top.size() - i)]);
      }
      PromptState p;
      p.init_token_ids.assign(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(n));
      p.embeddings.resize(static_cast<Eigen::Index>(n), base->config().model_dim);
      for (std::size_t i = 0; i < n; ++i) {
        p.embeddings.row(static_cast<Eigen::Index>(i)) = base->embedding.row(p.init_token_ids[i]);
      }
      m.prompt = std::move(p);
      break;
    }
    case TuningKind::FullFinetune:
      m.full = *base;
      break;
  }
  m.base = std::move(base);
  return m;
}

std::vector<lm::TrainingExample> training_examples(TuningKind kind,
                                                   const data::FewShotSet& fewshot,
                                                   const scoring::Verbalizer& verbalizer,
                                                   const lm::Vocab& vocab) {
  std::vector<lm::TrainingExample> out;
  out.reserve(fewshot.size());
  for (const data::Example& ex : fewshot.examples) {
    lm::TokenSequence x = vocab.encode(ex.text);
    lm::TokenSequence v = vocab.encode(verbalizer(ex.label));
    if (is_channel(kind)) {
      out.push_back({std::move(v), std::move(x)});
    } else {
      out.push_back({std::move(x), std::move(v)});
    }
  }
  return out;
}

TunedModel train(const TunedModel& init, const data::FewShotSet& fewshot,
                 const scoring::Verbalizer& verbalizer, const lm::Vocab& vocab,
                 const TrainConfig& config, double lr) {
  config.validate();
  if (fewshot.size() == 0) {
    throw ConfigError("training needs a non-empty few-shot set");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  verbalizer.validate();
  TunedModel m = init;
  m.lr = lr;
  m.loss_curve.clear();
  const auto examples = training_examples(m.kind, fewshot, verbalizer, vocab);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                                  examples.size());
  BatchCycler cycler(examples.size(), batch, config.seed);

  const bool head_only =
      m.kind == TuningKind::HeadTuning || m.kind == TuningKind::TransformationTuning;
  lm::HeadFeatures features;
  if (head_only) {
    features = lm::compute_head_features(lm::ModelView(*m.base, m.bos), examples);
  }

  std::vector<lm::Adam> optimizers;
  std::vector<std::span<double>> trainable;
  if (m.full) {
    for (auto& t : m.full->tensors()) {
      trainable.push_back(t.values);
    }
  } else if (m.head) {
    trainable.push_back(lm::flat(*m.head));
  } else if (m.transform) {
    trainable.push_back(lm::flat(*m.transform));
  } else {
    trainable.push_back(lm::flat(m.prompt->embeddings));
  }
  for (const auto& t : trainable) {
    optimizers.emplace_back(t.size(), config.adam);
  }

  std::vector<lm::TrainingExample> chunk;
  for (int step = 0; step < config.steps; ++step) {
    const std::vector<std::size_t> idx = cycler.next();
    lm::Gradients g;
    try {
      if (head_only) {
        g = lm::head_gradients(features, idx, m.head ? *m.head : m.base->head(),
                               m.transform ? &*m.transform : nullptr, subset_of(m.kind));
      } else {
        chunk.clear();
        for (std::size_t i : idx) {
          chunk.push_back(examples[i]);
        }
        g = lm::compute_gradients(m.view(), chunk, subset_of(m.kind));
      }
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(step) + " (lr " + std::to_string(lr) +
                           "): " + e.what());
    }
    m.loss_curve.push_back(g.loss);
    if (m.full) {
      const auto grads = g.all->tensors();
      for (std::size_t k = 0; k < trainable.size(); ++k) {
        optimizers[k].step(trainable[k], grads[k].values, lr);
      }
    } else if (m.head) {
      optimizers[0].step(trainable[0], lm::flat(*g.head), lr);
    } else if (m.transform) {
      optimizers[0].step(trainable[0], lm::flat(*g.transform), lr);
    } else {
      optimizers[0].step(trainable[0], lm::flat(*g.prompt), lr);
    }
  }
  return m;
}

std::vector<double> lr_grid_for(TuningKind kind, const TrainConfig& config) {
  if (kind == TuningKind::FullFinetune) {
    return {config.full_finetune_lr};
  }
  return config.lr_grid;
}

LrSelection select_lr(const TunedModel& init, const data::FewShotSet& fewshot,
                      const scoring::Verbalizer& verbalizer, const lm::Vocab& vocab,
                      const TrainConfig& config) {
  config.validate();
  LrSelection out;
  std::optional<std::size_t> best;
  std::vector<TunedModel> models;
  for (double lr : lr_grid_for(init.kind, config)) {
    LrTrial trial;
    trial.lr = lr;
    try {
      TunedModel trained = train(init, fewshot, verbalizer, vocab, config, lr);
      const auto& curve = trained.loss_curve;
      const std::size_t window = std::min<std::size_t>(static_cast<std::size_t>(config.select_window),
                                                       curve.size());
      trial.final_loss =
          std::accumulate(curve.end() - static_cast<std::ptrdiff_t>(window), curve.end(), 0.0) /
          static_cast<double>(window);
      trial.diverged = !std::isfinite(trial.final_loss);
      models.push_back(std::move(trained));
    } catch (const NumericalError& e) {
      trial.diverged = true;
      trial.final_loss = std::numeric_limits<double>::infinity();
      trial.error = e.what();
      models.push_back(init);
    }
    out.trials.push_back(trial);
    const std::size_t i = out.trials.size() - 1;
    if (!trial.diverged) {
      const LrTrial& b = best ? out.trials[*best] : trial;
      if (!best || trial.final_loss < b.final_loss ||
          (trial.final_loss == b.final_loss && trial.lr < b.lr)) {
        best = i;
      }
    }
  }
  if (best) {
    out.lr = out.trials[*best].lr;
    out.model = std::move(models[*best]);
  } else {
    out.all_diverged = true;
    std::size_t smallest = 0;
    for (std::size_t i = 1; i < out.trials.size(); ++i) {
      if (out.trials[i].lr < out.trials[smallest].lr) {
        smallest = i;
      }
    }
    out.lr = out.trials[smallest].lr;
    out.model = init;
    out.model.lr = out.lr;
  }
  return out;
}

scoring::Scorer make_scorer(const TunedModel& model, const lm::Vocab& vocab,
                            const scoring::Verbalizer& verbalizer, bool length_normalize) {
  scoring::ScoringSpec spec;
  spec.method = is_channel(model.kind) ? scoring::Method::Channel : scoring::Method::Direct;
  spec.mode = scoring::Mode::ZeroShot;
  spec.length_normalize = length_normalize;
  return scoring::Scorer(model.view(), vocab, spec, verbalizer);
}

scoring::ClassScores tuned_score(const TunedModel& model, const lm::Vocab& vocab,
                                 const scoring::Verbalizer& verbalizer, std::string_view input) {
  return make_scorer(model, vocab, verbalizer).score(input);
}

void save_tuned(const TunedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write tuned delta to " + path);
  }
  out.write(kTunedMagic, sizeof kTunedMagic);
  write_pod(out, kTunedVersion);
  const std::string kind(to_string(model.kind));
  write_pod(out, static_cast<std::uint32_t>(kind.size()));
  out.write(kind.data(), static_cast<std::streamsize>(kind.size()));
  write_pod(out, model.base->fingerprint());
  write_pod(out, model.lr);
  write_pod(out, static_cast<std::uint64_t>(model.loss_curve.size()));
  for (double v : model.loss_curve) {
    write_pod(out, v);
  }
  if (model.full) {
    lm::write_params(out, *model.full);
  } else if (model.head) {
    lm::write_matrix(out, *model.head);
  } else if (model.transform) {
    lm::write_matrix(out, *model.transform);
  } else if (model.prompt) {
    lm::write_matrix(out, model.prompt->embeddings);
    write_pod(out, static_cast<std::uint64_t>(model.prompt->init_token_ids.size()));
    for (lm::TokenId id : model.prompt->init_token_ids) {
      write_pod(out, id);
    }
  }
  if (!out) {
    throw IoError("failed writing tuned delta " + path);
  }
}

TunedModel load_tuned(const std::string& path, std::shared_ptr<const lm::LMParams> base,
                      lm::TokenId bos) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read tuned delta " + path);
  }
  char magic[sizeof kTunedMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kTunedMagic, sizeof magic) != 0) {
    throw SchemaError(path + ": not a tuned-delta file");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kTunedVersion) {
    throw SchemaError(path + ": unsupported tuned-delta version " + std::to_string(version));
  }
  const auto kind_len = read_pod<std::uint32_t>(in, path);
  std::string kind(kind_len, '\0');
  in.read(kind.data(), kind_len);
  TunedModel m;
  m.kind = parse_tuning_kind(kind);
  m.bos = bos;
  const auto fp = read_pod<std::uint64_t>(in, path);
  if (fp != base->fingerprint()) {
    throw SchemaError(path + ": delta was trained on a different base LM");
  }
  m.lr = read_pod<double>(in, path);
  const auto curve = read_pod<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < curve; ++i) {
    m.loss_curve.push_back(read_pod<double>(in, path));
  }
  switch (m.kind) {
    case TuningKind::FullFinetune:
      m.full = lm::read_params(in, path);
      break;
    case TuningKind::HeadTuning:
      m.head = lm::read_matrix(in, path);
      break;
    case TuningKind::TransformationTuning:
      m.transform = lm::read_matrix(in, path);
      break;
    case TuningKind::DirectPromptTuning:
    case TuningKind::ChannelPromptTuning: {
      PromptState p;
      p.embeddings = lm::read_matrix(in, path);
      const auto n = read_pod<std::uint64_t>(in, path);
      for (std::uint64_t i = 0; i < n; ++i) {
        p.init_token_ids.push_back(read_pod<lm::TokenId>(in, path));
      }
      m.prompt = std::move(p);
      break;
    }
  }
  m.base = std::move(base);
  return m;
}

void write_loss_curve(const std::vector<double>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write loss curve to " + path);
  }
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << i << ',' << curve[i] << '\n';
  }
}

}  // namespace chanlab::tuning
