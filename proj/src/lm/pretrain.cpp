#include <chanlab/lm/pretrain.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/lm/adam.hpp>
#include <chanlab/lm/gradients.hpp>
#include <chanlab/lm/model.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace chanlab::lm {
namespace {

// Endless stream of corpus tokens: documents in a fresh seeded order each
// epoch, separated by the newline token when the vocabulary has one.
class TokenStream {
 public:
  TokenStream(const Vocab& vocab, std::span<const std::string> corpus, std::uint64_t seed)
      : rng_(seed), separator_(vocab.newline()) {
    for (const std::string& doc : corpus) {
      docs_.push_back(vocab.encode(doc));
    }
    order_.resize(docs_.size());
    std::iota(order_.begin(), order_.end(), 0);
    refill();
  }

  TokenSequence take(std::size_t n) {
    TokenSequence out;
    out.reserve(n);
    while (out.size() < n) {
      if (pos_ == buffer_.size()) {
        refill();
      }
      const std::size_t k = std::min(n - out.size(), buffer_.size() - pos_);
      out.insert(out.end(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_),
                 buffer_.begin() + static_cast<std::ptrdiff_t>(pos_ + k));
      pos_ += k;
    }
    return out;
  }

 private:
  void refill() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    buffer_.clear();
    pos_ = 0;
    for (std::size_t i : order_) {
      buffer_.insert(buffer_.end(), docs_[i].begin(), docs_[i].end());
      if (separator_) {
        buffer_.push_back(*separator_);
      }
    }
    if (buffer_.empty()) {
      throw ConfigError("pretraining corpus contains no tokens");
    }
  }

  std::mt19937_64 rng_;
  std::optional<TokenId> separator_;
  std::vector<TokenSequence> docs_;
  std::vector<std::size_t> order_;
  TokenSequence buffer_;
  std::size_t pos_ = 0;
};

}  // namespace

PretrainResult pretrain(const LMConfig& config, const Vocab& vocab,
                        std::span<const std::string> corpus, int steps,
                        const PretrainOptions& options) {
  if (static_cast<std::size_t>(config.vocab_size) != vocab.size()) {
    throw ConfigError("lm.vocab_size (" + std::to_string(config.vocab_size) +
                      ") does not match the vocabulary (" + std::to_string(vocab.size()) + ")");
  }
  if (steps < 0 || options.batch_size <= 0) {
    throw ConfigError("pretraining needs steps >= 0 and a positive batch size");
  }
  PretrainResult result{LMParams::initialize(config), {}};
  if (steps == 0) {
    return result;
  }
  if (corpus.empty()) {
    throw ConfigError("pretraining corpus is empty");
  }
  const int context = options.context_len > 0 ? std::min(options.context_len, config.max_seq_len)
                                              : config.max_seq_len;
  if (context < 2) {
    throw ConfigError("pretraining context must hold BOS plus one token");
  }

  TokenStream stream(vocab, corpus, config.seed ^ 0x9e3779b97f4a7c15ULL);
  LMParams& params = result.params;
  std::vector<Adam> optimizers;
  for (const TensorView& t : params.tensors()) {
    optimizers.emplace_back(t.values.size());
  }

  std::vector<TrainingExample> batch(static_cast<std::size_t>(options.batch_size));
  for (int step = 0; step < steps; ++step) {
    for (TrainingExample& ex : batch) {
      ex.target = stream.take(static_cast<std::size_t>(context - 1));
    }
    const Gradients g =
        compute_gradients(ModelView(params, vocab.bos()), batch, GradientSubset::AllParams);
    result.loss_curve.push_back(g.loss);
    const double progress = steps > 1 ? static_cast<double>(step) / (steps - 1) : 0.0;
    const double lr = options.lr * (1.0 - (1.0 - options.final_lr_fraction) * progress);
    auto tensors = params.tensors();
    const auto grads = g.all->tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      optimizers[i].step(tensors[i].values, grads[i].values, lr);
    }
  }
  return result;
}

double perplexity(const LMParams& params, const Vocab& vocab,
                  std::span<const std::string> documents) {
  std::vector<TrainingExample> batch;
  std::size_t tokens = 0;
  for (const std::string& doc : documents) {
    TrainingExample ex{{}, vocab.encode(doc)};
    tokens += ex.target.size();
    batch.push_back(std::move(ex));
  }
  if (tokens == 0) {
    throw ConfigError("perplexity needs at least one token");
  }
  return std::exp(batch_loss(ModelView(params, vocab.bos()), batch));
}

}  // namespace chanlab::lm
