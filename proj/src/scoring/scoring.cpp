#include <chanlab/scoring/scoring.hpp>

#include <chanlab/common/errors.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace chanlab::scoring {
namespace {

std::string demonstration(Method method, const Verbalizer& v, const data::Example& ex) {
  return method == Method::Channel ? v(ex.label) + " " + ex.text : ex.text + " " + v(ex.label);
}

// Order-independent sum: the same multiset of terms always yields the same bits.
double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) {
    total += t;
  }
  return total;
}

double normalized(const ScoringSpec& spec, double raw, std::size_t tokens) {
  if (!spec.length_normalize || tokens == 0) {
    return raw;
  }
  return raw / static_cast<double>(tokens);
}

[[noreturn]] void overflow(std::size_t k, std::size_t needed, int max_seq_len) {
  throw LengthError("K=" + std::to_string(k) + ": context of " + std::to_string(needed) +
                    " tokens exceeds max_seq_len " + std::to_string(max_seq_len));
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Direct:
      return "direct";
    case Method::DirectPP:
      return "direct++";
    case Method::Channel:
      return "channel";
  }
  return "?";
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::ZeroShot:
      return "zero-shot";
    case Mode::Concat:
      return "concat";
    case Mode::Ensemble:
      return "ensemble";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Direct, Method::DirectPP, Method::Channel}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw ConfigError("unknown scoring method '" + std::string(name) +
                    "' (expected direct, direct++ or channel)");
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::ZeroShot, Mode::Concat, Mode::Ensemble}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw ConfigError("unknown demonstration mode '" + std::string(name) +
                    "' (expected zero-shot, concat or ensemble)");
}

void ScoringSpec::validate(bool has_fewshot) const {
  if (method == Method::DirectPP && null_input.find_first_not_of(" \t\n") == std::string::npos) {
    throw ConfigError("direct++ needs a non-empty null input");
  }
  if (mode != Mode::ZeroShot && !has_fewshot) {
    throw ConfigError(std::string(to_string(mode)) + " scoring needs a non-empty few-shot set");
  }
}

std::vector<ContextText> build_context_text(const ScoringSpec& spec,
                                            const data::FewShotSet* fewshot,
                                            const Verbalizer& verbalizer, std::string_view input,
                                            Label candidate) {
  spec.validate(fewshot != nullptr && fewshot->size() > 0);
  if (candidate < 0 || static_cast<std::size_t>(candidate) >= verbalizer.size()) {
    throw ConfigError("candidate label " + std::to_string(candidate) + " is outside the label set");
  }
  const bool channel = spec.method == Method::Channel;
  ContextText tail;
  tail.prefix = channel ? verbalizer(candidate) : std::string(input);
  tail.continuation = channel ? std::string(input) : verbalizer(candidate);

  std::vector<ContextText> out;
  switch (spec.mode) {
    case Mode::ZeroShot:
      out.push_back(tail);
      break;
    case Mode::Concat: {
      std::string demos;
      for (const data::Example& ex : fewshot->examples) {
        demos += demonstration(spec.method, verbalizer, ex) + "\n";
      }
      out.push_back({demos + tail.prefix, tail.continuation});
      break;
    }
    case Mode::Ensemble:
      for (const data::Example& ex : fewshot->examples) {
        out.push_back({demonstration(spec.method, verbalizer, ex) + "\n" + tail.prefix,
                       tail.continuation});
      }
      break;
  }
  return out;
}

std::vector<Context> build_context(const ScoringSpec& spec, const data::FewShotSet* fewshot,
                                   const Verbalizer& verbalizer, const lm::Vocab& vocab,
                                   std::string_view input, Label candidate, int max_seq_len,
                                   int prompt_len) {
  const std::size_t k = fewshot != nullptr ? fewshot->size() : 0;
  std::vector<Context> out;
  for (const ContextText& text : build_context_text(spec, fewshot, verbalizer, input, candidate)) {
    Context ctx{vocab.encode(text.prefix), vocab.encode(text.continuation)};
    const std::size_t needed =
        static_cast<std::size_t>(prompt_len) + ctx.prefix.size() + ctx.continuation.size();
    if (needed > static_cast<std::size_t>(max_seq_len)) {
      overflow(k, needed, max_seq_len);
    }
    out.push_back(std::move(ctx));
  }
  return out;
}

Label predict(std::span<const double> scores) {
  if (scores.empty()) {
    throw ConfigError("cannot predict from an empty score list");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) {
      best = i;
    }
  }
  return static_cast<Label>(best);
}

ClassScores make_scores(std::vector<double> scores) {
  ClassScores out;
  out.chosen = predict(scores);
  out.scores = std::move(scores);
  return out;
}

ClassScores score(const lm::ModelView& model, const lm::Vocab& vocab, const ScoringSpec& spec,
                  const data::FewShotSet* fewshot, const Verbalizer& verbalizer,
                  std::string_view input, std::vector<ScoreTrace>* trace) {
  verbalizer.validate();
  std::vector<double> scores;
  for (std::size_t c = 0; c < verbalizer.size(); ++c) {
    const auto label = static_cast<Label>(c);
    auto term = [&](std::string_view x, bool null_term) {
      const auto texts = build_context_text(spec, fewshot, verbalizer, x, label);
      const auto ctxs = build_context(spec, fewshot, verbalizer, vocab, x, label,
                                      model.max_seq_len(), model.prompt_len());
      std::vector<double> out;
      for (std::size_t j = 0; j < ctxs.size(); ++j) {
        const double raw = lm::conditional_logprob(model, ctxs[j].prefix, ctxs[j].continuation);
        const double norm = normalized(spec, raw, ctxs[j].continuation.size());
        if (trace != nullptr) {
          trace->push_back({label, spec.mode == Mode::Ensemble ? static_cast<int>(j) : -1,
                            null_term, texts[j].prefix, texts[j].continuation, raw, norm});
        }
        out.push_back(norm);
      }
      return out;
    };
    std::vector<double> terms = term(input, false);
    if (spec.method == Method::DirectPP) {
      const std::vector<double> null_terms = term(spec.null_input, true);
      for (std::size_t j = 0; j < terms.size(); ++j) {
        terms[j] -= null_terms[j];
      }
    }
    scores.push_back(sorted_sum(std::move(terms)));
  }
  return make_scores(std::move(scores));
}

Scorer::Scorer(const lm::ModelView& model, const lm::Vocab& vocab, ScoringSpec spec,
               const Verbalizer& verbalizer, const data::FewShotSet* fewshot)
    : model_(model), vocab_(&vocab), spec_(std::move(spec)) {
  spec_.validate(fewshot != nullptr && fewshot->size() > 0);
  verbalizer.validate();
  k_ = fewshot != nullptr ? fewshot->size() : 0;
  for (std::size_t c = 0; c < verbalizer.size(); ++c) {
    label_tokens_.push_back(vocab.encode(verbalizer(static_cast<Label>(c))));
  }
  switch (spec_.mode) {
    case Mode::ZeroShot:
      group_tokens_.emplace_back();
      break;
    case Mode::Concat: {
      std::string demos;
      for (const data::Example& ex : fewshot->examples) {
        demos += demonstration(spec_.method, verbalizer, ex) + "\n";
      }
      group_tokens_.push_back(vocab.encode(demos));
      break;
    }
    case Mode::Ensemble:
      for (const data::Example& ex : fewshot->examples) {
        group_tokens_.push_back(vocab.encode(demonstration(spec_.method, verbalizer, ex) + "\n"));
      }
      break;
  }

  std::size_t longest_label = 0;
  for (const auto& t : label_tokens_) {
    longest_label = std::max(longest_label, t.size());
  }
  for (const auto& group : group_tokens_) {
    check_length(group.size(), 0, longest_label);
    if (spec_.method == Method::Channel) {
      for (const auto& label : label_tokens_) {
        lm::TokenSequence prefix = group;
        prefix.insert(prefix.end(), label.begin(), label.end());
        states_.push_back(lm::encode_prefix(model_, prefix));
      }
    } else {
      states_.push_back(lm::encode_prefix(model_, group));
    }
  }
  if (spec_.method == Method::DirectPP) {
    const lm::TokenSequence null_tokens = vocab.encode(spec_.null_input);
    for (std::size_t g = 0; g < group_tokens_.size(); ++g) {
      check_length(group_tokens_[g].size(), null_tokens.size(), longest_label);
      const lm::DecoderState st = lm::extend(model_, states_[g], null_tokens);
      std::vector<double> terms;
      for (const auto& label : label_tokens_) {
        terms.push_back(normalize(lm::continuation_logprob(model_, st, label), label.size()));
      }
      null_terms_.push_back(std::move(terms));
    }
  }
}

double Scorer::normalize(double raw, std::size_t tokens) const {
  return normalized(spec_, raw, tokens);
}

void Scorer::check_length(std::size_t demo_tokens, std::size_t input_tokens,
                          std::size_t label_tokens) const {
  const std::size_t needed =
      static_cast<std::size_t>(model_.prompt_len()) + demo_tokens + input_tokens + label_tokens;
  if (needed > static_cast<std::size_t>(model_.max_seq_len())) {
    overflow(k_, needed, model_.max_seq_len());
  }
}

ClassScores Scorer::score(std::string_view input) const {
  return score_tokens(vocab_->encode(input));
}

ClassScores Scorer::score_tokens(std::span<const lm::TokenId> input) const {
  const std::size_t labels = label_tokens_.size();
  const std::size_t groups = group_tokens_.size();
  std::vector<std::vector<double>> terms(labels, std::vector<double>(groups, 0.0));
  for (std::size_t g = 0; g < groups; ++g) {
    if (spec_.method == Method::Channel) {
      for (std::size_t c = 0; c < labels; ++c) {
        check_length(group_tokens_[g].size(), input.size(), label_tokens_[c].size());
        terms[c][g] = normalize(lm::continuation_logprob(model_, states_[g * labels + c], input),
                                input.size());
      }
      continue;
    }
    std::size_t longest = 0;
    for (const auto& t : label_tokens_) {
      longest = std::max(longest, t.size());
    }
    check_length(group_tokens_[g].size(), input.size(), longest);
    const lm::DecoderState st = lm::extend(model_, states_[g], input);
    for (std::size_t c = 0; c < labels; ++c) {
      double s = normalize(lm::continuation_logprob(model_, st, label_tokens_[c]),
                           label_tokens_[c].size());
      if (spec_.method == Method::DirectPP) {
        s -= null_terms_[g][c];
      }
      terms[c][g] = s;
    }
  }
  std::vector<double> scores;
  for (auto& t : terms) {
    scores.push_back(sorted_sum(std::move(t)));
  }
  return make_scores(std::move(scores));
}

void write_traces(const std::vector<ScoreTrace>& traces, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write score traces to " + path);
  }
  for (const ScoreTrace& t : traces) {
    nlohmann::ordered_json record = {{"candidate", t.candidate},
                                     {"demonstration", t.demonstration},
                                     {"null_term", t.null_term},
                                     {"context", t.context},
                                     {"continuation", t.continuation},
                                     {"raw", t.raw},
                                     {"normalized", t.normalized}};
    out << record.dump() << '\n';
  }
}

}  // namespace chanlab::scoring
