#pragma once

#include <chanlab/data/sampling.hpp>
#include <chanlab/lm/model.hpp>
#include <chanlab/lm/vocab.hpp>
#include <chanlab/scoring/verbalizer.hpp>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chanlab::scoring {

enum class Method { Direct, DirectPP, Channel };
enum class Mode { ZeroShot, Concat, Ensemble };

std::string_view to_string(Method method);
std::string_view to_string(Mode mode);
Method parse_method(std::string_view name);
Mode parse_mode(std::string_view name);

struct ScoringSpec {
  Method method = Method::Direct;
  Mode mode = Mode::ZeroShot;
  bool length_normalize = true;
  // Content-free input used by Direct++ calibration.
  std::string null_input = std::string(lm::Vocab::kNull);

  // Throws ConfigError when the spec cannot be evaluated.
  void validate(bool has_fewshot) const;
  bool operator==(const ScoringSpec&) const = default;
};

struct ContextText {
  std::string prefix;
  std::string continuation;
};

struct Context {
  lm::TokenSequence prefix;
  lm::TokenSequence continuation;
};

// Demonstration pairs are joined by newlines, an input and its label text by a
// space. Direct contexts end with the input and continue with v(candidate);
// channel contexts end with v(candidate) and continue with the input. Channel
// demonstrations are written v(c) x. Ensemble yields one context per
// demonstration, the other modes a single one.
std::vector<ContextText> build_context_text(const ScoringSpec& spec,
                                            const data::FewShotSet* fewshot,
                                            const Verbalizer& verbalizer, std::string_view input,
                                            Label candidate);

// Tokenized contexts. Throws LengthError naming K when BOS, `prompt_len`
// prompt rows, prefix and continuation do not fit in max_seq_len + 1.
std::vector<Context> build_context(const ScoringSpec& spec, const data::FewShotSet* fewshot,
                                   const Verbalizer& verbalizer, const lm::Vocab& vocab,
                                   std::string_view input, Label candidate, int max_seq_len,
                                   int prompt_len = 0);

struct ClassScores {
  std::vector<double> scores;
  Label chosen = 0;
};

// Argmax with ties broken toward the lowest label index.
Label predict(std::span<const double> scores);
inline Label predict(const ClassScores& s) { return predict(s.scores); }
ClassScores make_scores(std::vector<double> scores);

struct ScoreTrace {
  Label candidate = 0;
  int demonstration = -1;  // ensemble member, -1 otherwise
  bool null_term = false;  // Direct++ calibration term
  std::string context;
  std::string continuation;
  double raw = 0.0;
  double normalized = 0.0;
};

// Reference implementation: one full forward per (context, candidate).
ClassScores score(const lm::ModelView& model, const lm::Vocab& vocab, const ScoringSpec& spec,
                  const data::FewShotSet* fewshot, const Verbalizer& verbalizer,
                  std::string_view input, std::vector<ScoreTrace>* trace = nullptr);

// Same scores as score(), reusing the key/value cache of every context part
// that does not depend on the input. Construction does the shared work;
// score() is const and safe to call concurrently.
class Scorer {
 public:
  Scorer(const lm::ModelView& model, const lm::Vocab& vocab, ScoringSpec spec,
         const Verbalizer& verbalizer, const data::FewShotSet* fewshot = nullptr);

  ClassScores score(std::string_view input) const;
  ClassScores score_tokens(std::span<const lm::TokenId> input) const;
  const ScoringSpec& spec() const { return spec_; }

 private:
  double normalize(double raw, std::size_t tokens) const;
  void check_length(std::size_t demo_tokens, std::size_t input_tokens,
                    std::size_t label_tokens) const;

  lm::ModelView model_;
  const lm::Vocab* vocab_;
  ScoringSpec spec_;
  std::size_t k_ = 0;
  std::vector<lm::TokenSequence> label_tokens_;
  std::vector<lm::TokenSequence> group_tokens_;
  // Direct: one state per group. Channel: group-major, one per label.
  std::vector<lm::DecoderState> states_;
  std::vector<std::vector<double>> null_terms_;  // [group][label], Direct++ only
};

void write_traces(const std::vector<ScoreTrace>& traces, const std::string& path);

}  // namespace chanlab::scoring
