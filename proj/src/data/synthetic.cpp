#include <chanlab/data/synthetic.hpp>

#include <chanlab/common/errors.hpp>
#include <chanlab/common/random.hpp>
#include <chanlab/lm/vocab.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace chanlab::data {
namespace {

using Words = std::vector<std::string>;

const Words kStrongPositive = {"superb",    "brilliant", "masterful",     "stunning",
                               "dazzling",  "flawless",  "extraordinary", "breathtaking",
                               "triumphant", "magnificent"};
const Words kMildPositive = {"enjoyable", "pleasant", "charming", "likable", "solid",
                             "warm",      "fun",      "sweet",    "engaging", "nice"};
const Words kNeutral = {"ordinary", "average", "uneven",   "modest",   "mixed",
                        "passable", "routine", "familiar", "standard", "middling"};
const Words kMildNegative = {"dull", "flat",     "tedious",     "bland",  "thin",
                             "sluggish", "forgettable", "clumsy", "stale", "weak"};
const Words kStrongNegative = {"awful",      "dreadful",   "unbearable", "atrocious",
                               "horrendous", "disastrous", "abysmal",    "painful",
                               "unwatchable", "wretched"};
const Words kReviewFiller = {"the",    "a",          "film",     "movie", "story",   "plot",
                             "acting", "cast",       "script",   "and",   "with",    "is",
                             "this",   "of",         "its",      "ending", "director", "scenes",
                             "characters", "dialogue", "music",  "feels", "quite",   "very",
                             "overall", "camera",    "pace",     "humor"};

const std::vector<NamedTemplate> kSentimentTemplates = {{"a-one", "a MASK one ."},
                                                        {"it-was", "it was MASK ."},
                                                        {"all-in-all", "all in all MASK ."},
                                                        {"a-piece", "a MASK piece ."}};
const Words kSentimentExtra = {"simply MASK .", "i found it MASK ."};

const std::vector<Words> kTopicWords = {
    {"government", "election", "minister", "war", "treaty", "nations", "president", "border",
     "embassy", "refugees", "parliament", "diplomats"},
    {"game", "team", "coach", "season", "league", "championship", "players", "score", "match",
     "tournament", "victory", "stadium"},
    {"market", "stocks", "profits", "company", "investors", "earnings", "shares", "economy",
     "bank", "merger", "revenue", "prices"},
    {"software", "computer", "internet", "chip", "users", "device", "startup", "data", "online",
     "network", "smartphone", "code"}};
const Words kNewsFiller = {"the",  "a",   "on",    "in",   "said", "after",     "new",
                           "report", "today", "will", "of",  "to",  "for",       "and",
                           "with", "year", "officials", "week", "plans", "announced"};
const std::vector<NamedTemplate> kTopicTemplates = {{"topic", "topic : MASK ."},
                                                    {"subject", "subject : MASK ."},
                                                    {"this-is-about", "this is about MASK ."},
                                                    {"it-is-about", "it is about MASK ."}};
const Words kTopicExtra = {"news about MASK .", "section : MASK ."};

const std::vector<Words> kQuestionWords = {
    {"meaning", "definition", "explain", "describe", "cause", "reason", "purpose", "origin",
     "difference", "mean"},
    {"animal", "color", "instrument", "food", "product", "plant", "vehicle", "invention", "sport",
     "language"},
    {"abbreviation", "stand", "acronym", "short", "initials", "expansion", "letters", "abbreviated",
     "acronyms", "expanded"},
    {"who", "person", "inventor", "author", "founder", "leader", "actor", "scientist", "painter",
     "king"},
    {"where", "city", "country", "capital", "river", "mountain", "continent", "located", "state",
     "island"},
    {"how", "many", "much", "population", "distance", "percentage", "cost", "date", "temperature",
     "miles"}};
const Words kQuestionFiller = {"what", "is",   "the",  "of",   "a",      "in",    "does", "did",
                               "for",  "was",  "name", "first", "called", "which", "to"};
const std::vector<NamedTemplate> kQuestionTemplates = {{"mask-colon", "MASK :"},
                                                       {"q-colon", "q : MASK :"},
                                                       {"why", "why MASK ?"},
                                                       {"answer", "answer : MASK"}};
const Words kQuestionExtra = {"type : MASK", "category : MASK"};

Words concat(const Words& a, const Words& b) {
  Words out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> keyword_weights(std::size_t n, double keyword_weight) {
  std::vector<double> w(n, 1.0);
  w[0] = keyword_weight;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) {
    x /= total;
  }
  return w;
}

std::size_t draw(Rng& rng, const std::vector<double>& weights) {
  const double u = uniform_unit(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) {
      return i;
    }
  }
  return weights.size() - 1;
}

class Sampler {
 public:
  explicit Sampler(const TaskProfile& p) : p_(p) {}

  std::string sentence(Rng& rng, Label label) const {
    const std::size_t span = p_.max_len - p_.min_len + 1;
    for (;;) {
      const std::size_t len = p_.min_len + uniform_index(rng, span);
      std::string text;
      bool has_content = false;
      for (std::size_t i = 0; i < len; ++i) {
        if (i > 0) {
          text += ' ';
        }
        if (uniform_unit(rng) < p_.content_rate) {
          has_content = true;
          auto cls = static_cast<std::size_t>(label);
          if (p_.num_labels() > 1 && uniform_unit(rng) < p_.overlap) {
            const std::size_t other = uniform_index(rng, p_.num_labels() - 1);
            cls = other >= cls ? other + 1 : other;
          }
          text += p_.class_words[cls][draw(rng, p_.class_weights[cls])];
        } else {
          text += p_.filler[uniform_index(rng, p_.filler.size())];
        }
      }
      if (has_content) {
        return text;
      }
    }
  }

  std::string phrase(Rng& rng, Label label) const {
    const std::size_t total = p_.verbalizer_templates.size() + p_.extra_templates.size();
    const std::size_t pick = uniform_index(rng, total);
    std::string pattern = pick < p_.verbalizer_templates.size()
                              ? p_.verbalizer_templates[pick].pattern
                              : p_.extra_templates[pick - p_.verbalizer_templates.size()];
    const auto at = pattern.find("MASK");
    pattern.replace(at, 4, p_.labels[static_cast<std::size_t>(label)]);
    return pattern;
  }

 private:
  const TaskProfile& p_;
};

std::vector<double> resolve_prior(const SyntheticOptions& options, std::size_t n) {
  if (options.class_prior.empty()) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
  }
  if (options.class_prior.size() != n) {
    throw ConfigError("class_prior has " + std::to_string(options.class_prior.size()) +
                      " entries but the task has " + std::to_string(n) + " labels");
  }
  double total = 0.0;
  for (double p : options.class_prior) {
    if (!(p >= 0.0)) {
      throw ConfigError("class_prior entries must be non-negative");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("class_prior must sum to 1");
  }
  return options.class_prior;
}

constexpr double kCorpusPhraseAfter = 0.35;
constexpr double kCorpusPhraseBefore = 0.35;
constexpr double kCorpusLabelNoise = 0.1;

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::BinarySentiment:
      return "binary-sentiment";
    case TaskKind::FiveWaySentiment:
      return "5-way-sentiment";
    case TaskKind::Topic:
      return "4-way-topic";
    case TaskKind::QuestionType:
      return "6-way-type";
  }
  return "?";
}

std::vector<TaskKind> all_task_kinds() {
  return {TaskKind::BinarySentiment, TaskKind::FiveWaySentiment, TaskKind::Topic,
          TaskKind::QuestionType};
}

TaskKind parse_task_kind(std::string_view name) {
  for (TaskKind k : all_task_kinds()) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw ConfigError("unknown task kind '" + std::string(name) +
                    "' (expected binary-sentiment, 5-way-sentiment, 4-way-topic or 6-way-type)");
}

TaskProfile task_profile(TaskKind kind, const SyntheticOptions& options) {
  if (!(options.overlap >= 0.0 && options.overlap < 1.0)) {
    throw ConfigError("overlap must lie in [0, 1)");
  }
  TaskProfile p;
  p.kind = kind;
  p.name = std::string(to_string(kind));
  p.overlap = options.overlap;
  double keyword_weight = 2.0;
  switch (kind) {
    case TaskKind::BinarySentiment:
      p.labels = {"great", "terrible"};
      p.class_words = {concat(kStrongPositive, kMildPositive),
                       concat(kStrongNegative, kMildNegative)};
      p.filler = kReviewFiller;
      p.verbalizer_templates = kSentimentTemplates;
      p.extra_templates = kSentimentExtra;
      break;
    case TaskKind::FiveWaySentiment:
      p.labels = {"great", "good", "okay", "bad", "terrible"};
      p.class_words = {kStrongPositive, kMildPositive, kNeutral, kMildNegative, kStrongNegative};
      p.filler = kReviewFiller;
      p.verbalizer_templates = kSentimentTemplates;
      p.extra_templates = kSentimentExtra;
      break;
    case TaskKind::Topic:
      p.labels = {"world", "sports", "business", "technology"};
      p.class_words = kTopicWords;
      p.filler = kNewsFiller;
      p.verbalizer_templates = kTopicTemplates;
      p.extra_templates = kTopicExtra;
      keyword_weight = 6.0;
      break;
    case TaskKind::QuestionType:
      p.labels = {"description", "entity", "expression", "human", "location", "number"};
      p.class_words = kQuestionWords;
      p.filler = kQuestionFiller;
      p.verbalizer_templates = kQuestionTemplates;
      p.extra_templates = kQuestionExtra;
      break;
  }
  for (const Words& words : p.class_words) {
    p.class_weights.push_back(keyword_weights(words.size(), keyword_weight));
    p.keywords.push_back(words.front());
  }
  if (options.long_inputs) {
    p.min_len = 30;
    p.max_len = 200;
  }
  return p;
}

double TaskProfile::word_logprob(std::string_view word, Label label) const {
  const auto own = static_cast<std::size_t>(label);
  const std::size_t n = num_labels();
  double content = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double share = c == own ? 1.0 - overlap : overlap / static_cast<double>(n - 1);
    if (share == 0.0) {
      continue;
    }
    for (std::size_t i = 0; i < class_words[c].size(); ++i) {
      if (class_words[c][i] == word) {
        content += share * class_weights[c][i];
      }
    }
  }
  double fill = 0.0;
  for (const std::string& f : filler) {
    if (f == word) {
      fill += 1.0 / static_cast<double>(filler.size());
    }
  }
  const double prob = content_rate * content + (1.0 - content_rate) * fill;
  return prob > 0.0 ? std::log(prob) : -std::numeric_limits<double>::infinity();
}

double TaskProfile::text_logprob(std::string_view text, Label label) const {
  double total = 0.0;
  for (std::string_view w : lm::split_words(text)) {
    total += word_logprob(w, label);
  }
  return total;
}

Label TaskProfile::bayes_predict(std::string_view text) const {
  Label best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < num_labels(); ++c) {
    const double s = text_logprob(text, static_cast<Label>(c));
    if (s > best_score) {
      best_score = s;
      best = static_cast<Label>(c);
    }
  }
  return best;
}

SyntheticTask generate_synthetic_task(TaskKind kind, const SyntheticOptions& options) {
  SyntheticTask task;
  task.profile = task_profile(kind, options);
  const TaskProfile& p = task.profile;
  const std::size_t n = p.num_labels();
  if (options.train_pool_size < n || options.test_size < n) {
    throw ConfigError("train_pool_size and test_size must be at least the number of labels (" +
                      std::to_string(n) + ") for " + p.name);
  }
  const std::vector<double> prior = resolve_prior(options, n);
  const Sampler sampler(p);

  task.train_pool.name = p.name;
  task.train_pool.split = Split::TrainPool;
  task.train_pool.labels = p.labels;
  Rng pool_rng = make_rng(options.seed, 1);
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < options.train_pool_size; ++i) {
    const auto label = static_cast<Label>(draw(pool_rng, prior));
    std::string text = sampler.sentence(pool_rng, label);
    seen.insert(text);
    task.train_pool.examples.push_back({std::move(text), label});
  }

  task.test.name = p.name;
  task.test.split = Split::Test;
  task.test.labels = p.labels;
  Rng test_rng = make_rng(options.seed, 2);
  for (std::size_t i = 0; i < options.test_size; ++i) {
    const auto label = static_cast<Label>(i % n);
    std::string text;
    do {
      text = sampler.sentence(test_rng, label);
    } while (seen.contains(text));
    task.test.examples.push_back({std::move(text), label});
  }
  shuffle(task.test.examples.begin(), task.test.examples.end(), test_rng);

  Rng corpus_rng = make_rng(options.seed, 3);
  task.corpus.reserve(options.corpus_size);
  for (std::size_t i = 0; i < options.corpus_size; ++i) {
    const auto label = static_cast<Label>(draw(corpus_rng, prior));
    const std::string text = sampler.sentence(corpus_rng, label);
    const double placement = uniform_unit(corpus_rng);
    auto shown = label;
    if (n > 1 && uniform_unit(corpus_rng) < kCorpusLabelNoise) {
      const std::size_t other = uniform_index(corpus_rng, n - 1);
      shown = static_cast<Label>(other >= static_cast<std::size_t>(label) ? other + 1 : other);
    }
    if (placement < kCorpusPhraseAfter) {
      task.corpus.push_back(text + " " + sampler.phrase(corpus_rng, shown));
    } else if (placement < kCorpusPhraseAfter + kCorpusPhraseBefore) {
      task.corpus.push_back(sampler.phrase(corpus_rng, shown) + " " + text);
    } else {
      task.corpus.push_back(text);
    }
  }
  return task;
}

double bayes_accuracy(const TaskProfile& profile, const Dataset& dataset) {
  if (dataset.examples.empty()) {
    return 0.0;
  }
  std::size_t correct = 0;
  for (const Example& ex : dataset.examples) {
    correct += profile.bayes_predict(ex.text) == ex.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.examples.size());
}

}  // namespace chanlab::data
