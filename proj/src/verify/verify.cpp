#include <chanlab/verify/verify.hpp>

#include <chanlab/scoring/scoring.hpp>
#include <chanlab/tuning/tuning.hpp>
#include <chanlab/verify/finite_difference.hpp>
#include <chanlab/verify/toy_models.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

namespace chanlab::verify {
namespace {

using data::Example;
using data::FewShotSet;
using lm::Matrix;
using lm::TokenId;
using lm::Vocab;
using scoring::ClassScores;
using scoring::Method;
using scoring::Mode;
using scoring::ScoringSpec;
using scoring::Verbalizer;

template <typename F>
CheckResult timed(std::string name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = std::move(name);
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

FewShotSet fewshot_of(std::vector<Example> examples) {
  FewShotSet set;
  set.examples = std::move(examples);
  set.pool_indices.resize(set.examples.size());
  std::iota(set.pool_indices.begin(), set.pool_indices.end(), 0);
  set.spec.k = set.examples.size();
  return set;
}

Verbalizer make_verbalizer(std::vector<std::string> labels, std::vector<std::string> surface) {
  Verbalizer v;
  v.name = "check";
  v.labels = std::move(labels);
  v.surface = std::move(surface);
  return v;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = n(rng);
  }
  return m;
}

std::vector<lm::TrainingExample> fd_batch() {
  return {
      {{3, 4, 5}, {6, 7}},
      {{8}, {9, 10, 11}},
      {{5, 5, 6, 7}, {3}},
  };
}

// Three-way world over a small random LM.
struct RandomWorld {
  Vocab vocab = Vocab::build(std::vector<std::string>{"a b c d e f g it was great terrible bad ."},
                             Vocab::default_reserved());
  lm::LMParams params;
  Verbalizer verbalizer = make_verbalizer({"great", "terrible", "bad"},
                                          {"it was great .", "terrible", "it was bad ."});

  explicit RandomWorld(std::uint64_t seed, double scale = 1.0)
      : params(testing::random_lm(static_cast<int>(vocab.size()), seed, scale, 2, 16, 2, 96)) {}
};

const std::vector<Example> kDemos = {{"a b c", 0}, {"d e", 1}, {"f", 2}, {"g a b", 1}};

std::vector<ScoringSpec> nine_cells() {
  std::vector<ScoringSpec> out;
  for (Method m : {Method::Direct, Method::DirectPP, Method::Channel}) {
    for (Mode mode : {Mode::ZeroShot, Mode::Concat, Mode::Ensemble}) {
      ScoringSpec s;
      s.method = m;
      s.mode = mode;
      out.push_back(s);
    }
  }
  return out;
}

std::vector<std::vector<Example>> permutations_of(const std::vector<Example>& demos) {
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<Example>> out;
  do {
    std::vector<Example> p;
    for (std::size_t i : order) {
      p.push_back(demos[i]);
    }
    out.push_back(std::move(p));
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

// Single-token world for the hand-computed oracle: inputs a b c, label words P N.
struct BigramWorld {
  Vocab vocab = Vocab::build(std::vector<std::string>{"a b c P N"}, Vocab::default_reserved());
  Eigen::MatrixXd probs;
  lm::LMParams params;
  Verbalizer verbalizer = make_verbalizer({"pos", "neg"}, {"P", "N"});

  explicit BigramWorld(std::uint64_t seed)
      : probs(random_table(static_cast<Eigen::Index>(vocab.size()), seed)),
        params(testing::bigram_lm(testing::log_of(probs))) {}

  static Eigen::MatrixXd random_table(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Eigen::MatrixXd t(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        t(i, j) = u(rng);
      }
      t.row(i) /= t.row(i).sum();
    }
    return t;
  }

  TokenId id(const std::string& w) const {
    return w == "\n" ? vocab.newline().value() : vocab.id(w);
  }

  // Product of table entries along the written-out sequence.
  double logprob(const std::vector<std::string>& prefix,
                 const std::vector<std::string>& continuation) const {
    TokenId prev = prefix.empty() ? vocab.bos() : id(prefix.back());
    double total = 0.0;
    for (const std::string& t : continuation) {
      total += std::log(probs(prev, id(t)));
      prev = id(t);
    }
    return total;
  }

  double cell(Method method, Mode mode, const std::vector<std::pair<std::string, std::string>>& demos,
              const std::string& x, const std::string& vc) const {
    auto direct_term = [&](std::vector<std::string> lead, const std::string& input) {
      lead.push_back(input);
      return logprob(lead, {vc});
    };
    auto one = [&](const std::vector<std::string>& lead) {
      if (method == Method::Channel) {
        std::vector<std::string> prefix = lead;
        prefix.push_back(vc);
        return logprob(prefix, {x});
      }
      double s = direct_term(lead, x);
      if (method == Method::DirectPP) {
        s -= direct_term(lead, std::string(Vocab::kNull));
      }
      return s;
    };
    auto pair_tokens = [&](const std::pair<std::string, std::string>& d) {
      return method == Method::Channel ? std::vector<std::string>{d.second, d.first, "\n"}
                                       : std::vector<std::string>{d.first, d.second, "\n"};
    };
    switch (mode) {
      case Mode::ZeroShot:
        return one({});
      case Mode::Concat: {
        std::vector<std::string> lead;
        for (const auto& d : demos) {
          const auto t = pair_tokens(d);
          lead.insert(lead.end(), t.begin(), t.end());
        }
        return one(lead);
      }
      case Mode::Ensemble: {
        double total = 0.0;
        for (const auto& d : demos) {
          total += one(pair_tokens(d));
        }
        return total;
      }
    }
    return 0.0;
  }
};

struct TuningWorld {
  Vocab vocab = Vocab::build(
      std::vector<std::string>{"the movie was great and the plot was fun",
                               "the movie was terrible and the acting was dull",
                               "a fine film with a bad ending"},
      Vocab::default_reserved());
  std::shared_ptr<const lm::LMParams> base = std::make_shared<const lm::LMParams>(
      testing::random_lm(static_cast<int>(vocab.size()), 31, 3.0, 2, 16, 2, 64));
  Verbalizer verbalizer = make_verbalizer({"great", "terrible"}, {"great", "terrible"});
  FewShotSet fewshot = fewshot_of({{"the plot was fun", 0},
                                   {"the acting was dull", 1},
                                   {"a fine film", 0},
                                   {"a bad ending", 1}});
};

std::vector<std::uint64_t> tensor_hashes(const lm::LMParams& p) {
  std::vector<std::uint64_t> out;
  for (const auto& t : p.tensors()) {
    out.push_back(lm::fingerprint(t.values));
  }
  return out;
}

}  // namespace

CheckResult gradient_check(lm::GradientSubset subset, int coordinates, double step,
                           double tolerance) {
  return timed(fmt::format("gradient {}", lm::to_string(subset)), [&](CheckResult& r) {
    const auto seed = static_cast<std::uint64_t>(subset) + 21;
    lm::LMParams p = testing::random_lm(12, seed, 10.0, 2, 16, 2);
    Matrix head = p.head();
    Matrix u = Matrix::Identity(16, 16) + random_matrix(16, 16, seed + 100, 0.1);
    Matrix prompt = random_matrix(4, 16, seed + 200, 0.5);
    lm::Adapters adapters;
    switch (subset) {
      case lm::GradientSubset::HeadOnly:
        adapters.head = &head;
        break;
      case lm::GradientSubset::TransformOnly:
        adapters.transform = &u;
        break;
      case lm::GradientSubset::PromptEmbeddingsOnly:
        adapters.prompt = &prompt;
        break;
      case lm::GradientSubset::AllParams:
        break;
    }
    const lm::ModelView view(p, 1, adapters);
    const auto batch = fd_batch();
    const lm::Gradients g = lm::compute_gradients(view, batch, subset);

    std::vector<std::span<double>> tensors;
    std::vector<std::span<const double>> grads;
    switch (subset) {
      case lm::GradientSubset::HeadOnly:
        tensors = {lm::flat(head)};
        grads = {lm::flat(*g.head)};
        break;
      case lm::GradientSubset::TransformOnly:
        tensors = {lm::flat(u)};
        grads = {lm::flat(*g.transform)};
        break;
      case lm::GradientSubset::PromptEmbeddingsOnly:
        tensors = {lm::flat(prompt)};
        grads = {lm::flat(*g.prompt)};
        break;
      case lm::GradientSubset::AllParams:
        for (auto& t : p.tensors()) {
          tensors.push_back(t.values);
        }
        for (const auto& t : g.all->tensors()) {
          grads.push_back(t.values);
        }
        break;
    }
    std::size_t total = 0;
    for (const auto& t : tensors) {
      total += t.size();
    }
    const auto loss = [&] { return lm::batch_loss(view, batch); };
    int bad = 0;
    double worst = 0.0;
    for (std::size_t idx :
         testing::sample_indices(total, static_cast<std::size_t>(coordinates), seed)) {
      std::size_t k = 0;
      while (idx >= tensors[k].size()) {
        idx -= tensors[k].size();
        ++k;
      }
      const double fd = testing::central_difference(tensors[k][idx], loss, step);
      const double err = testing::relative_error(grads[k][idx], fd);
      worst = std::max(worst, err);
      bad += err < tolerance ? 0 : 1;
    }
    r.passed = bad == 0;
    r.detail = fmt::format("{} coordinates, {} above {:g}, worst relative error {:.2e}", coordinates,
                           bad, tolerance, worst);
  });
}

CheckResult frozen_parameters(int steps) {
  return timed("frozen parameters", [&](CheckResult& r) {
    const TuningWorld w;
    const std::vector<std::uint64_t> before = tensor_hashes(*w.base);
    tuning::TrainConfig config;
    config.steps = steps;
    config.prompt_len = 3;
    config.seed = 5;
    r.passed = true;
    std::string detail;
    for (tuning::TuningKind kind : tuning::all_tuning_kinds()) {
      const double lr = kind == tuning::TuningKind::FullFinetune ? 1e-3 : 0.01;
      const tuning::TunedModel init = tuning::init_tuning(kind, w.base, w.vocab, config);
      const tuning::TunedModel out =
          tuning::train(init, w.fewshot, w.verbalizer, w.vocab, config, lr);
      const std::vector<std::uint64_t> after = tensor_hashes(*out.base);
      std::size_t changed = 0;
      for (std::size_t i = 0; i < before.size(); ++i) {
        changed += before[i] == after[i] ? 0 : 1;
      }
      const int deltas = int(out.head.has_value()) + int(out.transform.has_value()) +
                         int(out.prompt.has_value()) + int(out.full.has_value());
      const bool trained = out.delta_fingerprint() != init.delta_fingerprint();
      const bool ok = changed == 0 && deltas == 1 && trained && out.base == w.base;
      r.passed = r.passed && ok;
      detail += fmt::format("{}{}: {} frozen tensors changed{}", detail.empty() ? "" : "; ",
                            tuning::to_string(kind), changed, trained ? "" : ", delta did not move");
    }
    r.detail = fmt::format("{} steps; {}", steps, detail);
  });
}

CheckResult ensemble_additivity(double tolerance) {
  return timed("ensemble additivity", [&](CheckResult& r) {
    const RandomWorld w(8);
    const lm::ModelView view(w.params, w.vocab.bos());
    const FewShotSet fs = fewshot_of(kDemos);
    double worst = 0.0;
    for (Method m : {Method::Direct, Method::DirectPP, Method::Channel}) {
      ScoringSpec ens;
      ens.method = m;
      ens.mode = Mode::Ensemble;
      ScoringSpec single = ens;
      single.mode = Mode::Concat;
      const scoring::Scorer scorer(view, w.vocab, ens, w.verbalizer, &fs);
      for (const char* x : {"b c", "a", "g f e"}) {
        const ClassScores total = scorer.score(x);
        std::vector<double> sum(w.verbalizer.size(), 0.0);
        for (const Example& ex : kDemos) {
          const FewShotSet one = fewshot_of({ex});
          const ClassScores s = scoring::score(view, w.vocab, single, &one, w.verbalizer, x);
          for (std::size_t c = 0; c < sum.size(); ++c) {
            sum[c] += s.scores[c];
          }
        }
        for (std::size_t c = 0; c < sum.size(); ++c) {
          worst = std::max(worst, std::abs(total.scores[c] - sum[c]));
        }
      }
    }
    r.passed = worst < tolerance;
    r.detail = fmt::format("max |ensemble - sum of parts| = {:.2e}", worst);
  });
}

CheckResult ensemble_permutation_invariance(double tolerance) {
  return timed("ensemble order invariance", [&](CheckResult& r) {
    const RandomWorld w(9);
    const lm::ModelView view(w.params, w.vocab.bos());
    const auto perms = permutations_of(kDemos);
    double worst = 0.0;
    int flips = 0;
    for (Method m : {Method::Direct, Method::DirectPP, Method::Channel}) {
      ScoringSpec spec;
      spec.method = m;
      spec.mode = Mode::Ensemble;
      for (const char* x : {"e f", "a b", "c"}) {
        std::optional<ClassScores> first;
        for (const auto& p : perms) {
          const FewShotSet fs = fewshot_of(p);
          const ClassScores s = scoring::Scorer(view, w.vocab, spec, w.verbalizer, &fs).score(x);
          if (!first) {
            first = s;
            continue;
          }
          for (std::size_t c = 0; c < s.scores.size(); ++c) {
            worst = std::max(worst, std::abs(s.scores[c] - first->scores[c]));
          }
          flips += s.chosen == first->chosen ? 0 : 1;
        }
      }
    }
    r.passed = flips == 0 && worst < tolerance;
    r.detail = fmt::format("{} orderings, {} prediction changes, max score drift {:.2e}",
                           perms.size(), flips, worst);
  });
}

CheckResult concat_order_flip() {
  return timed("concat order flip", [&](CheckResult& r) {
    const auto perms = permutations_of(kDemos);
    for (std::uint64_t seed = 10; seed < 40; ++seed) {
      const RandomWorld w(seed, 3.0);
      const lm::ModelView view(w.params, w.vocab.bos());
      ScoringSpec concat;
      concat.mode = Mode::Concat;
      ScoringSpec ens = concat;
      ens.mode = Mode::Ensemble;
      for (const char* x : {"a", "b c", "d", "e f g"}) {
        std::set<data::Label> concat_seen;
        std::set<data::Label> ensemble_seen;
        for (const auto& p : perms) {
          const FewShotSet fs = fewshot_of(p);
          concat_seen.insert(scoring::Scorer(view, w.vocab, concat, w.verbalizer, &fs).score(x).chosen);
          ensemble_seen.insert(scoring::Scorer(view, w.vocab, ens, w.verbalizer, &fs).score(x).chosen);
        }
        if (concat_seen.size() > 1 && ensemble_seen.size() == 1) {
          r.passed = true;
          r.detail = fmt::format("seed {}, input '{}': concat predicts {} distinct labels over {} "
                                 "orderings, ensemble always {}",
                                 seed, x, concat_seen.size(), perms.size(), *ensemble_seen.begin());
          return;
        }
      }
    }
    r.passed = false;
    r.detail = "no concat flip with a stable ensemble found in seeds 10-39";
  });
}

CheckResult bigram_oracle(double tolerance) {
  return timed("bigram oracle, nine cells", [&](CheckResult& r) {
    const std::vector<std::pair<std::string, std::string>> demos = {{"a", "P"}, {"b", "N"}, {"c", "N"}};
    const FewShotSet fs = fewshot_of({{"a", 0}, {"b", 1}, {"c", 1}});
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::uint64_t seed : {2u, 3u, 4u}) {
      const BigramWorld w(seed);
      const lm::ModelView view(w.params, w.vocab.bos());
      for (const ScoringSpec& spec : nine_cells()) {
        const scoring::Scorer scorer(view, w.vocab, spec, w.verbalizer, &fs);
        for (const char* x : {"a", "b", "c"}) {
          const ClassScores got = scorer.score(x);
          for (data::Label c = 0; c < 2; ++c) {
            const double expected = w.cell(spec.method, spec.mode, demos, x, w.verbalizer(c));
            worst = std::max(worst, std::abs(got.scores[static_cast<std::size_t>(c)] - expected));
            ++compared;
          }
        }
      }
    }
    r.passed = worst < tolerance;
    r.detail = fmt::format("{} scores, max deviation {:.2e}", compared, worst);
  });
}

CheckResult zero_effect_deltas(double tolerance) {
  return timed("zero-effect deltas", [&](CheckResult& r) {
    const TuningWorld w;
    const lm::ModelView plain(*w.base, w.vocab.bos());
    tuning::TrainConfig config;
    config.prompt_len = 3;
    ScoringSpec direct;
    const scoring::Scorer zero_shot(plain, w.vocab, direct, w.verbalizer);
    const std::vector<std::string> inputs = {"the plot was fun", "a bad ending", "dull film"};

    double transform_dev = 0.0;
    double head_dev = 0.0;
    for (tuning::TuningKind kind :
         {tuning::TuningKind::TransformationTuning, tuning::TuningKind::HeadTuning}) {
      const tuning::TunedModel init = tuning::init_tuning(kind, w.base, w.vocab, config);
      const scoring::Scorer tuned = tuning::make_scorer(init, w.vocab, w.verbalizer);
      double& dev = kind == tuning::TuningKind::HeadTuning ? head_dev : transform_dev;
      for (const std::string& x : inputs) {
        const ClassScores a = tuned.score(x);
        const ClassScores b = zero_shot.score(x);
        for (std::size_t c = 0; c < a.scores.size(); ++c) {
          dev = std::max(dev, std::abs(a.scores[c] - b.scores[c]));
        }
      }
    }

    tuning::TunedModel prompted =
        tuning::init_tuning(tuning::TuningKind::DirectPromptTuning, w.base, w.vocab, config);
    const lm::TokenSequence words = w.vocab.encode("the movie was");
    for (Eigen::Index i = 0; i < 3; ++i) {
      prompted.prompt->embeddings.row(i) = w.base->embedding.row(words[static_cast<std::size_t>(i)]);
    }
    double prompt_dev = 0.0;
    for (const std::string& x : inputs) {
      for (const std::string& v : w.verbalizer.surface) {
        const lm::TokenSequence xs = w.vocab.encode(x);
        const lm::TokenSequence vs = w.vocab.encode(v);
        const lm::TokenSequence text = w.vocab.encode("the movie was " + x);
        const double a = lm::conditional_logprob(prompted.view(), xs, vs);
        const double b = lm::conditional_logprob(plain, text, vs);
        prompt_dev = std::max(prompt_dev, std::abs(a - b));
      }
    }
    r.passed = transform_dev < tolerance && head_dev < tolerance && prompt_dev < tolerance;
    r.detail = fmt::format("identity transform {:.2e}, untied head {:.2e}, copied prompt {:.2e}",
                           transform_dev, head_dev, prompt_dev);
  });
}

std::vector<CheckResult> run_all() {
  std::vector<CheckResult> out;
  for (lm::GradientSubset s :
       {lm::GradientSubset::HeadOnly, lm::GradientSubset::TransformOnly,
        lm::GradientSubset::PromptEmbeddingsOnly, lm::GradientSubset::AllParams}) {
    out.push_back(gradient_check(s));
  }
  out.push_back(frozen_parameters());
  out.push_back(ensemble_additivity());
  out.push_back(ensemble_permutation_invariance());
  out.push_back(concat_order_flip());
  out.push_back(bigram_oracle());
  out.push_back(zero_effect_deltas());
  return out;
}

}  // namespace chanlab::verify
