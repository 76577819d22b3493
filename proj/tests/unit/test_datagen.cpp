#include <chanlab/common/errors.hpp>
#include <chanlab/data/dataset.hpp>
#include <chanlab/data/sampling.hpp>
#include <chanlab/data/synthetic.hpp>
#include <chanlab/lm/vocab.hpp>

#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

using namespace chanlab::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path dir = fs::temp_directory_path() / "chanlab_test_datagen";
  fs::create_directories(dir);
  return dir;
}

SyntheticOptions small_options(std::uint64_t seed = 3) {
  SyntheticOptions o;
  o.train_pool_size = 2000;
  o.test_size = 1000;
  o.corpus_size = 200;
  o.seed = seed;
  return o;
}

Dataset balanced_binary_pool(std::size_t n) {
  Dataset d;
  d.name = "toy";
  d.labels = {"great", "terrible"};
  for (std::size_t i = 0; i < n; ++i) {
    d.examples.push_back({"text " + std::to_string(i), static_cast<Label>(i % 2)});
  }
  return d;
}

}  // namespace

TEST_CASE("dataset files round-trip") {
  Dataset d;
  d.name = "pair";
  d.split = Split::Test;
  d.labels = {"great", "terrible"};
  d.examples = {{"a \"quoted\" line", 1}, {"second one", 0}};
  const std::string path = (scratch_dir() / "pair.jsonl").string();
  write_dataset(d, path);
  CHECK(fs::exists(manifest_path(path)));
  CHECK(load_dataset(path) == d);
}

TEST_CASE("unknown labels are rejected with the line number") {
  const std::vector<std::string> labels = {"great", "terrible"};
  const std::string jsonl =
      "{\"text\": \"fine\", \"label\": \"great\"}\n{\"text\": \"meh\", \"label\": \"okay\"}\n";
  try {
    parse_records(jsonl, labels, "mem");
    FAIL("expected a schema error");
  } catch (const chanlab::SchemaError& e) {
    const std::string what = e.what();
    CHECK(what.find("okay") != std::string::npos);
    CHECK(what.find("mem:2") != std::string::npos);
  }
}

TEST_CASE("a review-style record parses to the positive label") {
  const auto examples = parse_records(
      "{\"text\": \"It takes excellent pics and is very easy to use\", \"label\": \"great\"}",
      {"great", "terrible"}, "cr");
  REQUIRE(examples.size() == 1);
  CHECK(examples[0].text == "It takes excellent pics and is very easy to use");
  CHECK(examples[0].label == kPositiveLabel);
}

TEST_CASE("disjoint class vocabularies give a perfect unigram Bayes classifier") {
  for (TaskKind kind : all_task_kinds()) {
    SyntheticOptions o = small_options();
    o.overlap = 0.0;
    const SyntheticTask task = generate_synthetic_task(kind, o);
    CAPTURE(to_string(kind));
    CHECK(bayes_accuracy(task.profile, task.test) == 1.0);
  }
}

TEST_CASE("default overlap keeps Bayes accuracy at or above 0.95") {
  for (TaskKind kind : all_task_kinds()) {
    const SyntheticTask task = generate_synthetic_task(kind, small_options());
    CAPTURE(to_string(kind));
    CHECK(bayes_accuracy(task.profile, task.test) >= 0.95);
  }
}

TEST_CASE("train pool follows the configured prior") {
  SyntheticOptions o;
  o.train_pool_size = 10000;
  o.corpus_size = 10;
  o.class_prior = {0.7, 0.3};
  o.seed = 11;
  const SyntheticTask task = generate_synthetic_task(TaskKind::BinarySentiment, o);
  const auto counts = task.train_pool.label_counts();
  CHECK(std::abs(static_cast<double>(counts[0]) / 10000.0 - 0.7) <= 0.01);
}

TEST_CASE("test split is balanced, disjoint from the pool and seed-deterministic") {
  const SyntheticTask a = generate_synthetic_task(TaskKind::QuestionType, small_options(5));
  const SyntheticTask b = generate_synthetic_task(TaskKind::QuestionType, small_options(5));
  CHECK(a.train_pool == b.train_pool);
  CHECK(a.test == b.test);
  CHECK(a.corpus == b.corpus);
  REQUIRE(a.test.examples.size() == 1000);
  const auto counts = a.test.label_counts();
  for (std::size_t c : counts) {
    CHECK((c == 166 || c == 167));
  }
  std::set<std::string> pool;
  for (const Example& ex : a.train_pool.examples) {
    pool.insert(ex.text);
  }
  for (const Example& ex : a.test.examples) {
    CHECK_FALSE(pool.contains(ex.text));
  }
  const SyntheticTask c = generate_synthetic_task(TaskKind::QuestionType, small_options(6));
  CHECK_FALSE(c.test == a.test);
}

TEST_CASE("input lengths respect the short and long regimes") {
  SyntheticOptions o = small_options();
  for (bool long_inputs : {false, true}) {
    o.long_inputs = long_inputs;
    o.train_pool_size = 200;
    o.test_size = 50;
    const SyntheticTask task = generate_synthetic_task(TaskKind::BinarySentiment, o);
    for (const Example& ex : task.train_pool.examples) {
      const std::size_t n = chanlab::lm::split_words(ex.text).size();
      CHECK(n >= task.profile.min_len);
      CHECK(n <= task.profile.max_len);
      CHECK(n <= 200);
    }
  }
}

TEST_CASE("topic classes are dominated by their keyword") {
  const SyntheticTask task = generate_synthetic_task(TaskKind::Topic, small_options());
  std::vector<std::map<std::string, int>> counts(task.profile.num_labels());
  for (const Example& ex : task.train_pool.examples) {
    for (auto w : chanlab::lm::split_words(ex.text)) {
      ++counts[static_cast<std::size_t>(ex.label)][std::string(w)];
    }
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::string top;
    int best = -1;
    for (const auto& [word, n] : counts[c]) {
      if (n > best) {
        best = n;
        top = word;
      }
    }
    CHECK(top == task.profile.keywords[c]);
  }
}

TEST_CASE("too few examples for the label set is a configuration error") {
  SyntheticOptions o = small_options();
  o.train_pool_size = 3;
  CHECK_THROWS_AS(generate_synthetic_task(TaskKind::Topic, o), chanlab::ConfigError);
  o.train_pool_size = 100;
  o.test_size = 5;
  CHECK_THROWS_AS(generate_synthetic_task(TaskKind::QuestionType, o), chanlab::ConfigError);
}

TEST_CASE("word counts agree with an independent counting script") {
  SyntheticOptions o = small_options(21);
  o.train_pool_size = 1000;
  o.test_size = 2;
  const SyntheticTask task = generate_synthetic_task(TaskKind::BinarySentiment, o);
  std::vector<std::string> corpus;
  const fs::path path = scratch_dir() / "sentences.txt";
  {
    std::ofstream out(path);
    for (const Example& ex : task.train_pool.examples) {
      out << ex.text << '\n';
      corpus.push_back(ex.text);
    }
  }
  const auto vocab = chanlab::lm::Vocab::build(corpus, chanlab::lm::Vocab::default_reserved());
  const std::vector<std::string> reserved = chanlab::lm::Vocab::default_reserved();
  const auto top = vocab.top_frequent(1).at(0);

  const std::string cmd = std::string(CHANLAB_PYTHON) + " " + CHANLAB_ORACLE_DIR +
                          "/count_words.py " + path.string();
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  REQUIRE(pipe);
  std::array<char, 256> buf{};
  std::string output;
  while (fgets(buf.data(), buf.size(), pipe.get()) != nullptr) {
    output += buf.data();
  }
  std::istringstream parsed(output);
  std::size_t distinct = 0;
  std::string word;
  std::uint64_t count = 0;
  parsed >> distinct >> word >> count;
  REQUIRE(parsed);
  CHECK(vocab.size() == distinct + reserved.size());
  CHECK(vocab.token(top) == word);
  CHECK(vocab.frequency(top) == count);
}

TEST_CASE("p_minus fixes the exact label composition") {
  const Dataset pool = balanced_binary_pool(200);
  SamplingSpec spec;
  spec.k = 16;
  spec.p_minus = 0.5;
  auto counts = sample_fewshot(pool, spec).label_counts(2);
  CHECK(counts[0] == 8);
  CHECK(counts[1] == 8);
  spec.p_minus = 0.0;
  counts = sample_fewshot(pool, spec).label_counts(2);
  CHECK(counts[0] == 16);
  CHECK(counts[1] == 0);
  for (double p : {0.125, 0.25, 0.375}) {
    spec.p_minus = p;
    CHECK(sample_fewshot(pool, spec).label_counts(2)[1] == static_cast<std::size_t>(p * 16));
  }
  CHECK(minus_count(4, 0.125) == 1);
}

TEST_CASE("upsampling equalizes label multiplicity by replicating the minority") {
  const Dataset pool = balanced_binary_pool(200);
  SamplingSpec spec;
  spec.k = 4;
  spec.p_minus = 0.25;
  spec.upsample = true;
  const FewShotSet set = sample_fewshot(pool, spec);
  const auto counts = set.label_counts(2);
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 3);
  std::set<std::size_t> minus_sources;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.examples[i].label == kNegativeLabel) {
      minus_sources.insert(set.pool_indices[i]);
    }
  }
  CHECK(minus_sources.size() == 1);
  spec.upsample = false;
  const FewShotSet plain = sample_fewshot(pool, spec);
  std::multiset<std::size_t> a(plain.pool_indices.begin(), plain.pool_indices.end());
  std::multiset<std::size_t> b(set.pool_indices.begin(), set.pool_indices.end());
  for (std::size_t idx : a) {
    CHECK(b.contains(idx));
  }
}

TEST_CASE("sampling is byte-for-byte deterministic and draws without replacement") {
  const Dataset pool = balanced_binary_pool(100);
  SamplingSpec spec;
  spec.k = 32;
  spec.data_seed = 77;
  const FewShotSet a = sample_fewshot(pool, spec);
  const FewShotSet b = sample_fewshot(pool, spec);
  CHECK(to_json(a, pool.labels) == to_json(b, pool.labels));
  std::set<std::size_t> unique(a.pool_indices.begin(), a.pool_indices.end());
  CHECK(unique.size() == 32);
  spec.data_seed = 78;
  CHECK(to_json(sample_fewshot(pool, spec), pool.labels) != to_json(a, pool.labels));
}

TEST_CASE("uniform K=16 draws average 8 examples of each label") {
  const Dataset pool = balanced_binary_pool(2000);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SamplingSpec spec;
    spec.k = 16;
    spec.data_seed = seed;
    total += static_cast<double>(sample_fewshot(pool, spec).label_counts(2)[kNegativeLabel]);
  }
  const double mean = total / 1000.0;
  CHECK(mean >= 7.5);
  CHECK(mean <= 8.5);
}

TEST_CASE("excluded labels never reach the few-shot set") {
  const SyntheticTask task = generate_synthetic_task(TaskKind::Topic, small_options());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SamplingSpec spec;
    spec.k = 64;
    spec.data_seed = seed;
    spec.excluded_label = pick_excluded_label(task.train_pool.num_labels(), seed);
    const FewShotSet set = sample_fewshot(task.train_pool, spec);
    CHECK(set.label_counts(4)[static_cast<std::size_t>(*spec.excluded_label)] == 0);
    CHECK(task.test.label_counts()[static_cast<std::size_t>(*spec.excluded_label)] > 0);
  }
  std::set<Label> picked;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    picked.insert(pick_excluded_label(4, seed));
  }
  CHECK(picked.size() == 4);
}

TEST_CASE("excluding a label of a binary task leaves single-label sets") {
  const Dataset pool = balanced_binary_pool(100);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SamplingSpec spec;
    spec.data_seed = seed;
    spec.excluded_label = pick_excluded_label(2, seed);
    const auto counts = sample_fewshot(pool, spec).label_counts(2);
    CHECK((counts[0] == 0 || counts[1] == 0));
  }
}

TEST_CASE("inconsistent sampling specs are rejected") {
  const Dataset pool = balanced_binary_pool(10);
  SamplingSpec spec;
  spec.k = 11;
  CHECK_THROWS_AS(sample_fewshot(pool, spec), chanlab::ConfigError);
  spec.k = 4;
  spec.p_minus = 0.6;
  CHECK_THROWS_AS(sample_fewshot(pool, spec), chanlab::ConfigError);
  spec.p_minus.reset();
  spec.excluded_label = 2;
  CHECK_THROWS_AS(sample_fewshot(pool, spec), chanlab::ConfigError);
  Dataset four = pool;
  four.labels = {"a", "b", "c", "d"};
  SamplingSpec imbalance;
  imbalance.p_minus = 0.25;
  CHECK_THROWS_AS(sample_fewshot(four, imbalance), chanlab::ConfigError);
}
