#include <chanlab/common/errors.hpp>
#include <chanlab/data/synthetic.hpp>
#include <chanlab/harness/harness.hpp>

#include <doctest.h>

#include <chanlab/verify/toy_models.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <tuple>
#include <sstream>

using namespace chanlab;
using namespace chanlab::harness;

namespace {

data::SyntheticOptions small_options(std::uint64_t seed) {
  data::SyntheticOptions o;
  o.train_pool_size = 200;
  o.test_size = 24;
  o.corpus_size = 400;
  o.seed = seed;
  return o;
}

TaskData task_data(const data::SyntheticTask& t) {
  TaskData d;
  d.name = t.profile.name;
  d.train_pool = t.train_pool;
  d.test = t.test;
  d.verbalizers = scoring::default_verbalizers(t.profile);
  return d;
}

struct ToyLab {
  data::SyntheticTask binary = data::generate_synthetic_task(data::TaskKind::BinarySentiment, small_options(1));
  data::SyntheticTask topic = data::generate_synthetic_task(data::TaskKind::Topic, small_options(2));
  lm::Vocab vocab = [this] {
    std::vector<std::string> corpus = binary.corpus;
    corpus.insert(corpus.end(), topic.corpus.begin(), topic.corpus.end());
    return lm::Vocab::build(corpus, lm::Vocab::default_reserved());
  }();
  Lab lab = [this] {
    Lab l;
    l.vocab = &vocab;
    l.base = std::make_shared<const lm::LMParams>(
        testing::random_lm(static_cast<int>(vocab.size()), 5, 1.0, 1, 16, 2, 256));
    l.tasks.emplace(binary.profile.name, task_data(binary));
    l.tasks.emplace(topic.profile.name, task_data(topic));
    l.train.steps = 2;
    l.train.lr_grid = {0.01};
    l.train.prompt_len = 2;
    l.test_limit = 6;
    return l;
  }();

  ExperimentGrid grid(const std::string& method, const std::string& task = "binary-sentiment") const {
    ExperimentGrid g;
    g.task = task;
    g.method = MethodSpec::parse(method);
    for (const auto& v : lab.task(task).verbalizers) {
      g.verbalizers.push_back(v.name);
    }
    g.k = 4;
    return g;
  }
};

const ToyLab& toy() {
  static const ToyLab t;
  return t;
}

RunResult with_accuracy(double a) {
  RunResult r;
  r.accuracy = a;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("method names round trip") {
  for (const char* name : {"direct:zero-shot", "direct++:concat", "channel:ensemble", "head",
                           "channel-prompt", "full"}) {
    CHECK(MethodSpec::parse(name).name() == name);
  }
  CHECK(MethodSpec::parse("channel:zero-shot").is_zero_shot());
  CHECK(MethodSpec::parse("transform").is_tuning());
  CHECK_THROWS_AS(MethodSpec::parse("noisy:concat"), ConfigError);
  CHECK_THROWS_AS(MethodSpec::parse("prefix"), ConfigError);
}

TEST_CASE("grids have 4, 20 and 80 cells") {
  CHECK(toy().grid("channel:zero-shot").cells().size() == 4);
  CHECK(toy().grid("direct:concat").cells().size() == 20);
  CHECK(toy().grid("channel-prompt").cells().size() == 80);
  const auto cells = toy().grid("head").cells();
  std::set<std::tuple<std::string, std::uint64_t, std::uint64_t>> unique;
  for (const Cell& c : cells) {
    unique.emplace(c.verbalizer, *c.data_seed, *c.train_seed);
  }
  CHECK(unique.size() == 80);
}

TEST_CASE("run_grid returns one result per cell and aggregates are ordered") {
  for (const char* method : {"direct:zero-shot", "channel:ensemble", "head"}) {
    CAPTURE(method);
    const ExperimentGrid g = toy().grid(method);
    const auto results = run_grid(g, toy().lab, 2);
    REQUIRE(results.size() == g.cells().size());
    for (std::size_t i = 0; i < results.size(); ++i) {
      CHECK(results[i].ok());
      CHECK(results[i].cell == g.cells()[i]);
      CHECK(results[i].predictions.size() == 6);
      CHECK(results[i].accuracy >= 0.0);
      CHECK(results[i].accuracy <= 1.0);
    }
    const Aggregate a = aggregate(results);
    CHECK(a.worst <= a.avg);
    CHECK(a.avg <= a.best);
    CHECK(a.std >= 0.0);
    CHECK(a.complete());
  }
}

TEST_CASE("accuracy is the share of correct predictions") {
  const ExperimentGrid g = toy().grid("channel:zero-shot");
  const RunResult r = run_cell(g, g.cells()[0], toy().lab);
  const auto& test = toy().lab.task("binary-sentiment").test.examples;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    correct += r.predictions[i] == test[i].label ? 1 : 0;
  }
  CHECK(r.accuracy == static_cast<double>(correct) / 6.0);
}

TEST_CASE("cells are reproducible from their coordinates") {
  for (const char* method : {"direct++:concat", "direct-prompt"}) {
    CAPTURE(method);
    const ExperimentGrid g = toy().grid(method);
    const Cell cell = g.cells()[7];
    const RunResult a = run_cell(g, cell, toy().lab);
    const RunResult b = run_cell(g, cell, toy().lab);
    CHECK(a.predictions == b.predictions);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.selected_lr == b.selected_lr);
  }
  ExperimentGrid g = toy().grid("transform");
  g.verbalizers.resize(1);
  const auto serial = run_grid(g, toy().lab, 1);
  const auto parallel = run_grid(g, toy().lab, 3);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].predictions == parallel[i].predictions);
    CHECK(serial[i].selected_lr == parallel[i].selected_lr);
  }
}

TEST_CASE("failed cells are recorded and the grid continues") {
  Lab lab = toy().lab;
  lab.base = std::make_shared<const lm::LMParams>(
      testing::random_lm(static_cast<int>(toy().vocab.size()), 5, 1.0, 1, 16, 2, 40));
  ExperimentGrid g = toy().grid("channel:concat");
  g.verbalizers.resize(1);
  g.data_seeds = {0};
  g.k = 16;  // sixteen demonstrations cannot fit in 40 positions
  ExperimentGrid ok = g;
  ok.k = 1;
  ok.data_seeds = {0, 1};
  const auto failed = run_grid(g, lab);
  REQUIRE(failed.size() == 1);
  CHECK_FALSE(failed[0].ok());
  CHECK(failed[0].error.find("K=16") != std::string::npos);
  CHECK_THROWS_AS(aggregate(failed), ConfigError);

  std::vector<RunResult> mixed = run_grid(ok, lab);
  mixed.push_back(failed[0]);
  const Aggregate a = aggregate(mixed);
  CHECK(a.runs == 2);
  CHECK(a.failed == 1);
  CHECK_FALSE(a.complete());
}

TEST_CASE("aggregate statistics") {
  const Aggregate one = aggregate({with_accuracy(0.5)});
  CHECK(one.avg == 0.5);
  CHECK(one.worst == 0.5);
  CHECK(one.best == 0.5);
  CHECK(one.std == 0.0);
  const Aggregate two = aggregate({with_accuracy(0.4), with_accuracy(0.6)});
  CHECK(two.avg == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two.worst == 0.4);
  CHECK(two.best == 0.6);
  CHECK(two.std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(aggregate({}), ConfigError);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RunResult> rs;
    const int n = 1 + trial % 9;
    for (int i = 0; i < n; ++i) {
      rs.push_back(with_accuracy(trial % 3 == 0 ? 0.7 : u(rng)));
    }
    const Aggregate a = aggregate(rs);
    CHECK(a.worst <= a.avg);
    CHECK(a.avg <= a.best);
    CHECK(a.std >= 0.0);
  }
}

TEST_CASE("majority baseline") {
  data::Dataset d;
  d.labels = {"a", "b", "c"};
  d.examples = {{"x", 0}, {"y", 1}, {"z", 1}, {"w", 2}};
  CHECK(majority_baseline(d) == 0.5);
  CHECK(majority_baseline(d, 1) == 1.0);
  CHECK(majority_baseline(toy().lab.task("binary-sentiment").test) == 0.5);
}

TEST_CASE("ablation grid shapes") {
  AblationParams p;
  p.task = "binary-sentiment";
  p.methods = {MethodSpec::parse("channel:concat"), MethodSpec::parse("head")};

  const auto imbalance = ablation_grids(AblationKind::Imbalance, p, toy().lab);
  CHECK(imbalance.size() == 2 * 5 * 2);
  std::set<std::pair<double, bool>> cells;
  for (const auto& g : imbalance) {
    if (g.method.name() == "head") {
      cells.emplace(*g.p_minus, g.upsample);
    }
  }
  CHECK(cells.size() == 10);

  const auto vary = ablation_grids(AblationKind::VaryK, p, toy().lab);
  CHECK(vary.size() == 3 + 4);  // the full pool applies to tuning only

  const auto unseen = ablation_grids(AblationKind::UnseenLabel, p, toy().lab);
  REQUIRE(unseen.size() == 2);
  CHECK(unseen[0].exclude_label);

  p.task = "4-way-topic";
  CHECK_THROWS_AS(ablation_grids(AblationKind::Imbalance, p, toy().lab), ConfigError);

  AblationParams t;
  t.task = "binary-sentiment";
  t.target_task = "4-way-topic";
  t.methods = {MethodSpec::parse("head")};
  CHECK_THROWS_AS(ablation_grids(AblationKind::Transfer, t, toy().lab), ConfigError);
  t.methods = {MethodSpec::parse("channel-prompt")};
  const auto transfer = ablation_grids(AblationKind::Transfer, t, toy().lab);
  REQUIRE(transfer.size() == 1);
  CHECK(transfer[0].task == "4-way-topic");
  CHECK(transfer[0].source_task() == "binary-sentiment");
  t.methods = {MethodSpec::parse("channel:concat")};
  CHECK_THROWS_AS(ablation_grids(AblationKind::Transfer, t, toy().lab), ConfigError);
}

TEST_CASE("unseen labels on a binary task leave single-label training sets") {
  ExperimentGrid g = toy().grid("channel-prompt");
  g.exclude_label = true;
  g.verbalizers.resize(1);
  g.train_seeds = {0};
  for (const Cell& c : g.cells()) {
    const RunResult r = run_cell(g, c, toy().lab);
    REQUIRE(r.excluded_label.has_value());
    data::SamplingSpec s;
    s.k = 4;
    s.data_seed = *c.data_seed;
    s.excluded_label = r.excluded_label;
    const auto set = data::sample_fewshot(toy().lab.task("binary-sentiment").train_pool, s);
    const auto counts = set.label_counts(2);
    CHECK(counts[static_cast<std::size_t>(*r.excluded_label)] == 0);
    CHECK(counts[1 - static_cast<std::size_t>(*r.excluded_label)] == 4);
  }
}

TEST_CASE("channel scores stay finite for labels absent from training") {
  ExperimentGrid g = toy().grid("channel-prompt");
  g.exclude_label = true;
  const Cell c = g.cells()[0];
  const RunResult r = run_cell(g, c, toy().lab);
  CHECK(r.ok());
  // Rebuild the tuned model the cell used and score every label.
  data::SamplingSpec s;
  s.k = 4;
  s.data_seed = *c.data_seed;
  s.excluded_label = r.excluded_label;
  const auto& task = toy().lab.task("binary-sentiment");
  const auto set = data::sample_fewshot(task.train_pool, s);
  tuning::TrainConfig config = toy().lab.train;
  config.seed = *c.train_seed;
  const auto init = tuning::init_tuning(tuning::TuningKind::ChannelPromptTuning, toy().lab.base,
                                        toy().vocab, config);
  const auto model = tuning::train(init, set, task.verbalizers[0], toy().vocab, config, 0.01);
  for (const auto& ex : task.test.examples) {
    for (double s : tuning::tuned_score(model, toy().vocab, task.verbalizers[0], ex.text).scores) {
      CHECK(std::isfinite(s));
    }
  }
}

TEST_CASE("transfer evaluates with the target verbalizers") {
  AblationParams t;
  t.task = "binary-sentiment";
  t.target_task = "4-way-topic";
  t.methods = {MethodSpec::parse("channel-prompt")};
  t.verbalizers = {"topic"};
  t.data_seeds = {0};
  t.train_seeds = {0};
  const auto out = run_ablation(AblationKind::Transfer, t, toy().lab);
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].results.size() == 1);
  CHECK(out[0].results[0].ok());
  CHECK(out[0].x == "binary-sentiment->4-way-topic");
  CHECK(out[0].majority == doctest::Approx(majority_baseline(toy().lab.task("4-way-topic").test, 6)));
  for (Label p : out[0].results[0].predictions) {
    CHECK(p >= 0);
    CHECK(p < 4);
  }
}

TEST_CASE("reports are deterministic and shaped per outcome") {
  AblationParams p;
  p.task = "binary-sentiment";
  p.methods = {MethodSpec::parse("channel:ensemble"), MethodSpec::parse("head")};
  p.verbalizers = {"it-was"};
  p.data_seeds = {0};
  p.train_seeds = {0};
  p.ks = {1, 2, 4};
  auto outcomes = run_ablation(AblationKind::VaryK, p, toy().lab);
  outcomes.push_back(run_outcome(toy().grid("direct:zero-shot"), toy().lab));
  const ReportMeta meta{"{\"a\": 1}", "abc123"};

  const auto dir = std::filesystem::temp_directory_path() / "chanlab_test_report";
  std::filesystem::remove_all(dir);
  write_report(outcomes, meta, (dir / "one").string());
  write_report(outcomes, meta, (dir / "two").string());
  for (const char* f : {"results.jsonl", "report.tsv", "curves.csv", "config.json"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "one" / f) == slurp(dir / "two" / f));
  }
  const std::string tsv = slurp(dir / "one" / "report.tsv");
  CHECK(count_lines(tsv) == 1 + outcomes.size());
  const std::string curves = slurp(dir / "one" / "curves.csv");
  CHECK(count_lines(curves) == 1 + 2 * 3);  // one series per method, one point per K
  CHECK(curves.find("vary_K,4,head,") != std::string::npos);
  const std::string results = slurp(dir / "one" / "results.jsonl");
  CHECK(count_lines(results) == 3 + 3 + 4);
  CHECK(results.find("\"code_version\":\"abc123\"") != std::string::npos);
  CHECK(slurp(dir / "one" / "config.json") == "{\"a\": 1}\n");

  const auto back = load_results((dir / "one" / "results.jsonl").string());
  REQUIRE(back.size() == outcomes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].grid.method == outcomes[i].grid.method);
    CHECK(back[i].results.size() == outcomes[i].results.size());
    CHECK(back[i].summary->avg == outcomes[i].summary->avg);
  }
  write_report(back, meta, (dir / "three").string());
  CHECK(slurp(dir / "three" / "report.tsv") == tsv);
  CHECK(slurp(dir / "three" / "curves.csv") == curves);

  CHECK_THROWS_AS(write_report({}, meta, (dir / "four").string()), ConfigError);
  std::ofstream(dir / "blocker") << "x";
  CHECK_THROWS_AS(write_report(outcomes, meta, (dir / "blocker" / "sub").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("one aggregate gives one table row") {
  const auto dir = std::filesystem::temp_directory_path() / "chanlab_test_one_row";
  write_report({run_outcome(toy().grid("channel:zero-shot"), toy().lab)}, {"{}", "x"}, dir.string());
  CHECK(count_lines(slurp(dir / "report.tsv")) == 2);
  CHECK(count_lines(slurp(dir / "results.jsonl")) == 4);
  std::filesystem::remove_all(dir);
}
