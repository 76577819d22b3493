#include <chanlab/common/errors.hpp>
#include <chanlab/tuning/tuning.hpp>

#include <doctest.h>

#include <chanlab/verify/toy_models.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace chanlab;
using namespace chanlab::tuning;
using chanlab::data::Example;
using chanlab::data::FewShotSet;
using chanlab::lm::TokenSequence;
using chanlab::lm::Vocab;
using chanlab::scoring::Verbalizer;

namespace {

const Vocab& toy_vocab() {
  static const Vocab v = [] {
    const std::vector<std::string> corpus = {
        "the movie was great and the plot was fun",
        "the movie was terrible and the acting was dull",
        "a fine film with a bad ending",
        "good bad okay great terrible fun dull plot film"};
    return Vocab::build(corpus, Vocab::default_reserved());
  }();
  return v;
}

std::shared_ptr<const lm::LMParams> toy_base(std::uint64_t seed = 3) {
  return std::make_shared<const lm::LMParams>(
      testing::random_lm(static_cast<int>(toy_vocab().size()), seed, 3.0, 2, 16, 2, 64));
}

Verbalizer sentiment() {
  Verbalizer v;
  v.name = "test";
  v.labels = {"great", "terrible"};
  v.surface = {"great", "terrible"};
  return v;
}

FewShotSet fewshot_of(std::vector<Example> examples) {
  FewShotSet set;
  set.examples = std::move(examples);
  set.pool_indices.resize(set.examples.size());
  std::iota(set.pool_indices.begin(), set.pool_indices.end(), 0);
  set.spec.k = set.examples.size();
  return set;
}

FewShotSet four_examples() {
  return fewshot_of({{"the plot was fun", 0},
                     {"the acting was dull", 1},
                     {"a fine film", 0},
                     {"a bad ending", 1}});
}

TrainConfig small_config() {
  TrainConfig c;
  c.steps = 20;
  c.batch_size = 4;
  c.prompt_len = 3;
  c.seed = 9;
  return c;
}

double direct_logprob(const lm::ModelView& view, const std::string& x, const std::string& v) {
  const TokenSequence xs = toy_vocab().encode(x);
  const TokenSequence vs = toy_vocab().encode(v);
  return lm::conditional_logprob(view, xs, vs);
}

}  // namespace

TEST_CASE("method names round trip and unknown names are rejected") {
  for (TuningKind k : all_tuning_kinds()) {
    CHECK(parse_tuning_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_tuning_kind("lora"), ConfigError);
  CHECK(is_channel(TuningKind::ChannelPromptTuning));
  CHECK_FALSE(is_channel(TuningKind::DirectPromptTuning));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_grid.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.prompt_len = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training pairs follow the method direction") {
  const FewShotSet set = four_examples();
  const auto direct = training_examples(TuningKind::DirectPromptTuning, set, sentiment(), toy_vocab());
  const auto channel = training_examples(TuningKind::ChannelPromptTuning, set, sentiment(), toy_vocab());
  REQUIRE(direct.size() == 4);
  CHECK(direct[1].context == toy_vocab().encode("the acting was dull"));
  CHECK(direct[1].target == toy_vocab().encode("terrible"));
  CHECK(channel[1].context == toy_vocab().encode("terrible"));
  CHECK(channel[1].target == toy_vocab().encode("the acting was dull"));
}

TEST_CASE("only the delta changes and the base stays bit-identical") {
  auto base = toy_base();
  const std::uint64_t before = base->fingerprint();
  const TrainConfig config = small_config();
  for (TuningKind k : all_tuning_kinds()) {
    CAPTURE(to_string(k));
    const TunedModel init = init_tuning(k, base, toy_vocab(), config);
    TrainConfig long_run = config;
    long_run.steps = 100;
    const TunedModel out = train(init, four_examples(), sentiment(), toy_vocab(), long_run, 0.01);
    CHECK(base->fingerprint() == before);
    CHECK(out.base->fingerprint() == before);
    CHECK(out.delta_fingerprint() != init.delta_fingerprint());
    const int deltas = int(out.head.has_value()) + int(out.transform.has_value()) +
                       int(out.prompt.has_value()) + int(out.full.has_value());
    CHECK(deltas == 1);
    CHECK(out.loss_curve.size() == 100);
  }
}

TEST_CASE("initial deltas leave the base LM unchanged") {
  auto base = toy_base();
  const lm::ModelView plain(*base, toy_vocab().bos());
  const TrainConfig config = small_config();
  for (TuningKind k : {TuningKind::HeadTuning, TuningKind::TransformationTuning,
                       TuningKind::FullFinetune}) {
    CAPTURE(to_string(k));
    const TunedModel init = init_tuning(k, base, toy_vocab(), config);
    for (const char* x : {"the plot was fun", "a bad ending"}) {
      for (const char* v : {"great", "terrible"}) {
        CHECK(direct_logprob(init.view(), x, v) ==
              doctest::Approx(direct_logprob(plain, x, v)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("prompt rows copied from real embeddings match the textual prefix") {
  auto base = toy_base();
  const lm::ModelView plain(*base, toy_vocab().bos());
  TunedModel m = init_tuning(TuningKind::DirectPromptTuning, base, toy_vocab(), small_config());
  const TokenSequence words = toy_vocab().encode("the movie was");
  REQUIRE(m.prompt->embeddings.rows() == 3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    m.prompt->embeddings.row(i) = base->embedding.row(words[static_cast<std::size_t>(i)]);
  }
  for (const char* x : {"great and the plot was fun", "terrible"}) {
    for (const char* v : {"great", "dull film"}) {
      CHECK(direct_logprob(m.view(), x, v) ==
            doctest::Approx(direct_logprob(plain, std::string("the movie was ") + x, v))
                .epsilon(1e-9));
    }
  }
}

TEST_CASE("prompt init draws distinct frequent tokens deterministically") {
  auto base = toy_base();
  TrainConfig config = small_config();
  config.prompt_len = 5;
  config.prompt_init_top = 8;
  const TunedModel a = init_tuning(TuningKind::ChannelPromptTuning, base, toy_vocab(), config);
  const TunedModel b = init_tuning(TuningKind::ChannelPromptTuning, base, toy_vocab(), config);
  CHECK(a.prompt->init_token_ids == b.prompt->init_token_ids);
  CHECK(a.prompt->embeddings == b.prompt->embeddings);
  const auto top = toy_vocab().top_frequent(8);
  std::set<lm::TokenId> seen;
  for (std::size_t i = 0; i < 5; ++i) {
    const lm::TokenId id = a.prompt->init_token_ids[i];
    CHECK(std::find(top.begin(), top.end(), id) != top.end());
    CHECK(seen.insert(id).second);
    CHECK(a.prompt->embeddings.row(static_cast<Eigen::Index>(i)) == base->embedding.row(id));
  }
  config.seed = 10;
  bool differs = false;
  for (std::uint64_t s = 10; s < 20 && !differs; ++s) {
    config.seed = s;
    differs = init_tuning(TuningKind::ChannelPromptTuning, base, toy_vocab(), config)
                  .prompt->init_token_ids != a.prompt->init_token_ids;
  }
  CHECK(differs);
  config.prompt_len = 9;
  CHECK_THROWS_AS(init_tuning(TuningKind::ChannelPromptTuning, base, toy_vocab(), config),
                  ConfigError);
}

TEST_CASE("init rejects an untied base") {
  lm::LMParams p = testing::random_lm(static_cast<int>(toy_vocab().size()), 1);
  p.untie();
  auto base = std::make_shared<const lm::LMParams>(std::move(p));
  CHECK_THROWS_AS(init_tuning(TuningKind::HeadTuning, base, toy_vocab(), small_config()),
                  ConfigError);
}

TEST_CASE("a zero learning rate leaves every delta bit-identical") {
  auto base = toy_base();
  for (TuningKind k : all_tuning_kinds()) {
    CAPTURE(to_string(k));
    const TunedModel init = init_tuning(k, base, toy_vocab(), small_config());
    const TunedModel out = train(init, four_examples(), sentiment(), toy_vocab(), small_config(), 0.0);
    CHECK(out.delta_fingerprint() == init.delta_fingerprint());
  }
}

TEST_CASE("training on a single example lowers its loss") {
  auto base = toy_base();
  const FewShotSet one = fewshot_of({{"the plot was fun", 0}});
  for (TuningKind k : all_tuning_kinds()) {
    CAPTURE(to_string(k));
    const double lr = k == TuningKind::FullFinetune ? 1e-3 : 0.01;
    const TunedModel out = train(init_tuning(k, base, toy_vocab(), small_config()), one,
                                 sentiment(), toy_vocab(), small_config(), lr);
    CHECK(out.loss_curve.back() < out.loss_curve.front());
  }
}

TEST_CASE("head tuning fits a separable training set") {
  auto base = toy_base();
  TrainConfig config = small_config();
  config.steps = 200;
  const FewShotSet set = four_examples();
  const TunedModel out = train(init_tuning(TuningKind::HeadTuning, base, toy_vocab(), config), set,
                               sentiment(), toy_vocab(), config, 0.1);
  const auto scorer = make_scorer(out, toy_vocab(), sentiment());
  for (const Example& ex : set.examples) {
    CAPTURE(ex.text);
    CHECK(scorer.score(ex.text).chosen == ex.label);
  }
}

TEST_CASE("training is deterministic in the seed") {
  auto base = toy_base();
  const TunedModel init = init_tuning(TuningKind::DirectPromptTuning, base, toy_vocab(), small_config());
  TrainConfig config = small_config();
  config.batch_size = 3;
  const TunedModel a = train(init, four_examples(), sentiment(), toy_vocab(), config, 0.01);
  const TunedModel b = train(init, four_examples(), sentiment(), toy_vocab(), config, 0.01);
  CHECK(a.delta_fingerprint() == b.delta_fingerprint());
  CHECK(a.loss_curve == b.loss_curve);
}

TEST_CASE("learning-rate selection") {
  auto base = toy_base();
  const TunedModel init = init_tuning(TuningKind::TransformationTuning, base, toy_vocab(), small_config());

  SUBCASE("a singleton grid picks its only value") {
    TrainConfig config = small_config();
    config.lr_grid = {0.01};
    const LrSelection sel = select_lr(init, four_examples(), sentiment(), toy_vocab(), config);
    CHECK(sel.lr == 0.01);
    CHECK_FALSE(sel.all_diverged);
    CHECK(sel.model.lr == 0.01);
  }
  SUBCASE("the lowest final loss wins") {
    TrainConfig config = small_config();
    config.lr_grid = {0.1, 0.01, 0.0};
    const LrSelection sel = select_lr(init, four_examples(), sentiment(), toy_vocab(), config);
    REQUIRE(sel.trials.size() == 3);
    double best = sel.trials[0].final_loss;
    for (const LrTrial& t : sel.trials) {
      best = std::min(best, t.final_loss);
    }
    for (const LrTrial& t : sel.trials) {
      if (t.lr == sel.lr) {
        CHECK(t.final_loss == best);
      }
    }
    const TunedModel again = train(init, four_examples(), sentiment(), toy_vocab(), config, sel.lr);
    CHECK(again.delta_fingerprint() == sel.model.delta_fingerprint());
  }
  SUBCASE("diverged runs are excluded") {
    TrainConfig config = small_config();
    config.lr_grid = {1e308, 0.01};
    const LrSelection sel = select_lr(init, four_examples(), sentiment(), toy_vocab(), config);
    CHECK(sel.trials[0].diverged);
    CHECK_FALSE(sel.trials[0].error.empty());
    CHECK(sel.lr == 0.01);
  }
  SUBCASE("all diverged falls back to the smallest rate and the untrained delta") {
    TrainConfig config = small_config();
    config.lr_grid = {1e308, 1e307};
    const LrSelection sel = select_lr(init, four_examples(), sentiment(), toy_vocab(), config);
    CHECK(sel.all_diverged);
    CHECK(sel.lr == 1e307);
    CHECK(sel.model.delta_fingerprint() == init.delta_fingerprint());
  }
  SUBCASE("full finetuning uses its own rate") {
    TrainConfig config = small_config();
    CHECK(lr_grid_for(TuningKind::FullFinetune, config) == std::vector<double>{1e-5});
    CHECK(lr_grid_for(TuningKind::HeadTuning, config) == config.lr_grid);
  }
}

TEST_CASE("a divergent run names the failing step") {
  auto base = toy_base();
  const TunedModel init = init_tuning(TuningKind::HeadTuning, base, toy_vocab(), small_config());
  try {
    train(init, four_examples(), sentiment(), toy_vocab(), small_config(), 1e308);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step ") != std::string::npos);
  }
}

TEST_CASE("tuned deltas round trip through a file") {
  auto base = toy_base();
  const auto dir = std::filesystem::temp_directory_path() / "chanlab_test_tuning";
  std::filesystem::create_directories(dir);
  for (TuningKind k : all_tuning_kinds()) {
    CAPTURE(to_string(k));
    const TunedModel out = train(init_tuning(k, base, toy_vocab(), small_config()), four_examples(),
                                 sentiment(), toy_vocab(), small_config(), 0.01);
    const std::string path = (dir / (std::string(to_string(k)) + ".delta")).string();
    save_tuned(out, path);
    const TunedModel back = load_tuned(path, base, toy_vocab().bos());
    CHECK(back.kind == k);
    CHECK(back.lr == 0.01);
    CHECK(back.loss_curve == out.loss_curve);
    CHECK(back.delta_fingerprint() == out.delta_fingerprint());
    CHECK(tuned_score(back, toy_vocab(), sentiment(), "a fine film").scores ==
          tuned_score(out, toy_vocab(), sentiment(), "a fine film").scores);
    CHECK_THROWS_AS(load_tuned(path, toy_base(4), toy_vocab().bos()), SchemaError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss curve csv") {
  const auto path = (std::filesystem::temp_directory_path() / "chanlab_curve.csv").string();
  write_loss_curve({2.5, 1.25}, path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "step,loss\n0,2.5\n1,1.25\n");
  std::filesystem::remove(path);
}
