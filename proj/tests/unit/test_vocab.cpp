#include <chanlab/common/errors.hpp>
#include <chanlab/lm/vocab.hpp>

#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

using chanlab::lm::Vocab;

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<bos>", "N/A"};
}

TEST_CASE("build_vocab counts words and keeps reserved tokens first") {
  const std::vector<std::string> corpus = {"a b", "b"};
  const Vocab v = Vocab::build(corpus, kReserved);
  REQUIRE(v.size() == 5);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<bos>");
  CHECK(v.token(2) == "N/A");
  CHECK(v.frequency(v.id("b")) == 2);
  CHECK(v.frequency(v.id("a")) == 1);
  CHECK(v.bos() == 1);
  CHECK(v.null_marker() == 2);
}

TEST_CASE("duplicated corpus doubles frequencies and keeps the same tokens") {
  const std::vector<std::string> corpus = {"x y z", "y z", "z"};
  std::vector<std::string> doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  const Vocab once = Vocab::build(corpus, kReserved);
  const Vocab twice = Vocab::build(doubled, kReserved);
  REQUIRE(once.size() == twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    const auto id = static_cast<chanlab::lm::TokenId>(i);
    CHECK(once.token(id) == twice.token(id));
    CHECK(twice.frequency(id) == 2 * once.frequency(id));
  }
}

TEST_CASE("empty corpus and missing reserved tokens are configuration errors") {
  CHECK_THROWS_AS(Vocab::build(std::vector<std::string>{}, kReserved), chanlab::ConfigError);
  const std::vector<std::string> no_null = {"<pad>", "<bos>"};
  CHECK_THROWS_AS(Vocab::build(std::vector<std::string>{"a"}, no_null), chanlab::ConfigError);
}

TEST_CASE("frequency ranking breaks ties by token index") {
  const Vocab v = Vocab::build(std::vector<std::string>{"c a b a b"}, kReserved);
  const auto ranked = v.by_frequency();
  // a and b tie at 2; a was seen first.
  CHECK(v.token(ranked[0]) == "a");
  CHECK(v.token(ranked[1]) == "b");
  CHECK(v.token(ranked[2]) == "c");
  const auto top = v.top_frequent(10);
  REQUIRE(top.size() == 3);
  for (auto id : top) {
    CHECK_FALSE(v.is_reserved(id));
  }
}

TEST_CASE("encode/decode round-trips up to whitespace normalisation") {
  const Vocab v = Vocab::build(std::vector<std::string>{"it was great .", "a fine film"});
  const auto ids = v.encode("  it   was\tgreat .\na fine film ");
  CHECK(v.decode(ids) == "it was great .\na fine film");
  CHECK(v.encode(v.decode(ids)) == ids);
  CHECK(v.encode("N/A") == std::vector<chanlab::lm::TokenId>{v.null_marker()});
  CHECK(v.encode("never seen") ==
        std::vector<chanlab::lm::TokenId>{v.id("<unk>"), v.id("<unk>")});
}

TEST_CASE("unknown words without <unk> are rejected") {
  const Vocab v = Vocab::build(std::vector<std::string>{"a"}, kReserved);
  CHECK_THROWS_AS(v.encode("b"), chanlab::ConfigError);
}

TEST_CASE("vocabulary file round-trip") {
  const Vocab v = Vocab::build(std::vector<std::string>{"the movie was great", "the end"});
  const std::string path = "test_vocab_roundtrip.tsv";
  v.save(path);
  const Vocab loaded = Vocab::load(path);
  std::remove(path.c_str());
  CHECK(loaded == v);
}
