#include <doctest.h>

#include <cmath>

#include "calrank/corpus.hpp"
#include "calrank/errors.hpp"
#include "calrank/retrieval.hpp"
#include "calrank/rng.hpp"

using namespace calrank;

namespace {

Corpus make_corpus(const std::vector<std::pair<std::string, std::string>>& id_text) {
  Corpus corpus;
  for (const auto& [id, text] : id_text) corpus.documents.push_back({id, "", text, {}});
  corpus.finalize();
  return corpus;
}

// The three-document fixture used by both hand-score checks:
//   d1: red fox red | d2: red dog | d3: blue dog dog fox
Corpus hand_corpus() {
  return make_corpus({{"d1", "red fox red"}, {"d2", "red dog"}, {"d3", "blue dog dog fox"}});
}

}  // namespace

TEST_SUITE("retrieval") {

TEST_CASE("build_index rejects an empty corpus") {
  Corpus corpus;
  corpus.finalize();
  CHECK_THROWS_AS(build_index(corpus), InputError);
}

TEST_CASE("idf follows the smoothed formula") {
  const Corpus one = make_corpus({{"d1", "solo token"}});
  const InvertedIndex index = build_index(one);
  CHECK(index.postings("solo")->size() == 1);
  CHECK(index.idf("solo") == doctest::Approx(std::log((1 - 1 + 0.5) / 1.5 + 1.0)).epsilon(1e-12));

  const Corpus all = make_corpus({{"a", "common x"}, {"b", "common y"}, {"c", "common z"}});
  const double expected = std::log(0.5 / 3.5 + 1.0);
  CHECK(build_index(all).idf("common") == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected > 0.0);
}

TEST_CASE("postings match hand enumeration on the fixture") {
  const InvertedIndex index = build_index(hand_corpus());
  const auto* red = index.postings("red");
  REQUIRE(red != nullptr);
  REQUIRE(red->size() == 2);
  CHECK(index.doc_id((*red)[0].doc) == "d1");
  CHECK((*red)[0].tf == 2);
  CHECK(index.doc_id((*red)[1].doc) == "d2");
  CHECK((*red)[1].tf == 1);
  const auto* dog = index.postings("dog");
  REQUIRE(dog != nullptr);
  CHECK(dog->size() == 2);
  CHECK(index.postings("blue")->size() == 1);
  CHECK(index.postings("missing") == nullptr);
  CHECK(index.average_doc_length() == doctest::Approx(3.0));
}

TEST_CASE("bm25 scores equal the closed form on the fixture") {
  const InvertedIndex index = build_index(hand_corpus());
  const auto results = bm25_retrieve(index, {"red", "fox"}, 10);
  REQUIRE(results.size() == 3);
  // Frozen from independent evaluation of the scoring formula.
  CHECK(results[0].doc_id == "d1");
  CHECK(results[0].score == doctest::Approx(1.1162586194586221).epsilon(1e-9));
  CHECK(results[1].doc_id == "d2");
  CHECK(results[1].score == doctest::Approx(0.5442147286003255).epsilon(1e-9));
  CHECK(results[2].doc_id == "d3");
  CHECK(results[2].score == doctest::Approx(0.4136031937362474).epsilon(1e-9));
  CHECK(results[0].source == Source::PerspectiveA);
}

TEST_CASE("bm25 ignores query tokens absent from the corpus") {
  const InvertedIndex index = build_index(hand_corpus());
  const auto with = bm25_retrieve(index, {"red", "fox", "zzz"}, 10);
  const auto without = bm25_retrieve(index, {"red", "fox"}, 10);
  REQUIRE(with.size() == without.size());
  for (std::size_t i = 0; i < with.size(); ++i) {
    CHECK(with[i].doc_id == without[i].doc_id);
    CHECK(with[i].score == doctest::Approx(without[i].score).epsilon(1e-12));
  }
}

TEST_CASE("single matching document ranks first") {
  const Corpus corpus = make_corpus({{"d1", "needle here"}, {"d2", "other stuff"}});
  const auto results = bm25_retrieve(build_index(corpus), {"needle"}, 3);
  REQUIRE(results.size() == 1);
  CHECK(results[0].doc_id == "d1");
  CHECK(results[0].rank == 1);
}

TEST_CASE("cosine scores equal the hand computation on the fixture") {
  const InvertedIndex index = build_index(hand_corpus());
  const auto results = tfidf_cosine_retrieve(index, {"red", "fox"}, 10);
  REQUIRE(results.size() == 3);
  CHECK(results[0].doc_id == "d1");
  CHECK(results[0].score == doctest::Approx(0.9684388219443362).epsilon(1e-9));
  CHECK(results[1].doc_id == "d2");
  CHECK(results[1].score == doctest::Approx(0.5000000000000001).epsilon(1e-9));
  CHECK(results[2].doc_id == "d3");
  CHECK(results[2].score == doctest::Approx(0.2466061677718576).epsilon(1e-9));
  CHECK(results[0].source == Source::PerspectiveB);
}

TEST_CASE("cosine of a query equal to a document is one") {
  const Corpus corpus = make_corpus({{"d1", "x y x z"}, {"d2", "other words"}});
  const auto results = tfidf_cosine_retrieve(build_index(corpus), {"x", "y", "x", "z"}, 2);
  REQUIRE(!results.empty());
  CHECK(results[0].doc_id == "d1");
  CHECK(results[0].score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cosine returns nothing for unindexed queries") {
  const InvertedIndex index = build_index(hand_corpus());
  CHECK(tfidf_cosine_retrieve(index, {"nothing", "matches"}, 5).empty());
}

TEST_CASE("bm25 term score never decreases when a query token is added") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const double tf = 1.0 + static_cast<double>(rng.below(20));
    const double len = tf + static_cast<double>(rng.below(100));
    const double idf = 0.1 + 3.0 * rng.next_double();
    const double avgdl = 2.0 + 40.0 * rng.next_double();
    CHECK(bm25_term_score(tf + 1, len + 1, idf, avgdl) >=
          bm25_term_score(tf, len, idf, avgdl) - 1e-15);
  }
}

TEST_CASE("result lists keep ranks dense and scores non-increasing") {
  const auto dataset = generate_synthetic_dataset(5, 120, 20);
  const InvertedIndex index = build_index(dataset.corpus);
  for (const auto& query : dataset.queries) {
    for (const auto& results :
         {bm25_retrieve(index, tokenize(query.text), 7),
          tfidf_cosine_retrieve(index, tokenize(query.text), 7)}) {
      for (std::size_t i = 0; i < results.size(); ++i) {
        CHECK(results[i].rank == static_cast<int>(i + 1));
        if (i > 0) CHECK(results[i - 1].score >= results[i].score);
      }
    }
  }
}

TEST_CASE("the two perspectives disagree on some top-1 picks") {
  std::size_t disagreements = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto dataset = generate_synthetic_dataset(seed, 200, 40);
    const InvertedIndex index = build_index(dataset.corpus);
    for (const auto& query : dataset.queries) {
      const auto a = bm25_retrieve(index, tokenize(query.text), 1);
      const auto b = tfidf_cosine_retrieve(index, tokenize(query.text), 1);
      if (!a.empty() && !b.empty() && a[0].doc_id != b[0].doc_id) ++disagreements;
    }
  }
  CHECK(disagreements > 0);
}

TEST_CASE("retrievers are pure") {
  const auto dataset = generate_synthetic_dataset(2, 60, 10);
  const InvertedIndex index = build_index(dataset.corpus);
  const auto tokens = tokenize(dataset.queries[0].text);
  const auto first = bm25_retrieve(index, tokens, 5);
  const auto second = bm25_retrieve(index, tokens, 5);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].doc_id == second[i].doc_id);
    CHECK(first[i].score == second[i].score);
  }
}

}  // TEST_SUITE
