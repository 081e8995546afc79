#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "calrank/corpus.hpp"
#include "calrank/errors.hpp"
#include "calrank/rng.hpp"

using namespace calrank;

namespace {

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << contents;
  return path;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& tok : tokens) {
    if (!out.empty()) out += " ";
    out += tok;
  }
  return out;
}

std::string dataset_fingerprint(const SyntheticDataset& dataset) {
  const auto corpus_path = (std::filesystem::temp_directory_path() / "fp_corpus.jsonl").string();
  const auto query_path = (std::filesystem::temp_directory_path() / "fp_queries.jsonl").string();
  save_corpus(dataset.corpus, corpus_path);
  save_queries(dataset.queries, query_path);
  std::stringstream buffer;
  buffer << std::ifstream(corpus_path).rdbuf() << std::ifstream(query_path).rdbuf();
  std::remove(corpus_path.c_str());
  std::remove(query_path.c_str());
  return buffer.str();
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("tokenize lowercases and splits on punctuation") {
  CHECK(tokenize("The Chainsmokers!") == std::vector<std::string>{"the", "chainsmokers"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("a-b  c") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("tokenize handles non-ascii letters and digits") {
  CHECK(tokenize("Ärzte im Café") == std::vector<std::string>{"ärzte", "im", "café"});
  CHECK(tokenize("π=3.14") == std::vector<std::string>{"π", "3", "14"});
  // Malformed UTF-8 bytes act as separators rather than crashing.
  CHECK(tokenize("ab\xffzz") == std::vector<std::string>{"ab", "zz"});
}

TEST_CASE("tokenize is idempotent over its own output") {
  Rng rng(41);
  const std::string alphabet = "abcXYZ 0129!?-_.,;\xc3\xa4\xc3\x9c\xe2\x82\xac";
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t len = rng.below(40);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.below(alphabet.size())];
    const auto once = tokenize(text);
    CHECK(tokenize(join(once)) == once);
  }
}

TEST_CASE("load_corpus parses records and computes statistics") {
  const auto path = temp_file(
      "corpus_ok.jsonl",
      R"({"id":"d1","title":"one","text":"alpha"})" "\n"
      R"({"id":"d2","title":"two","text":"beta gamma"})" "\n");
  const Corpus corpus = load_corpus(path);
  CHECK(corpus.doc_count() == 2);
  CHECK(corpus.find("d1") != nullptr);
  CHECK(corpus.find("nope") == nullptr);
}

TEST_CASE("load_corpus reports average doc length") {
  const auto path = temp_file(
      "corpus_len.jsonl",
      R"({"id":"a","title":"","text":"t1 t2"})" "\n"
      R"({"id":"b","title":"","text":"t1 t2 t3 t4"})" "\n"
      R"({"id":"c","title":"","text":"t1 t2 t3 t4 t5 t6"})" "\n");
  CHECK(load_corpus(path).average_doc_length == doctest::Approx(4.0));
}

TEST_CASE("load_corpus names the offending line and id") {
  const auto bad_line = temp_file("corpus_bad.jsonl",
                                  R"({"id":"d1","title":"","text":"x"})" "\nnot json\n");
  CHECK_THROWS_WITH_AS(load_corpus(bad_line), doctest::Contains(":2"), InputError);

  const auto dup = temp_file("corpus_dup.jsonl",
                             R"({"id":"d1","title":"","text":"x"})" "\n"
                             R"({"id":"d1","title":"","text":"y"})" "\n");
  CHECK_THROWS_WITH_AS(load_corpus(dup), doctest::Contains("d1"), InputError);
}

TEST_CASE("vocabulary round trips every document token") {
  const auto dataset = generate_synthetic_dataset(3, 40, 8);
  const auto& vocab = dataset.corpus.vocabulary;
  std::set<std::uint32_t> indices;
  for (const auto& [token, index] : vocab) indices.insert(index);
  REQUIRE(indices.size() == vocab.size());
  CHECK(*indices.begin() == 0);
  CHECK(*indices.rbegin() == vocab.size() - 1);
  for (const auto& doc : dataset.corpus.documents)
    for (const auto& tok : doc.tokens) CHECK(vocab.count(tok) == 1);
}

TEST_CASE("synthetic generation is deterministic per seed") {
  const auto first = generate_synthetic_dataset(7, 50, 10);
  const auto second = generate_synthetic_dataset(7, 50, 10);
  CHECK(dataset_fingerprint(first) == dataset_fingerprint(second));

  const auto other_seed = generate_synthetic_dataset(8, 50, 10);
  std::vector<std::string> golds7, golds8;
  for (const auto& q : first.queries) golds7.push_back(q.gold_doc_ids.front());
  for (const auto& q : other_seed.queries) golds8.push_back(q.gold_doc_ids.front());
  CHECK(golds7 != golds8);
}

TEST_CASE("every gold document contains its query's answer tokens") {
  const auto dataset = generate_synthetic_dataset(7, 50, 10);
  for (const auto& query : dataset.queries) {
    REQUIRE(query.gold_doc_ids.size() == 1);
    const Document* gold = dataset.corpus.find(query.gold_doc_ids.front());
    REQUIRE(gold != nullptr);
    for (const auto& answer : query.answers)
      for (const auto& tok : tokenize(answer))
        CHECK(std::count(gold->tokens.begin(), gold->tokens.end(), tok) > 0);
    CHECK(query.contrastive_text.has_value());
  }
}

TEST_CASE("synthetic generation validates its preconditions") {
  CHECK_THROWS_AS(generate_synthetic_dataset(1, 5, 10), InputError);
  CHECK_THROWS_AS(generate_synthetic_dataset(1, 5, 0), InputError);
}

TEST_CASE("query loader round trips optional fields") {
  std::vector<Query> queries(1);
  queries[0].id = "q1";
  queries[0].text = "who sang this";
  queries[0].contrastive_text = "who did not sing this";
  queries[0].answers = {"somebody"};
  queries[0].gold_doc_ids = {"d4"};
  queries[0].label_per_doc = {{"d4", 1}, {"d9", 0}};
  const auto path = (std::filesystem::temp_directory_path() / "queries_rt.jsonl").string();
  save_queries(queries, path);
  const auto loaded = load_queries(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id == "q1");
  CHECK(loaded[0].contrastive_text == queries[0].contrastive_text);
  CHECK(loaded[0].answers == queries[0].answers);
  CHECK(loaded[0].gold_doc_ids == queries[0].gold_doc_ids);
  CHECK(loaded[0].label_per_doc == queries[0].label_per_doc);
}

}  // TEST_SUITE
