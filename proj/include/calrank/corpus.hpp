#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace calrank {

struct Document {
  std::string id;
  std::string title;
  std::string text;
  std::vector<std::string> tokens;  // tokenize(title + " " + text)
};

struct Query {
  std::string id;
  std::string text;
  std::optional<std::string> contrastive_text;
  std::vector<std::string> answers;
  std::vector<std::string> gold_doc_ids;
  std::unordered_map<std::string, int> label_per_doc;  // empty when not supplied
};

// Immutable after finalize(); safe for concurrent reads.
struct Corpus {
  std::vector<Document> documents;
  std::unordered_map<std::string, std::uint32_t> vocabulary;  // dense 0..V-1
  double average_doc_length = 0.0;

  std::size_t doc_count() const { return documents.size(); }
  const Document* find(std::string_view id) const;

  // Tokenizes documents and rebuilds vocabulary (first-occurrence order),
  // id lookup and length statistics. Throws InputError on duplicate ids.
  void finalize();

private:
  std::unordered_map<std::string, std::size_t> id_to_pos_;
};

// Lowercases and splits on maximal runs of characters outside Unicode
// categories L* and N*. Invalid UTF-8 bytes act as separators.
std::vector<std::string> tokenize(std::string_view text);

// JSON Lines: {"id": ..., "title": ..., "text": ...} per line.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

// JSON Lines: {"id", "query", "contrastive"?, "answers", "gold_ids", "labels"?}.
std::vector<Query> load_queries(const std::string& path);
void save_queries(const std::vector<Query>& queries, const std::string& path);

struct SynthOptions {
  std::size_t distractors_per_query = 4;  // topic-sharing decoys per query, corpus budget allowing
  std::size_t filler_min = 6;
  std::size_t filler_max = 18;
  std::size_t filler_pool = 40;
  double overlap_marker_rate = 0.5;  // fraction of decoys carrying the shared relevance marker
  std::size_t topic_repeat_max = 3;  // max term frequency of the topic token in a decoy
};

struct SyntheticDataset {
  Corpus corpus;
  std::vector<Query> queries;
};

// Deterministic given seed. Every query gets exactly one gold document whose
// title is the (unique) answer token and whose body leads with the query's
// topic token; decoy documents share the topic with varying term frequency.
SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_docs,
                                            std::size_t n_queries);
SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_docs,
                                            std::size_t n_queries, const SynthOptions& options);

}  // namespace calrank
