#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "calrank/corpus.hpp"

namespace calrank {

enum class Source { PerspectiveA, PerspectiveB };
enum class QueryVariant { Original, Contrastive };

struct RetrievalResult {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based
  Source source = Source::PerspectiveA;
  QueryVariant query_variant = QueryVariant::Original;
};

struct Posting {
  std::uint32_t doc = 0;  // position in the corpus document list
  std::uint32_t tf = 0;
};

// Immutable after build_index(); concurrent retrieval is safe.
class InvertedIndex {
public:
  const std::vector<Posting>* postings(const std::string& token) const;
  // ln((N - df + 0.5) / (df + 0.5) + 1); tokens never indexed get df = 0.
  double idf(const std::string& token) const;
  std::uint32_t doc_length(std::size_t doc) const { return doc_lengths_[doc]; }
  const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }
  double average_doc_length() const { return average_doc_length_; }
  std::size_t doc_count() const { return doc_ids_.size(); }

  friend InvertedIndex build_index(const Corpus& corpus);

private:
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, double> idf_cache_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<std::string> doc_ids_;
  std::vector<double> doc_norms_;  // ltf-idf vector norms for cosine scoring
  double average_doc_length_ = 0.0;

  friend std::vector<RetrievalResult> tfidf_cosine_retrieve(const InvertedIndex&,
                                                            const std::vector<std::string>&,
                                                            std::size_t, QueryVariant);
};

InvertedIndex build_index(const Corpus& corpus);

inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;

// One term's BM25 contribution; exposed so tests can probe monotonicity.
double bm25_term_score(double tf, double doc_len, double idf, double avgdl,
                       double k1 = kBm25K1, double b = kBm25B);

// Perspective A. Distinct query tokens each contribute one BM25 term; only
// documents matching at least one token are candidates. Ties break by
// ascending doc id.
std::vector<RetrievalResult> bm25_retrieve(const InvertedIndex& index,
                                           const std::vector<std::string>& query_tokens,
                                           std::size_t k,
                                           QueryVariant variant = QueryVariant::Original);

// Perspective B: cosine between ltf-idf vectors (tf weight 1 + ln tf), same
// candidate and tie rules as BM25.
std::vector<RetrievalResult> tfidf_cosine_retrieve(const InvertedIndex& index,
                                                   const std::vector<std::string>& query_tokens,
                                                   std::size_t k,
                                                   QueryVariant variant = QueryVariant::Original);

}  // namespace calrank
