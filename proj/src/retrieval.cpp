#include "calrank/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "calrank/errors.hpp"

namespace calrank {

InvertedIndex build_index(const Corpus& corpus) {
  if (corpus.documents.empty()) throw InputError("build_index: empty corpus");
  InvertedIndex index;
  index.doc_lengths_.reserve(corpus.doc_count());
  index.doc_ids_.reserve(corpus.doc_count());
  std::size_t total = 0;
  for (std::size_t pos = 0; pos < corpus.documents.size(); ++pos) {
    const Document& doc = corpus.documents[pos];
    index.doc_ids_.push_back(doc.id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(doc.tokens.size()));
    total += doc.tokens.size();
    std::map<std::string, std::uint32_t> tf;
    for (const auto& tok : doc.tokens) ++tf[tok];
    for (const auto& [tok, count] : tf)
      index.postings_[tok].push_back({static_cast<std::uint32_t>(pos), count});
  }
  index.average_doc_length_ = static_cast<double>(total) / static_cast<double>(corpus.doc_count());

  const double n = static_cast<double>(corpus.doc_count());
  for (const auto& [tok, plist] : index.postings_) {
    const double df = static_cast<double>(plist.size());
    index.idf_cache_[tok] = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
  }

  // Document ltf-idf norms for the cosine perspective.
  index.doc_norms_.assign(corpus.doc_count(), 0.0);
  for (const auto& [tok, plist] : index.postings_) {
    const double idf = index.idf_cache_.at(tok);
    for (const Posting& p : plist) {
      const double w = (1.0 + std::log(static_cast<double>(p.tf))) * idf;
      index.doc_norms_[p.doc] += w * w;
    }
  }
  for (double& norm : index.doc_norms_) norm = std::sqrt(norm);
  return index;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& token) const {
  auto it = postings_.find(token);
  return it == postings_.end() ? nullptr : &it->second;
}

double InvertedIndex::idf(const std::string& token) const {
  auto it = idf_cache_.find(token);
  if (it != idf_cache_.end()) return it->second;
  const double n = static_cast<double>(doc_count());
  return std::log((n + 0.5) / 0.5 + 1.0);
}

double bm25_term_score(double tf, double doc_len, double idf, double avgdl, double k1, double b) {
  return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avgdl));
}

namespace {

std::vector<std::string> distinct_in_order(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& tok : tokens)
    if (std::find(out.begin(), out.end(), tok) == out.end()) out.push_back(tok);
  return out;
}

std::vector<RetrievalResult> top_k(const InvertedIndex& index,
                                   const std::map<std::uint32_t, double>& scores, std::size_t k,
                                   Source source, QueryVariant variant) {
  std::vector<std::pair<std::uint32_t, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [&](const auto& lhs, const auto& rhs) {
    if (lhs.second != rhs.second) return lhs.second > rhs.second;
    return index.doc_id(lhs.first) < index.doc_id(rhs.first);
  });
  if (ranked.size() > k) ranked.resize(k);
  std::vector<RetrievalResult> results;
  results.reserve(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i)
    results.push_back({index.doc_id(ranked[i].first), ranked[i].second, static_cast<int>(i + 1),
                       source, variant});
  return results;
}

}  // namespace

std::vector<RetrievalResult> bm25_retrieve(const InvertedIndex& index,
                                           const std::vector<std::string>& query_tokens,
                                           std::size_t k, QueryVariant variant) {
  if (k < 1) throw InputError("bm25_retrieve: k must be >= 1");
  std::map<std::uint32_t, double> scores;
  for (const auto& tok : distinct_in_order(query_tokens)) {
    const auto* plist = index.postings(tok);
    if (!plist) continue;
    const double idf = index.idf(tok);
    for (const Posting& p : *plist)
      scores[p.doc] += bm25_term_score(p.tf, index.doc_length(p.doc), idf,
                                       index.average_doc_length());
  }
  return top_k(index, scores, k, Source::PerspectiveA, variant);
}

std::vector<RetrievalResult> tfidf_cosine_retrieve(const InvertedIndex& index,
                                                   const std::vector<std::string>& query_tokens,
                                                   std::size_t k, QueryVariant variant) {
  if (k < 1) throw InputError("tfidf_cosine_retrieve: k must be >= 1");
  std::map<std::string, std::uint32_t> query_tf;
  for (const auto& tok : query_tokens) ++query_tf[tok];

  double query_norm = 0.0;
  std::map<std::uint32_t, double> dots;
  for (const auto& [tok, qtf] : query_tf) {
    const double idf = index.idf(tok);
    const double qw = (1.0 + std::log(static_cast<double>(qtf))) * idf;
    query_norm += qw * qw;
    const auto* plist = index.postings(tok);
    if (!plist) continue;
    for (const Posting& p : *plist) {
      const double dw = (1.0 + std::log(static_cast<double>(p.tf))) * idf;
      dots[p.doc] += qw * dw;
    }
  }
  if (dots.empty()) return {};
  query_norm = std::sqrt(query_norm);
  std::map<std::uint32_t, double> scores;
  for (const auto& [doc, dot] : dots) {
    const double denom = query_norm * index.doc_norms_[doc];
    scores[doc] = denom > 0.0 ? dot / denom : 0.0;
  }
  return top_k(index, scores, k, Source::PerspectiveB, variant);
}

}  // namespace calrank
