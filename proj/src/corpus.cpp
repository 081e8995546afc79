#include "calrank/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "calrank/errors.hpp"
#include "calrank/rng.hpp"

namespace calrank {

namespace {

struct CodepointRange {
  std::uint32_t lo, hi;
};
struct CasePair {
  std::uint32_t cp, lower;
};

#include "unicode_tables.inc"

bool is_alnum_codepoint(std::uint32_t cp) {
  const auto* begin = std::begin(kAlnumRanges);
  const auto* end = std::end(kAlnumRanges);
  auto it = std::upper_bound(begin, end, cp,
                             [](std::uint32_t v, const CodepointRange& r) { return v < r.lo; });
  return it != begin && cp <= (it - 1)->hi;
}

std::uint32_t lower_codepoint(std::uint32_t cp) {
  if (cp < 0x80) return (cp >= 'A' && cp <= 'Z') ? cp + 32 : cp;
  const auto* begin = std::begin(kLowerPairs);
  const auto* end = std::end(kLowerPairs);
  auto it = std::lower_bound(begin, end, cp,
                             [](const CasePair& p, std::uint32_t v) { return p.cp < v; });
  return (it != end && it->cp == cp) ? it->lower : cp;
}

// Decodes one UTF-8 codepoint at `i`, advancing it. Returns UINT32_MAX on a
// malformed byte (consumed one byte).
std::uint32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<std::uint8_t>(s[k]); };
  const std::uint8_t b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  std::uint32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return UINT32_MAX;
  }
  if (i + len > s.size()) {
    ++i;
    return UINT32_MAX;
  }
  for (int k = 1; k < len; ++k) {
    const std::uint8_t bk = byte(i + k);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return UINT32_MAX;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += len;
  if (cp > 0x10FFFF) return UINT32_MAX;
  return cp;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string pad_number(std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, n);
  return buf;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::uint32_t cp = decode_utf8(text, i);
    if (cp != UINT32_MAX && is_alnum_codepoint(cp)) {
      append_utf8(current, lower_codepoint(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

const Document* Corpus::find(std::string_view id) const {
  auto it = id_to_pos_.find(std::string(id));
  return it == id_to_pos_.end() ? nullptr : &documents[it->second];
}

void Corpus::finalize() {
  vocabulary.clear();
  id_to_pos_.clear();
  std::size_t total_tokens = 0;
  for (std::size_t pos = 0; pos < documents.size(); ++pos) {
    Document& doc = documents[pos];
    if (doc.id.empty()) throw InputError("document with empty id");
    if (!id_to_pos_.emplace(doc.id, pos).second)
      throw InputError("duplicate document id \"" + doc.id + "\"");
    doc.tokens = tokenize(doc.title + " " + doc.text);
    total_tokens += doc.tokens.size();
    for (const auto& tok : doc.tokens) {
      const auto next = static_cast<std::uint32_t>(vocabulary.size());
      vocabulary.emplace(tok, next);
    }
  }
  average_doc_length =
      documents.empty() ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(documents.size());
}

namespace {

nlohmann::json parse_line(const std::string& line, const std::string& path, std::size_t line_no) {
  nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
  if (record.is_discarded() || !record.is_object())
    throw InputError(path + ":" + std::to_string(line_no) + ": malformed record");
  return record;
}

std::string require_string(const nlohmann::json& record, const char* key, const std::string& path,
                           std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string())
    throw InputError(path + ":" + std::to_string(line_no) + ": missing string field \"" +
                     key + "\"");
  return it->get<std::string>();
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json record = parse_line(line, path, line_no);
    Document doc;
    doc.id = require_string(record, "id", path, line_no);
    doc.title = require_string(record, "title", path, line_no);
    doc.text = require_string(record, "text", path, line_no);
    corpus.documents.push_back(std::move(doc));
  }
  corpus.finalize();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write corpus file " + path);
  for (const auto& doc : corpus.documents) {
    nlohmann::json record{{"id", doc.id}, {"title", doc.title}, {"text", doc.text}};
    out << record.dump() << "\n";
  }
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open query file " + path);
  std::vector<Query> queries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json record = parse_line(line, path, line_no);
    Query query;
    query.id = require_string(record, "id", path, line_no);
    if (query.id.empty())
      throw InputError(path + ":" + std::to_string(line_no) + ": empty query id");
    query.text = require_string(record, "query", path, line_no);
    if (auto it = record.find("contrastive"); it != record.end() && it->is_string())
      query.contrastive_text = it->get<std::string>();
    if (auto it = record.find("answers"); it != record.end() && it->is_array())
      for (const auto& a : *it) query.answers.push_back(a.get<std::string>());
    if (auto it = record.find("gold_ids"); it != record.end() && it->is_array())
      for (const auto& g : *it) query.gold_doc_ids.push_back(g.get<std::string>());
    if (auto it = record.find("labels"); it != record.end() && it->is_object())
      for (const auto& [doc_id, label] : it->items())
        query.label_per_doc[doc_id] = label.get<int>();
    queries.push_back(std::move(query));
  }
  return queries;
}

void save_queries(const std::vector<Query>& queries, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write query file " + path);
  for (const auto& query : queries) {
    nlohmann::json record{{"id", query.id},
                          {"query", query.text},
                          {"answers", query.answers},
                          {"gold_ids", query.gold_doc_ids}};
    if (query.contrastive_text) record["contrastive"] = *query.contrastive_text;
    if (!query.label_per_doc.empty()) {
      std::vector<std::pair<std::string, int>> sorted(query.label_per_doc.begin(),
                                                      query.label_per_doc.end());
      std::sort(sorted.begin(), sorted.end());
      nlohmann::json labels = nlohmann::json::object();
      for (const auto& [doc_id, label] : sorted) labels[doc_id] = label;
      record["labels"] = labels;
    }
    out << record.dump() << "\n";
  }
}

SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_docs,
                                            std::size_t n_queries) {
  return generate_synthetic_dataset(seed, n_docs, n_queries, SynthOptions{});
}

SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_docs,
                                            std::size_t n_queries, const SynthOptions& options) {
  if (n_queries < 1 || n_docs < n_queries)
    throw InputError("generate_synthetic_dataset requires n_docs >= n_queries >= 1");
  if (options.filler_max < options.filler_min || options.filler_pool == 0)
    throw InputError("generate_synthetic_dataset: bad filler options");

  Rng rng(seed);
  const int width = static_cast<int>(std::to_string(n_docs).size());

  const auto filler = [&](std::size_t k) { return "filler" + pad_number(k, 2); };
  const auto random_filler = [&] { return filler(rng.below(options.filler_pool)); };

  // Seeded permutation of document slots; gold assignments move with the seed.
  std::vector<std::size_t> slot(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) slot[i] = i;
  for (std::size_t i = n_docs - 1; i > 0; --i)
    std::swap(slot[i], slot[rng.below(i + 1)]);

  std::vector<Document> docs(n_docs);
  std::vector<Query> queries(n_queries);

  const auto doc_id = [&](std::size_t s) { return "d" + pad_number(s, width); };

  std::size_t next_free = n_queries;  // slots [0, n_queries) of the permutation hold golds
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    const std::string topic = "topic" + pad_number(qi, 3);
    const std::string answer = "answer" + pad_number(qi, 3);
    const std::size_t gold_slot = slot[qi];

    std::vector<std::string> body{topic, "relmark"};
    const std::size_t n_fill =
        options.filler_min + rng.below(options.filler_max - options.filler_min + 1);
    for (std::size_t k = 0; k < n_fill; ++k) body.push_back(random_filler());
    std::string text;
    for (const auto& tok : body) {
      if (!text.empty()) text += " ";
      text += tok;
    }
    // Title is the answer token: the gold page is named after its answer, and
    // document tokens therefore lead with it.
    docs[gold_slot] = Document{doc_id(gold_slot), answer, text, {}};

    Query& query = queries[qi];
    query.id = "q" + pad_number(qi, 3);
    query.text = "which artist performs " + topic;
    query.contrastive_text = "which artist performed the original " + topic;
    query.answers = {answer};
    query.gold_doc_ids = {doc_id(gold_slot)};
    query.label_per_doc[doc_id(gold_slot)] = 1;
  }

  // Topic-sharing decoys, dealt round-robin while document budget lasts.
  for (std::size_t round = 0; round < options.distractors_per_query; ++round) {
    for (std::size_t qi = 0; qi < n_queries && next_free < n_docs; ++qi, ++next_free) {
      const std::string topic = "topic" + pad_number(qi, 3);
      const std::size_t s = slot[next_free];
      const std::size_t tf = 1 + rng.below(options.topic_repeat_max);
      std::vector<std::string> body;
      const std::size_t n_fill =
          options.filler_min + rng.below(options.filler_max - options.filler_min + 1);
      for (std::size_t k = 0; k < n_fill; ++k) body.push_back(random_filler());
      if (rng.bernoulli(options.overlap_marker_rate)) body.push_back("relmark");
      for (std::size_t k = 0; k < tf; ++k) body.push_back(topic);
      for (std::size_t i = body.size() - 1; i > 0; --i)
        std::swap(body[i], body[rng.below(i + 1)]);
      std::string text;
      for (const auto& tok : body) {
        if (!text.empty()) text += " ";
        text += tok;
      }
      docs[s] = Document{doc_id(s), "page " + pad_number(s, width), text, {}};
      queries[qi].label_per_doc[doc_id(s)] = 0;
    }
  }

  // Whatever budget remains becomes filler-only pages.
  for (; next_free < n_docs; ++next_free) {
    const std::size_t s = slot[next_free];
    std::string text;
    const std::size_t n_fill =
        options.filler_min + rng.below(options.filler_max - options.filler_min + 1);
    for (std::size_t k = 0; k < n_fill; ++k) {
      if (!text.empty()) text += " ";
      text += random_filler();
    }
    docs[s] = Document{doc_id(s), "page " + pad_number(s, width), text, {}};
  }

  SyntheticDataset dataset;
  dataset.corpus.documents = std::move(docs);
  dataset.corpus.finalize();
  dataset.queries = std::move(queries);
  return dataset;
}

}  // namespace calrank
