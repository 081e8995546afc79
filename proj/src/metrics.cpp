#include "calrank/metrics.hpp"

#include <algorithm>
#include <map>
#include <unordered_set>

#include "calrank/corpus.hpp"
#include "calrank/errors.hpp"

namespace calrank {

std::vector<std::string> normalize_answer_tokens(const std::string& text) {
  std::vector<std::string> tokens = tokenize(text);
  std::erase_if(tokens, [](const std::string& tok) {
    return tok == "a" || tok == "an" || tok == "the";
  });
  return tokens;
}

std::string normalize_answer(const std::string& text) {
  std::string out;
  for (const auto& tok : normalize_answer_tokens(text)) {
    if (!out.empty()) out += " ";
    out += tok;
  }
  return out;
}

int exact_match(const std::string& prediction, const std::vector<std::string>& gold_answers) {
  const std::string normalized = normalize_answer(prediction);
  for (const auto& gold : gold_answers)
    if (normalized == normalize_answer(gold)) return 1;
  return 0;
}

namespace {

double f1_of(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, std::size_t> gold_counts;
  for (const auto& tok : gold) ++gold_counts[tok];
  std::size_t overlap = 0;
  for (const auto& tok : pred) {
    auto it = gold_counts.find(tok);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double token_f1(const std::string& prediction, const std::vector<std::string>& gold_answers) {
  const auto pred = normalize_answer_tokens(prediction);
  double best = 0.0;
  for (const auto& gold : gold_answers)
    best = std::max(best, f1_of(pred, normalize_answer_tokens(gold)));
  return best;
}

double rouge_l(const std::string& prediction, const std::string& gold) {
  const auto pred = normalize_answer_tokens(prediction);
  const auto ref = normalize_answer_tokens(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;

  std::vector<std::size_t> previous(ref.size() + 1, 0), current(ref.size() + 1, 0);
  for (std::size_t i = 1; i <= pred.size(); ++i) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      current[j] = pred[i - 1] == ref[j - 1] ? previous[j - 1] + 1
                                             : std::max(previous[j], current[j - 1]);
    }
    std::swap(previous, current);
  }
  const auto lcs = static_cast<double>(previous[ref.size()]);
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(pred.size());
  const double recall = lcs / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

double recall_at_k(const std::vector<std::string>& retrieved_ids,
                   const std::vector<std::string>& gold_ids, std::size_t k) {
  if (k < 1) throw InputError("recall_at_k: k must be >= 1");
  if (gold_ids.empty()) return 0.0;
  const std::unordered_set<std::string> gold(gold_ids.begin(), gold_ids.end());
  std::size_t found = 0;
  for (std::size_t i = 0; i < std::min(k, retrieved_ids.size()); ++i)
    if (gold.count(retrieved_ids[i])) ++found;
  return static_cast<double>(found) / static_cast<double>(gold.size());
}

double r_precision(const std::vector<std::string>& retrieved_ids,
                   const std::vector<std::string>& gold_ids) {
  if (gold_ids.empty()) return 0.0;
  const std::unordered_set<std::string> gold(gold_ids.begin(), gold_ids.end());
  std::size_t found = 0;
  for (std::size_t i = 0; i < std::min(gold_ids.size(), retrieved_ids.size()); ++i)
    if (gold.count(retrieved_ids[i])) ++found;
  return static_cast<double>(found) / static_cast<double>(gold_ids.size());
}

double accuracy(const std::vector<int>& predicted_labels, const std::vector<int>& gold_labels) {
  if (predicted_labels.size() != gold_labels.size() || predicted_labels.empty())
    throw InputError("accuracy: label lists must align and be nonempty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted_labels.size(); ++i)
    if (predicted_labels[i] == gold_labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predicted_labels.size());
}

}  // namespace calrank
