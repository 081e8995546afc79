#pragma once

#include <string>
#include <vector>

namespace calrank {

// Shared answer normalizer: lowercase, strip punctuation, collapse
// whitespace, drop the articles a/an/the.
std::string normalize_answer(const std::string& text);
std::vector<std::string> normalize_answer_tokens(const std::string& text);

int exact_match(const std::string& prediction, const std::vector<std::string>& gold_answers);

// Max over gold answers of the harmonic precision/recall mean on normalized
// token multisets. Both sides empty -> 1, exactly one empty -> 0.
double token_f1(const std::string& prediction, const std::vector<std::string>& gold_answers);

// LCS F-measure (beta = 1) over normalized tokens.
double rouge_l(const std::string& prediction, const std::string& gold);

double recall_at_k(const std::vector<std::string>& retrieved_ids,
                   const std::vector<std::string>& gold_ids, std::size_t k);

double r_precision(const std::vector<std::string>& retrieved_ids,
                   const std::vector<std::string>& gold_ids);

double accuracy(const std::vector<int>& predicted_labels, const std::vector<int>& gold_labels);

}  // namespace calrank
