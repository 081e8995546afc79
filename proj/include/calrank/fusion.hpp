#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "calrank/corpus.hpp"

namespace calrank {

// Parsed form of a split string such as "3;2" or "2;2;1".
struct ContextSplit {
  std::vector<std::size_t> counts;

  static ContextSplit parse(const std::string& text);
  std::size_t total() const;
  std::string to_string() const;
};

// Jensen-Shannon divergence in nats: H((P+Q)/2) - (H(P) + H(Q))/2 with
// 0 ln 0 = 0. Inputs must be distributions normalized within 1e-9.
double jsd(std::span<const double> p, std::span<const double> q);

struct ImputationPair {
  double imputed_score = 0.0;  // g(x_i)
  double gold_score = 0.0;     // g(z_i)
  int label = 0;               // y_i in {0, 1}
};

// Mean binary cross-entropy of f against the labels plus lambda times the
// mean JSD between the two-component softmaxes of (g(x_i), g(z_i)).
// f values outside (0, 1) clamp at 1e-12 and set *clamped.
double jsd_regularized_loss(const std::vector<ImputationPair>& batch,
                            const std::vector<double>& f, double lambda,
                            bool* clamped = nullptr);

enum class SlotKind { Gold, Imputed, Placeholder };

struct ContextSlot {
  SlotKind kind = SlotKind::Placeholder;
  std::string context_id;  // empty for placeholders (query-only encoder input)
};

// Gold contexts fill positions 1..slots_per_side, imputed contexts the rest;
// short sides pad with query-only placeholders. Output length is exactly
// 2 * slots_per_side.
std::vector<ContextSlot> symmetric_imputation_batch(const std::vector<std::string>& gold_ids,
                                                    const std::vector<std::string>& imputed_ids,
                                                    std::size_t slots_per_side = 3);

struct DiscreteJoint {
  std::vector<std::vector<double>> counts;  // |X| x |Y|, nonnegative

  double total() const;
};

// Plug-in mutual information estimate in nats; zero-probability cells
// contribute zero.
double mutual_information(const DiscreteJoint& joint);

// Token-presence dependence between two retrieved context sets: one 2x2
// indicator joint over the union vocabulary of both sets.
double perspective_mi(const std::vector<const Document*>& side_a,
                      const std::vector<const Document*>& side_b);

// Takes the top counts[j] ids from list j in split order. Ids already merged
// are skipped and the slot backfilled from the same list; exhausted lists
// surrender their remaining slots.
std::vector<std::string> merge_contexts(const ContextSplit& split,
                                        const std::vector<std::vector<std::string>>& ranked_ids);

// Best span of length <= 5 by summed IDF of distinct query tokens inside a
// +-10 token window around (not inside) the span; ties resolve to the
// earliest span in merge order. Empty contexts give an empty answer.
std::string extractive_read(const std::vector<const Document*>& contexts,
                            const std::vector<std::string>& query_tokens,
                            const std::function<double(const std::string&)>& idf);

}  // namespace calrank
