#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "calrank/calibration.hpp"
#include "calrank/corpus.hpp"
#include "calrank/reranker.hpp"
#include "calrank/retrieval.hpp"

namespace calrank {

enum class ExplainMethod { Lime, KernelShap };

// Value of one coalition of interpretable features (kept = true).
using CoalitionValue = std::function<double(const std::vector<bool>& mask)>;

// Model output for one encoded (query, context) pair.
using PairScorer = std::function<ProbabilityDistribution(const InputVector&)>;

PairScorer scorer_of(const RerankerModel& model);
PairScorer scorer_of(const CalibratedPredictor& predictor);

struct PerturbationSample {
  std::vector<bool> mask;
  double model_output = 0.0;
  double proximity_weight = 0.0;
};

struct Explanation {
  std::vector<std::pair<std::string, double>> weights;  // token -> importance
  double intercept = 0.0;
  ExplainMethod method = ExplainMethod::Lime;
  std::string context_id;
  bool positive_class = true;
  bool used_pseudo_inverse = false;  // singular system fell back to a pseudo-inverse fit
};

struct LimeOptions {
  std::size_t n_samples = 150;
  std::size_t n_features = 10;
  double kernel_width = 0.0;  // <= 0 picks 0.25 * sqrt(d)
  double ridge_penalty = 1.0;
  std::uint64_t seed = 0;
};

struct KernelShapOptions {
  std::size_t n_samples = 2048;
  std::uint64_t seed = 0;
  bool force_sampling = false;  // exercise the sampling estimator even when
                                // enumeration would be exact
};

// Distinct tokens in first-occurrence order: the interpretable units of a
// context. Duplicated tokens collapse to one feature.
std::vector<std::string> interpretable_tokens(const std::vector<std::string>& context_tokens);

// Weighted ridge surrogate over random keep/drop masks; mask proximity is
// cosine distance to the all-ones mask. Features are selected by coefficient
// magnitude from a full fit, then refit.
Explanation lime_fit(const CoalitionValue& value, const std::vector<std::string>& feature_names,
                     const LimeOptions& options,
                     std::vector<PerturbationSample>* samples_out = nullptr);

// Shapley-kernel weighted least squares with the efficiency constraint
// eliminated; enumerates every coalition when 2^d <= 2 * n_samples.
Explanation kernel_shap_fit(const CoalitionValue& value,
                            const std::vector<std::string>& feature_names,
                            const KernelShapOptions& options);

// Brute-force Shapley values by coalition enumeration; d <= 12.
std::vector<double> exact_shapley(const CoalitionValue& value, std::size_t d);

Explanation lime_explain(const PairScorer& scorer, const Query& query, const Document& context,
                         const std::unordered_map<std::string, std::uint32_t>& vocab,
                         const VocabBinding& binding, const LimeOptions& options);

Explanation kernel_shap_explain(const PairScorer& scorer, const Query& query,
                                const Document& context,
                                const std::unordered_map<std::string, std::uint32_t>& vocab,
                                const VocabBinding& binding, const KernelShapOptions& options);

struct FeatureScoreTable {
  std::unordered_map<std::string, double> scores;  // token -> summed importance
  std::vector<std::string> provenance;             // contributing context ids
  ExplainMethod method = ExplainMethod::Lime;

  double score_of(const std::vector<std::string>& tokens) const;
};

FeatureScoreTable build_feature_score_table(const std::vector<Explanation>& explanations);

struct RankedCandidate {
  const Document* doc = nullptr;
  RetrievalResult base;
};

// Sorts candidates by summed table score of their distinct tokens, descending;
// ties fall back to the original rank, then doc id. Returns top min(k, n).
std::vector<RankedCandidate> rerank_by_feature_scores(const FeatureScoreTable& table,
                                                      const std::vector<RankedCandidate>& candidates,
                                                      std::size_t k = 10);

struct ExplainBudgets {
  std::size_t lime_contexts = 5;  // explanations come from this many top candidates
  std::size_t shap_contexts = 1;
  std::size_t rerank_depth = 10;
  LimeOptions lime;
  KernelShapOptions shap;
};

std::vector<RankedCandidate> explainer_rerank_pipeline(
    const PairScorer& scorer, const Query& query, const std::vector<RankedCandidate>& candidates,
    ExplainMethod method, const ExplainBudgets& budgets,
    const std::unordered_map<std::string, std::uint32_t>& vocab, const VocabBinding& binding,
    FeatureScoreTable* table_out = nullptr);

// Newline-delimited export: {query_id, context_id, method, token, weight}.
void export_explanations(const std::vector<std::pair<std::string, Explanation>>& by_query,
                         const std::string& path);

}  // namespace calrank
