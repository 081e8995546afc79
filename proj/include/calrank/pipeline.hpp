#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calrank/calibration.hpp"
#include "calrank/corpus.hpp"
#include "calrank/explain.hpp"
#include "calrank/fusion.hpp"
#include "calrank/retrieval.hpp"

namespace calrank {

struct PipelineConfig {
  std::string corpus_path;
  std::string query_path;
  std::size_t retrieval_k = 10;

  CalibrationMethod calibration = CalibrationMethod::None;
  TrainingConfig training;
  std::uint32_t hidden_dim = 32;
  double dropout_rate = 0.0;  // MC dropout runs default to 0.1 in from_json
  std::size_t ensemble_size = 3;
  std::size_t use_last = 3;
  SwaWindow swa_window = SwaWindow::last_fraction(0.3);
  std::size_t mc_samples = 3;

  std::string explainer = "none";  // none | lime | shap
  ExplainBudgets budgets;

  std::string split = "3;2";
  double lambda = 1.0;  // JSD weight for the imputation-loss diagnostic
  std::size_t negatives_per_query = 4;

  std::uint64_t seed = 0;
  std::string output_path;
  std::string predictor_in;   // skip training, load this predictor
  std::string predictor_out;  // save the trained predictor

  // Flat JSON document; unknown keys rejected.
  static PipelineConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct QueryRecord {
  std::string query_id;
  std::vector<std::string> gold_ids;
  std::vector<std::string> retrieved_a, retrieved_b, retrieved_contrastive;
  std::vector<std::string> reranked_a, reranked_b;
  std::vector<std::string> merged;
  std::string answer;
  double em = 0.0, f1 = 0.0, rouge = 0.0;
  double recall5_a = 0.0, recall5_b = 0.0, recall5_merged = 0.0;
  double r_precision_merged = 0.0;
  double mi = 0.0;
  double imputation_loss = 0.0;  // 0 when the query has no gold/imputed pair
  std::size_t table_size = 0;
  int gold_rank_base = 0;   // 1-based position in perspective A's reranked list, 0 = absent
  int gold_rank_final = 0;  // after the explainer pass (equals base when disabled)
};

struct RunReport {
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  std::vector<QueryRecord> per_query;

  double em = 0.0, f1 = 0.0, rouge = 0.0, accuracy = 0.0;
  bool accuracy_is_stand_in = true;  // accuracy of the extractive answer, not a reader label
  double recall5_a = 0.0, recall5_b = 0.0, recall5_merged = 0.0;
  double r_precision_merged = 0.0;
  double mean_gold_rank_base = 0.0, mean_gold_rank_final = 0.0;
  double mean_mi = 0.0;
  double imputation_loss = 0.0;  // Eq-style gold/imputed diagnostic at the configured lambda

  std::vector<std::string> completed_stages;
  std::vector<std::pair<std::string, double>> stage_seconds;
};

nlohmann::json report_to_json(const RunReport& report, bool include_timings = true);
// One JSON document; the per-query section is one record per line.
void write_report(const RunReport& report, const std::string& path);

// Positive pairs from gold ids (and explicit 1-labels), negatives from
// 0-labels topped up with retrieved non-gold candidates.
std::vector<Example> build_training_examples(const Corpus& corpus,
                                             const std::vector<Query>& queries,
                                             const InvertedIndex& index,
                                             const VocabBinding& binding,
                                             std::size_t negatives_per_query);

CalibratedPredictor train_calibrated(const PipelineConfig& config, const Corpus& corpus,
                                     const std::vector<Example>& examples);

// Predictor-scored ordering of retrieved candidates; ties break by base rank
// then doc id.
std::vector<RankedCandidate> rerank_candidates(const CalibratedPredictor& predictor,
                                               const Query& query,
                                               const std::vector<RetrievalResult>& retrieved,
                                               const Corpus& corpus);

RunReport run_pipeline(const PipelineConfig& config);
RunReport run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                       const std::vector<Query>& queries);

}  // namespace calrank
