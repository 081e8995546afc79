#include "calrank/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "calrank/errors.hpp"
#include "calrank/metrics.hpp"
#include "calrank/rng.hpp"

namespace calrank {

namespace {

CalibrationMethod method_from_string(const std::string& name) {
  if (name == "none") return CalibrationMethod::None;
  if (name == "deep") return CalibrationMethod::DeepEnsemble;
  if (name == "snapshot") return CalibrationMethod::SnapshotEnsemble;
  if (name == "swa") return CalibrationMethod::Swa;
  if (name == "mcdropout") return CalibrationMethod::McDropout;
  throw InputError("unknown calibration method \"" + name + "\"");
}

std::string method_to_string(CalibrationMethod method) {
  switch (method) {
    case CalibrationMethod::None: return "none";
    case CalibrationMethod::DeepEnsemble: return "deep";
    case CalibrationMethod::SnapshotEnsemble: return "snapshot";
    case CalibrationMethod::Swa: return "swa";
    case CalibrationMethod::McDropout: return "mcdropout";
  }
  return "none";
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
  static const std::set<std::string> known{
      "corpus", "queries", "k", "calibration", "ensemble_size", "use_last", "swa_window",
      "swa_fraction", "mc_samples", "hidden_dim", "dropout_rate", "learning_rate", "epochs",
      "batch_size", "schedule", "cycles", "weight_decay", "explainer", "lime_samples",
      "lime_features", "shap_samples", "explain_budget", "rerank_depth", "split", "lambda",
      "negatives_per_query", "seed", "output", "predictor_in", "predictor_out"};
  for (const auto& [key, value] : doc.items())
    if (!known.count(key)) throw InputError("unknown config key \"" + key + "\"");

  PipelineConfig config;
  const auto get = [&](const char* key, auto fallback) {
    using T = decltype(fallback);
    auto it = doc.find(key);
    return it == doc.end() ? fallback : it->get<T>();
  };

  config.corpus_path = get("corpus", std::string{});
  config.query_path = get("queries", std::string{});
  config.retrieval_k = get("k", std::size_t{10});
  config.calibration = method_from_string(get("calibration", std::string{"none"}));
  config.ensemble_size = get("ensemble_size", std::size_t{3});
  config.use_last = get("use_last", std::size_t{3});
  const std::string window = get("swa_window", std::string{"last_fraction"});
  const double fraction = get("swa_fraction", 0.3);
  if (window == "full")
    config.swa_window = SwaWindow::full();
  else if (window == "last_fraction")
    config.swa_window = SwaWindow::last_fraction(fraction);
  else
    throw InputError("unknown swa_window \"" + window + "\"");
  config.mc_samples = get("mc_samples", std::size_t{3});
  config.hidden_dim = get("hidden_dim", std::uint32_t{32});
  if (doc.contains("dropout_rate"))
    config.dropout_rate = doc.at("dropout_rate").get<double>();
  else
    config.dropout_rate = config.calibration == CalibrationMethod::McDropout ? 0.1 : 0.0;
  config.training.learning_rate = get("learning_rate", 1e-2);
  config.training.epochs = get("epochs", std::size_t{4});
  config.training.batch_size = get("batch_size", std::size_t{8});
  const std::string schedule = get("schedule", std::string{"constant"});
  if (schedule == "constant")
    config.training.schedule = Schedule::Constant;
  else if (schedule == "cyclic")
    config.training.schedule = Schedule::CyclicAnnealing;
  else
    throw InputError("unknown schedule \"" + schedule + "\"");
  config.training.cycles = get("cycles", std::size_t{3});
  config.training.weight_decay = get("weight_decay", 0.0);
  config.explainer = get("explainer", std::string{"none"});
  if (config.explainer != "none" && config.explainer != "lime" && config.explainer != "shap")
    throw InputError("unknown explainer \"" + config.explainer + "\"");
  config.budgets.lime.n_samples = get("lime_samples", std::size_t{150});
  config.budgets.lime.n_features = get("lime_features", std::size_t{10});
  config.budgets.shap.n_samples = get("shap_samples", std::size_t{2048});
  if (doc.contains("explain_budget")) {
    const auto budget = doc.at("explain_budget").get<std::size_t>();
    config.budgets.lime_contexts = budget;
    config.budgets.shap_contexts = budget;
  }
  config.budgets.rerank_depth = get("rerank_depth", std::size_t{10});
  config.split = get("split", std::string{"3;2"});
  ContextSplit::parse(config.split);  // validate early
  config.lambda = get("lambda", 1.0);
  config.negatives_per_query = get("negatives_per_query", std::size_t{4});
  config.seed = get("seed", std::uint64_t{0});
  config.output_path = get("output", std::string{});
  config.predictor_in = get("predictor_in", std::string{});
  config.predictor_out = get("predictor_out", std::string{});
  return config;
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json doc{
      {"corpus", corpus_path},
      {"queries", query_path},
      {"k", retrieval_k},
      {"calibration", method_to_string(calibration)},
      {"ensemble_size", ensemble_size},
      {"use_last", use_last},
      {"swa_window",
       swa_window.kind == SwaWindow::Kind::FullTrajectory ? "full" : "last_fraction"},
      {"swa_fraction", swa_window.fraction},
      {"mc_samples", mc_samples},
      {"hidden_dim", hidden_dim},
      {"dropout_rate", dropout_rate},
      {"learning_rate", training.learning_rate},
      {"epochs", training.epochs},
      {"batch_size", training.batch_size},
      {"schedule", training.schedule == Schedule::Constant ? "constant" : "cyclic"},
      {"cycles", training.cycles},
      {"weight_decay", training.weight_decay},
      {"explainer", explainer},
      {"lime_samples", budgets.lime.n_samples},
      {"lime_features", budgets.lime.n_features},
      {"shap_samples", budgets.shap.n_samples},
      {"rerank_depth", budgets.rerank_depth},
      {"split", split},
      {"lambda", lambda},
      {"negatives_per_query", negatives_per_query},
      {"seed", seed},
      {"output", output_path},
  };
  if (!predictor_in.empty()) doc["predictor_in"] = predictor_in;
  if (!predictor_out.empty()) doc["predictor_out"] = predictor_out;
  return doc;
}

std::vector<Example> build_training_examples(const Corpus& corpus,
                                             const std::vector<Query>& queries,
                                             const InvertedIndex& index,
                                             const VocabBinding& binding,
                                             std::size_t negatives_per_query) {
  std::vector<Example> examples;
  for (const Query& query : queries) {
    std::unordered_set<std::string> used;
    for (const auto& gold_id : query.gold_doc_ids) {
      const Document* doc = corpus.find(gold_id);
      if (!doc)
        throw InputError("query " + query.id + ": gold doc " + gold_id + " not in corpus");
      examples.push_back({encode_pair(query, *doc, corpus.vocabulary, binding), 1});
      used.insert(gold_id);
    }
    // Explicit labels first (sorted for determinism), then retrieved non-gold.
    std::vector<std::pair<std::string, int>> labeled(query.label_per_doc.begin(),
                                                     query.label_per_doc.end());
    std::sort(labeled.begin(), labeled.end());
    std::size_t negatives = 0;
    for (const auto& [doc_id, label] : labeled) {
      if (label != 0 || used.count(doc_id) || negatives == negatives_per_query) continue;
      const Document* doc = corpus.find(doc_id);
      if (!doc) throw InputError("query " + query.id + ": labeled doc " + doc_id + " not in corpus");
      examples.push_back({encode_pair(query, *doc, corpus.vocabulary, binding), 0});
      used.insert(doc_id);
      ++negatives;
    }
    if (negatives < negatives_per_query) {
      const auto query_tokens = tokenize(query.text);
      for (const auto& result : bm25_retrieve(index, query_tokens, negatives_per_query + 2)) {
        if (negatives == negatives_per_query) break;
        if (used.count(result.doc_id)) continue;
        examples.push_back(
            {encode_pair(query, *corpus.find(result.doc_id), corpus.vocabulary, binding), 0});
        used.insert(result.doc_id);
        ++negatives;
      }
    }
  }
  if (examples.empty()) throw InputError("no training examples derivable from the query set");
  return examples;
}

CalibratedPredictor train_calibrated(const PipelineConfig& config, const Corpus& corpus,
                                     const std::vector<Example>& examples) {
  ModelSpec spec;
  spec.vocab_size = static_cast<std::uint32_t>(corpus.vocabulary.size());
  spec.hidden_dim = config.hidden_dim;
  spec.dropout_rate = config.dropout_rate;

  EnsembleConfig ensemble;
  ensemble.method = config.calibration;
  ensemble.base = config.training;
  ensemble.base.seed = derive_seed(config.seed, 1);
  ensemble.ensemble_size = config.ensemble_size;
  for (std::size_t m = 0; m < config.ensemble_size; ++m)
    ensemble.seeds.push_back(derive_seed(config.seed, 100 + m));
  ensemble.use_last = config.use_last;
  ensemble.window = config.swa_window;
  ensemble.mc_samples = config.mc_samples;
  ensemble.mc_seed = derive_seed(config.seed, 2);
  return train_calibrated(spec, examples, ensemble);
}

std::vector<RankedCandidate> rerank_candidates(const CalibratedPredictor& predictor,
                                               const Query& query,
                                               const std::vector<RetrievalResult>& retrieved,
                                               const Corpus& corpus) {
  const VocabBinding& binding = predictor.members.front().binding;
  struct Scored {
    double positive;
    const RetrievalResult* base;
    const Document* doc;
  };
  std::vector<Scored> scored;
  scored.reserve(retrieved.size());
  for (const RetrievalResult& result : retrieved) {
    const Document* doc = corpus.find(result.doc_id);
    if (!doc) throw InputError("reranker: retrieved doc " + result.doc_id + " not in corpus");
    const InputVector input = encode_pair(query, *doc, corpus.vocabulary, binding);
    scored.push_back({predictor.predict(input).probabilities[1], &result, doc});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& lhs, const Scored& rhs) {
    if (lhs.positive != rhs.positive) return lhs.positive > rhs.positive;
    if (lhs.base->rank != rhs.base->rank) return lhs.base->rank < rhs.base->rank;
    return lhs.doc->id < rhs.doc->id;
  });
  std::vector<RankedCandidate> out;
  out.reserve(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    RetrievalResult base = *scored[i].base;
    base.rank = static_cast<int>(i + 1);
    base.score = scored[i].positive;
    out.push_back({scored[i].doc, base});
  }
  return out;
}

namespace {

std::vector<std::string> ids_of(const std::vector<RankedCandidate>& candidates) {
  std::vector<std::string> ids;
  ids.reserve(candidates.size());
  for (const auto& c : candidates) ids.push_back(c.doc->id);
  return ids;
}

std::vector<std::string> ids_of(const std::vector<RetrievalResult>& results) {
  std::vector<std::string> ids;
  ids.reserve(results.size());
  for (const auto& r : results) ids.push_back(r.doc_id);
  return ids;
}

int rank_of_first_gold(const std::vector<std::string>& ids,
                       const std::vector<std::string>& gold_ids) {
  const std::unordered_set<std::string> gold(gold_ids.begin(), gold_ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (gold.count(ids[i])) return static_cast<int>(i + 1);
  return 0;
}

class StageClock {
public:
  explicit StageClock(RunReport& report) : report_(report) {}

  template <typename Fn>
  auto run(const std::string& stage, Fn&& fn) {
    const auto begin = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        finish(stage, begin);
      } else {
        auto value = fn();
        finish(stage, begin);
        return value;
      }
    } catch (const std::exception& error) {
      throw_staged(stage, error);
    }
  }

private:
  void finish(const std::string& stage, std::chrono::steady_clock::time_point begin) {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - begin;
    report_.completed_stages.push_back(stage);
    report_.stage_seconds.emplace_back(stage, elapsed.count());
  }

  [[noreturn]] void throw_staged(const std::string& stage, const std::exception& error) {
    const std::string message = "stage " + stage + ": " + error.what();
    if (dynamic_cast<const NumericError*>(&error)) throw NumericError(message);
    throw InputError(message);
  }

  RunReport& report_;
};

}  // namespace

RunReport run_pipeline_loaded(const PipelineConfig& config, const Corpus& corpus,
                              const std::vector<Query>& queries, RunReport* primed);

RunReport run_pipeline(const PipelineConfig& config) {
  RunReport report;
  report.config_echo = config.to_json();
  report.seed = config.seed;
  StageClock clock(report);
  Corpus corpus;
  std::vector<Query> queries;
  try {
    clock.run("load", [&] {
      corpus = load_corpus(config.corpus_path);
      queries = load_queries(config.query_path);
    });
  } catch (...) {
    if (!config.output_path.empty()) write_report(report, config.output_path);
    throw;
  }
  return run_pipeline_loaded(config, corpus, queries, &report);
}

RunReport run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                       const std::vector<Query>& queries) {
  return run_pipeline_loaded(config, corpus, queries, nullptr);
}

RunReport run_pipeline_loaded(const PipelineConfig& config, const Corpus& corpus,
                              const std::vector<Query>& queries, RunReport* primed) {
  RunReport report = primed ? std::move(*primed) : RunReport{};
  if (!primed) {
    report.config_echo = config.to_json();
    report.seed = config.seed;
  }
  StageClock clock(report);

  try {
    const InvertedIndex index = clock.run("index", [&] { return build_index(corpus); });

    struct Retrieved {
      std::vector<RetrievalResult> a, b, b_contrastive, a_contrastive;
    };
    const std::vector<Retrieved> retrieved = clock.run("retrieve", [&] {
      std::vector<Retrieved> out(queries.size());
      for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto tokens = tokenize(queries[i].text);
        out[i].a = bm25_retrieve(index, tokens, config.retrieval_k);
        out[i].b = tfidf_cosine_retrieve(index, tokens, config.retrieval_k);
        if (queries[i].contrastive_text) {
          const auto ctokens = tokenize(*queries[i].contrastive_text);
          out[i].b_contrastive = tfidf_cosine_retrieve(index, ctokens, config.retrieval_k,
                                                       QueryVariant::Contrastive);
          out[i].a_contrastive =
              bm25_retrieve(index, ctokens, config.retrieval_k, QueryVariant::Contrastive);
        }
      }
      return out;
    });

    const CalibratedPredictor predictor = clock.run("train", [&] {
      if (!config.predictor_in.empty()) return load_predictor(config.predictor_in);
      const VocabBinding binding{static_cast<std::uint32_t>(corpus.vocabulary.size()),
                                 VocabBinding::kDefaultSalt};
      const auto examples =
          build_training_examples(corpus, queries, index, binding, config.negatives_per_query);
      CalibratedPredictor trained = train_calibrated(config, corpus, examples);
      if (!config.predictor_out.empty()) save_predictor(trained, config.predictor_out);
      return trained;
    });

    const ContextSplit split = ContextSplit::parse(config.split);
    const auto idf_fn = [&index](const std::string& token) { return index.idf(token); };
    const PairScorer scorer = scorer_of(predictor);

    report.per_query.resize(queries.size());
    std::vector<std::vector<RankedCandidate>> reranked_a(queries.size()),
        reranked_b(queries.size()), reranked_bc(queries.size()), reranked_ac(queries.size());
    clock.run("rerank", [&] {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        QueryRecord& record = report.per_query[i];
        record.query_id = queries[i].id;
        record.gold_ids = queries[i].gold_doc_ids;
        record.retrieved_a = ids_of(retrieved[i].a);
        record.retrieved_b = ids_of(retrieved[i].b);
        record.retrieved_contrastive = ids_of(retrieved[i].b_contrastive);
        reranked_a[i] = rerank_candidates(predictor, queries[i], retrieved[i].a, corpus);
        reranked_b[i] = rerank_candidates(predictor, queries[i], retrieved[i].b, corpus);
        if (!retrieved[i].b_contrastive.empty())
          reranked_bc[i] =
              rerank_candidates(predictor, queries[i], retrieved[i].b_contrastive, corpus);
        if (!retrieved[i].a_contrastive.empty())
          reranked_ac[i] =
              rerank_candidates(predictor, queries[i], retrieved[i].a_contrastive, corpus);
        report.per_query[i].reranked_a = ids_of(reranked_a[i]);
        report.per_query[i].reranked_b = ids_of(reranked_b[i]);
        report.per_query[i].gold_rank_base =
            rank_of_first_gold(report.per_query[i].reranked_a, queries[i].gold_doc_ids);
      }
    });

    if (config.explainer != "none") {
      const ExplainMethod method =
          config.explainer == "lime" ? ExplainMethod::Lime : ExplainMethod::KernelShap;
      clock.run("explain", [&] {
        for (std::size_t i = 0; i < queries.size(); ++i) {
          ExplainBudgets budgets = config.budgets;
          budgets.lime.seed = derive_seed(config.seed, 3000 + i);
          budgets.shap.seed = derive_seed(config.seed, 4000 + i);
          FeatureScoreTable table;
          if (!reranked_a[i].empty())
            reranked_a[i] = explainer_rerank_pipeline(
                scorer, queries[i], reranked_a[i], method, budgets, corpus.vocabulary,
                predictor.members.front().binding, &table);
          report.per_query[i].table_size = table.scores.size();
          if (!reranked_b[i].empty())
            reranked_b[i] = explainer_rerank_pipeline(scorer, queries[i], reranked_b[i], method,
                                                      budgets, corpus.vocabulary,
                                                      predictor.members.front().binding);
          report.per_query[i].reranked_a = ids_of(reranked_a[i]);
          report.per_query[i].reranked_b = ids_of(reranked_b[i]);
        }
      });
    }
    for (std::size_t i = 0; i < queries.size(); ++i)
      report.per_query[i].gold_rank_final =
          rank_of_first_gold(report.per_query[i].reranked_a, queries[i].gold_doc_ids);

    clock.run("merge", [&] {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        std::vector<std::vector<std::string>> lists{ids_of(reranked_a[i]), ids_of(reranked_b[i]),
                                                    ids_of(reranked_bc[i]),
                                                    ids_of(reranked_ac[i])};
        if (split.counts.size() > lists.size())
          throw InputError("split has more components than available ranked lists");
        lists.resize(split.counts.size());
        report.per_query[i].merged = merge_contexts(split, lists);
      }
    });

    clock.run("read", [&] {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        std::vector<const Document*> docs;
        for (const auto& id : report.per_query[i].merged) docs.push_back(corpus.find(id));
        report.per_query[i].answer =
            docs.empty() ? "" : extractive_read(docs, tokenize(queries[i].text), idf_fn);
      }
    });

    clock.run("metrics", [&] {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        QueryRecord& record = report.per_query[i];
        const Query& query = queries[i];
        record.em = exact_match(record.answer, query.answers);
        record.f1 = token_f1(record.answer, query.answers);
        record.rouge = 0.0;
        for (const auto& gold : query.answers)
          record.rouge = std::max(record.rouge, rouge_l(record.answer, gold));
        record.recall5_a = recall_at_k(record.reranked_a, query.gold_doc_ids, 5);
        record.recall5_b = recall_at_k(record.reranked_b, query.gold_doc_ids, 5);
        record.recall5_merged = recall_at_k(record.merged, query.gold_doc_ids, 5);
        record.r_precision_merged = r_precision(record.merged, query.gold_doc_ids);

        std::vector<const Document*> top_a, top_b;
        for (std::size_t r = 0; r < std::min<std::size_t>(2, reranked_a[i].size()); ++r)
          top_a.push_back(reranked_a[i][r].doc);
        for (std::size_t r = 0; r < std::min<std::size_t>(3, reranked_b[i].size()); ++r)
          top_b.push_back(reranked_b[i][r].doc);
        record.mi = (top_a.empty() || top_b.empty()) ? 0.0 : perspective_mi(top_a, top_b);

        // Gold/imputed alignment diagnostic at the configured lambda: the
        // imputed side is the best-scored non-gold candidate.
        if (!query.gold_doc_ids.empty() && !reranked_a[i].empty()) {
          const Document* gold_doc = corpus.find(query.gold_doc_ids.front());
          const Document* imputed_doc = nullptr;
          for (const auto& candidate : reranked_a[i])
            if (candidate.doc->id != query.gold_doc_ids.front()) {
              imputed_doc = candidate.doc;
              break;
            }
          if (gold_doc && imputed_doc) {
            const VocabBinding& binding = predictor.members.front().binding;
            const double g_gold =
                scorer(encode_pair(query, *gold_doc, corpus.vocabulary, binding))
                    .probabilities[1];
            const double g_imputed =
                scorer(encode_pair(query, *imputed_doc, corpus.vocabulary, binding))
                    .probabilities[1];
            record.imputation_loss =
                jsd_regularized_loss({{g_imputed, g_gold, 1}}, {g_gold}, config.lambda);
          }
        }
      }
      // Aggregation runs over the id-sorted records with plain running means
      // so that a reader of the report can recompute them exactly.
      std::sort(report.per_query.begin(), report.per_query.end(),
                [](const QueryRecord& lhs, const QueryRecord& rhs) {
                  return lhs.query_id < rhs.query_id;
                });
      const double n = static_cast<double>(std::max<std::size_t>(1, report.per_query.size()));
      const auto missing = static_cast<double>(config.budgets.rerank_depth + 1);
      for (const QueryRecord& record : report.per_query) {
        report.em += record.em / n;
        report.f1 += record.f1 / n;
        report.rouge += record.rouge / n;
        report.recall5_a += record.recall5_a / n;
        report.recall5_b += record.recall5_b / n;
        report.recall5_merged += record.recall5_merged / n;
        report.r_precision_merged += record.r_precision_merged / n;
        report.mean_mi += record.mi / n;
        report.imputation_loss += record.imputation_loss / n;
        report.mean_gold_rank_base +=
            (record.gold_rank_base > 0 ? record.gold_rank_base : missing) / n;
        report.mean_gold_rank_final +=
            (record.gold_rank_final > 0 ? record.gold_rank_final : missing) / n;
      }
      report.accuracy = report.em;  // stand-in: extractive answer vs gold
    });
  } catch (...) {
    if (!config.output_path.empty()) write_report(report, config.output_path);
    throw;
  }

  if (!config.output_path.empty()) write_report(report, config.output_path);
  return report;
}

namespace {

nlohmann::json record_to_json(const QueryRecord& record) {
  return nlohmann::json{{"query_id", record.query_id},
                        {"gold_ids", record.gold_ids},
                        {"retrieved_a", record.retrieved_a},
                        {"retrieved_b", record.retrieved_b},
                        {"retrieved_contrastive", record.retrieved_contrastive},
                        {"reranked_a", record.reranked_a},
                        {"reranked_b", record.reranked_b},
                        {"merged", record.merged},
                        {"answer", record.answer},
                        {"em", record.em},
                        {"f1", record.f1},
                        {"rouge_l", record.rouge},
                        {"recall5_a", record.recall5_a},
                        {"recall5_b", record.recall5_b},
                        {"recall5_merged", record.recall5_merged},
                        {"r_precision_merged", record.r_precision_merged},
                        {"mi", record.mi},
                        {"imputation_loss", record.imputation_loss},
                        {"table_size", record.table_size},
                        {"gold_rank_base", record.gold_rank_base},
                        {"gold_rank_final", record.gold_rank_final}};
}

}  // namespace

nlohmann::json report_to_json(const RunReport& report, bool include_timings) {
  nlohmann::json aggregates{{"em", report.em},
                            {"f1", report.f1},
                            {"rouge_l", report.rouge},
                            {"accuracy", report.accuracy},
                            {"accuracy_is_stand_in", report.accuracy_is_stand_in},
                            {"recall5_a", report.recall5_a},
                            {"recall5_b", report.recall5_b},
                            {"recall5_merged", report.recall5_merged},
                            {"r_precision_merged", report.r_precision_merged},
                            {"mean_gold_rank_base", report.mean_gold_rank_base},
                            {"mean_gold_rank_final", report.mean_gold_rank_final},
                            {"mean_mi", report.mean_mi},
                            {"imputation_loss", report.imputation_loss},
                            {"n_queries", report.per_query.size()}};
  nlohmann::json doc{{"config", report.config_echo},
                     {"seed", report.seed},
                     {"completed_stages", report.completed_stages},
                     {"aggregates", aggregates}};
  doc["per_query"] = nlohmann::json::array();
  for (const QueryRecord& record : report.per_query) doc["per_query"].push_back(record_to_json(record));
  if (include_timings) {
    nlohmann::json timings = nlohmann::json::object();
    for (const auto& [stage, seconds] : report.stage_seconds) timings[stage] = seconds;
    doc["timings"] = timings;
  }
  return doc;
}

void write_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write report file " + path);
  nlohmann::json doc = report_to_json(report);
  nlohmann::json per_query = std::move(doc["per_query"]);
  doc.erase("per_query");

  // One JSON document; per-query records stay one to a line for diffing.
  std::string head = doc.dump(2);
  head.pop_back();  // trailing '}'
  while (!head.empty() && (head.back() == '\n' || head.back() == ' ')) head.pop_back();
  out << head << ",\n  \"per_query\": [\n";
  for (std::size_t i = 0; i < per_query.size(); ++i)
    out << "    " << per_query[i].dump() << (i + 1 < per_query.size() ? "," : "") << "\n";
  out << "  ]\n}\n";
}

}  // namespace calrank
