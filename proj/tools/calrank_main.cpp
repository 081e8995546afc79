#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "calrank/calibration.hpp"
#include "calrank/corpus.hpp"
#include "calrank/errors.hpp"
#include "calrank/explain.hpp"
#include "calrank/metrics.hpp"
#include "calrank/pipeline.hpp"
#include "calrank/retrieval.hpp"
#include "calrank/rng.hpp"

namespace {

using calrank::PipelineConfig;

struct CommonArgs {
  std::string config_path;
  std::optional<std::string> corpus, queries, output, predictor_in, predictor_out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::string> calibration, explainer, split;
  std::optional<std::size_t> epochs, batch_size, hidden_dim, ensemble_size, mc_samples;
  std::optional<double> learning_rate, dropout_rate, lambda;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool seed_required) {
  cmd->add_option("--config", args.config_path, "flat JSON config file");
  cmd->add_option("--corpus", args.corpus, "corpus file (JSON Lines)");
  cmd->add_option("--queries", args.queries, "query file (JSON Lines)");
  cmd->add_option("--output", args.output, "output path");
  cmd->add_option("--predictor-in", args.predictor_in, "load a saved predictor");
  cmd->add_option("--predictor-out", args.predictor_out, "save the trained predictor");
  auto* seed = cmd->add_option("--seed", args.seed, "random seed");
  if (seed_required) seed->required();
  cmd->add_option("-k,--k", args.k, "retrieval depth");
  cmd->add_option("--calibration", args.calibration, "none|deep|snapshot|swa|mcdropout");
  cmd->add_option("--explainer", args.explainer, "none|lime|shap");
  cmd->add_option("--split", args.split, "context split, e.g. 3;2");
  cmd->add_option("--epochs", args.epochs, "training epochs");
  cmd->add_option("--batch-size", args.batch_size, "training batch size");
  cmd->add_option("--hidden-dim", args.hidden_dim, "reranker hidden width");
  cmd->add_option("--ensemble-size", args.ensemble_size, "ensemble members / cycles");
  cmd->add_option("--mc-samples", args.mc_samples, "MC dropout samples");
  cmd->add_option("--learning-rate", args.learning_rate, "learning rate");
  cmd->add_option("--dropout-rate", args.dropout_rate, "dropout rate");
  cmd->add_option("--lambda", args.lambda, "JSD diagnostic weight");
}

PipelineConfig resolve_config(const CommonArgs& args) {
  nlohmann::json doc = nlohmann::json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw calrank::InputError("cannot open config file " + args.config_path);
    doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
      throw calrank::InputError("config file " + args.config_path + " is not a JSON object");
  }
  const auto set = [&doc](const char* key, const auto& maybe) {
    if (maybe) doc[key] = *maybe;
  };
  set("corpus", args.corpus);
  set("queries", args.queries);
  set("output", args.output);
  set("predictor_in", args.predictor_in);
  set("predictor_out", args.predictor_out);
  set("seed", args.seed);
  set("k", args.k);
  set("calibration", args.calibration);
  set("explainer", args.explainer);
  set("split", args.split);
  set("epochs", args.epochs);
  set("batch_size", args.batch_size);
  set("hidden_dim", args.hidden_dim);
  set("ensemble_size", args.ensemble_size);
  set("mc_samples", args.mc_samples);
  set("learning_rate", args.learning_rate);
  set("dropout_rate", args.dropout_rate);
  set("lambda", args.lambda);
  return PipelineConfig::from_json(doc);
}

struct Prepared {
  calrank::Corpus corpus;
  std::vector<calrank::Query> queries;
  calrank::InvertedIndex index;
  std::vector<calrank::Example> examples;
  calrank::VocabBinding binding;
};

Prepared prepare(const PipelineConfig& config, bool with_examples) {
  if (config.corpus_path.empty()) throw calrank::InputError("a corpus file is required");
  Prepared prep;
  prep.corpus = calrank::load_corpus(config.corpus_path);
  if (!config.query_path.empty()) prep.queries = calrank::load_queries(config.query_path);
  prep.index = calrank::build_index(prep.corpus);
  prep.binding = {static_cast<std::uint32_t>(prep.corpus.vocabulary.size()),
                  calrank::VocabBinding::kDefaultSalt};
  if (with_examples)
    prep.examples = calrank::build_training_examples(prep.corpus, prep.queries, prep.index,
                                                     prep.binding, config.negatives_per_query);
  return prep;
}

calrank::CalibratedPredictor load_or_train(const PipelineConfig& config, const Prepared& prep) {
  if (!config.predictor_in.empty()) return calrank::load_predictor(config.predictor_in);
  return calrank::train_calibrated(config, prep.corpus, prep.examples);
}

int cmd_synth(const PipelineConfig& config, std::size_t n_docs, std::size_t n_queries) {
  if (config.corpus_path.empty() || config.query_path.empty())
    throw calrank::InputError("synth needs --corpus and --queries output paths");
  const auto dataset = calrank::generate_synthetic_dataset(config.seed, n_docs, n_queries);
  calrank::save_corpus(dataset.corpus, config.corpus_path);
  calrank::save_queries(dataset.queries, config.query_path);
  std::cout << "wrote " << dataset.corpus.doc_count() << " documents and "
            << dataset.queries.size() << " queries\n";
  return 0;
}

int cmd_index(const PipelineConfig& config) {
  const auto corpus = calrank::load_corpus(config.corpus_path);
  const auto index = calrank::build_index(corpus);
  nlohmann::json stats{{"documents", index.doc_count()},
                       {"vocabulary", corpus.vocabulary.size()},
                       {"average_doc_length", index.average_doc_length()}};
  std::cout << stats.dump(2) << "\n";
  return 0;
}

int cmd_train(const PipelineConfig& config) {
  if (config.output_path.empty()) throw calrank::InputError("train needs --output for the model");
  Prepared prep = prepare(config, true);
  calrank::ModelSpec spec;
  spec.vocab_size = prep.binding.vocab_size;
  spec.hidden_dim = config.hidden_dim;
  spec.dropout_rate = config.dropout_rate;
  calrank::TrainingConfig training = config.training;
  training.seed = calrank::derive_seed(config.seed, 1);
  training.collect_checkpoints = false;
  const auto result =
      calrank::train(calrank::make_reranker(spec, training.seed), prep.examples, training);
  calrank::save_model(result.model, config.output_path);
  std::cout << "trained on " << prep.examples.size() << " pairs; final loss "
            << calrank::mean_cross_entropy(result.model, prep.examples) << "\n";
  return 0;
}

int cmd_calibrate(const PipelineConfig& config) {
  const std::string out =
      !config.predictor_out.empty() ? config.predictor_out : config.output_path;
  if (out.empty()) throw calrank::InputError("calibrate needs --predictor-out");
  Prepared prep = prepare(config, true);
  const auto predictor = calrank::train_calibrated(config, prep.corpus, prep.examples);
  calrank::save_predictor(predictor, out);
  std::cout << "saved predictor with " << predictor.members.size() << " member(s) to " << out
            << "\n";
  return 0;
}

int cmd_rerank(const PipelineConfig& config) {
  Prepared prep = prepare(config, config.predictor_in.empty());
  const auto predictor = load_or_train(config, prep);
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!config.output_path.empty()) {
    file.open(config.output_path);
    if (!file) throw calrank::InputError("cannot write " + config.output_path);
    out = &file;
  }
  for (const auto& query : prep.queries) {
    const auto retrieved =
        calrank::bm25_retrieve(prep.index, calrank::tokenize(query.text), config.retrieval_k);
    const auto reranked = calrank::rerank_candidates(predictor, query, retrieved, prep.corpus);
    nlohmann::json record{{"query_id", query.id}};
    record["ranking"] = nlohmann::json::array();
    for (const auto& candidate : reranked)
      record["ranking"].push_back(
          {{"doc_id", candidate.doc->id}, {"score", candidate.base.score}});
    *out << record.dump() << "\n";
  }
  return 0;
}

int cmd_explain(const PipelineConfig& config) {
  if (config.explainer == "none")
    throw calrank::InputError("explain needs --explainer lime or shap");
  Prepared prep = prepare(config, config.predictor_in.empty());
  const auto predictor = load_or_train(config, prep);
  const auto scorer = calrank::scorer_of(predictor);
  const auto method = config.explainer == "lime" ? calrank::ExplainMethod::Lime
                                                 : calrank::ExplainMethod::KernelShap;

  std::vector<std::pair<std::string, calrank::Explanation>> rows;
  for (std::size_t qi = 0; qi < prep.queries.size(); ++qi) {
    const auto& query = prep.queries[qi];
    const auto retrieved =
        calrank::bm25_retrieve(prep.index, calrank::tokenize(query.text), config.retrieval_k);
    const auto candidates = calrank::rerank_candidates(predictor, query, retrieved, prep.corpus);
    const std::size_t budget = method == calrank::ExplainMethod::Lime
                                   ? config.budgets.lime_contexts
                                   : config.budgets.shap_contexts;
    for (std::size_t i = 0; i < std::min(budget, candidates.size()); ++i) {
      if (method == calrank::ExplainMethod::Lime) {
        auto opts = config.budgets.lime;
        opts.seed = calrank::derive_seed(calrank::derive_seed(config.seed, 3000 + qi), i);
        rows.emplace_back(query.id,
                          calrank::lime_explain(scorer, query, *candidates[i].doc,
                                                prep.corpus.vocabulary, prep.binding, opts));
      } else {
        auto opts = config.budgets.shap;
        opts.seed = calrank::derive_seed(calrank::derive_seed(config.seed, 4000 + qi), i);
        rows.emplace_back(query.id,
                          calrank::kernel_shap_explain(scorer, query, *candidates[i].doc,
                                                       prep.corpus.vocabulary, prep.binding,
                                                       opts));
      }
    }
  }
  if (config.output_path.empty()) throw calrank::InputError("explain needs --output");
  calrank::export_explanations(rows, config.output_path);
  std::cout << "wrote " << rows.size() << " explanations to " << config.output_path << "\n";
  return 0;
}

int cmd_pipeline(const PipelineConfig& config) {
  const auto report = calrank::run_pipeline(config);
  nlohmann::json summary = calrank::report_to_json(report, false)["aggregates"];
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& report_path) {
  std::ifstream in(report_path);
  if (!in) throw calrank::InputError("cannot open report " + report_path);
  const nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw calrank::InputError("report is not valid JSON");

  const auto& per_query = doc.at("per_query");
  const double n = std::max<double>(1.0, static_cast<double>(per_query.size()));
  const double depth = doc.at("config").value("rerank_depth", 10.0);
  nlohmann::json recomputed{
      {"em", 0.0},           {"f1", 0.0},
      {"rouge_l", 0.0},      {"recall5_a", 0.0},
      {"recall5_b", 0.0},    {"recall5_merged", 0.0},
      {"r_precision_merged", 0.0},
      {"mean_mi", 0.0},      {"imputation_loss", 0.0},
      {"mean_gold_rank_base", 0.0}, {"mean_gold_rank_final", 0.0}};
  for (const auto& record : per_query) {
    recomputed["em"] = recomputed["em"].get<double>() + record.at("em").get<double>() / n;
    recomputed["f1"] = recomputed["f1"].get<double>() + record.at("f1").get<double>() / n;
    recomputed["rouge_l"] =
        recomputed["rouge_l"].get<double>() + record.at("rouge_l").get<double>() / n;
    recomputed["recall5_a"] =
        recomputed["recall5_a"].get<double>() + record.at("recall5_a").get<double>() / n;
    recomputed["recall5_b"] =
        recomputed["recall5_b"].get<double>() + record.at("recall5_b").get<double>() / n;
    recomputed["recall5_merged"] = recomputed["recall5_merged"].get<double>() +
                                   record.at("recall5_merged").get<double>() / n;
    recomputed["r_precision_merged"] = recomputed["r_precision_merged"].get<double>() +
                                       record.at("r_precision_merged").get<double>() / n;
    recomputed["mean_mi"] = recomputed["mean_mi"].get<double>() + record.at("mi").get<double>() / n;
    recomputed["imputation_loss"] = recomputed["imputation_loss"].get<double>() +
                                    record.at("imputation_loss").get<double>() / n;
    const double base = record.at("gold_rank_base").get<double>();
    const double fin = record.at("gold_rank_final").get<double>();
    recomputed["mean_gold_rank_base"] = recomputed["mean_gold_rank_base"].get<double>() +
                                        (base > 0 ? base : depth + 1) / n;
    recomputed["mean_gold_rank_final"] = recomputed["mean_gold_rank_final"].get<double>() +
                                         (fin > 0 ? fin : depth + 1) / n;
  }
  recomputed["accuracy"] = recomputed["em"];

  const auto& aggregates = doc.at("aggregates");
  bool consistent = true;
  for (const auto& [key, value] : recomputed.items()) {
    const double reported = aggregates.at(key).get<double>();
    if (reported != value.get<double>()) {
      consistent = false;
      std::cerr << "inconsistent aggregate " << key << ": reported " << reported
                << ", recomputed " << value.get<double>() << "\n";
    }
  }
  std::cout << recomputed.dump(2) << "\n";
  if (!consistent) throw calrank::InputError("report aggregates do not match per-query records");
  std::cout << "report self-consistent over " << per_query.size() << " queries\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-calibrated retrieval reranking pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::size_t synth_docs = 500, synth_queries = 100;
  std::string report_path;

  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic corpus and query set");
  add_common(synth, args, true);
  synth->add_option("--docs", synth_docs, "number of documents");
  synth->add_option("--n-queries", synth_queries, "number of queries");

  auto* index = app.add_subcommand("index", "build the inverted index and print statistics");
  add_common(index, args, false);

  auto* train = app.add_subcommand("train", "train a single reranker model");
  add_common(train, args, true);

  auto* calibrate = app.add_subcommand("calibrate", "train a calibrated predictor");
  add_common(calibrate, args, true);

  auto* rerank = app.add_subcommand("rerank", "retrieve and rerank with a predictor");
  add_common(rerank, args, false);

  auto* explain = app.add_subcommand("explain", "export explainer feature scores");
  add_common(explain, args, true);

  auto* pipeline = app.add_subcommand("pipeline", "run the full pipeline and write a report");
  add_common(pipeline, args, true);

  auto* eval = app.add_subcommand("eval", "recompute report aggregates from per-query records");
  eval->add_option("--report", report_path, "run report to check")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& error) {
    app.exit(error);
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(resolve_config(args), synth_docs, synth_queries);
    if (index->parsed()) return cmd_index(resolve_config(args));
    if (train->parsed()) return cmd_train(resolve_config(args));
    if (calibrate->parsed()) return cmd_calibrate(resolve_config(args));
    if (rerank->parsed()) return cmd_rerank(resolve_config(args));
    if (explain->parsed()) return cmd_explain(resolve_config(args));
    if (pipeline->parsed()) return cmd_pipeline(resolve_config(args));
    if (eval->parsed()) return cmd_eval(report_path);
  } catch (const calrank::NumericError& error) {
    std::cerr << "numerical error: " << error.what() << "\n";
    return 2;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
  return 0;
}
