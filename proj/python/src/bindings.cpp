#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "calrank/calibration.hpp"
#include "calrank/corpus.hpp"
#include "calrank/errors.hpp"
#include "calrank/explain.hpp"
#include "calrank/fusion.hpp"
#include "calrank/metrics.hpp"
#include "calrank/pipeline.hpp"
#include "calrank/retrieval.hpp"

namespace py = pybind11;
using namespace calrank;

namespace {

nlohmann::json to_json(const py::object& obj) {
  const auto dumped =
      py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(dumped);
}

py::object from_json(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(py::str(doc.dump()));
}

py::dict explanation_to_dict(const Explanation& exp) {
  py::dict weights;
  for (const auto& [token, weight] : exp.weights) weights[py::str(token)] = weight;
  py::dict out;
  out["weights"] = weights;
  out["intercept"] = exp.intercept;
  out["method"] = exp.method == ExplainMethod::Lime ? "lime" : "shap";
  out["context_id"] = exp.context_id;
  return out;
}

}  // namespace

PYBIND11_MODULE(_calrank, m) {
  m.doc() = "uncertainty-calibrated, explainable retrieval reranking";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Document>(m, "Document")
      .def_readonly("id", &Document::id)
      .def_readonly("title", &Document::title)
      .def_readonly("text", &Document::text)
      .def_readonly("tokens", &Document::tokens)
      .def("__repr__",
           [](const Document& doc) { return "<Document id='" + doc.id + "'>"; });

  py::class_<Query>(m, "Query")
      .def_readonly("id", &Query::id)
      .def_readonly("text", &Query::text)
      .def_readonly("contrastive_text", &Query::contrastive_text)
      .def_readonly("answers", &Query::answers)
      .def_readonly("gold_doc_ids", &Query::gold_doc_ids)
      .def_readonly("label_per_doc", &Query::label_per_doc)
      .def("__repr__", [](const Query& q) { return "<Query id='" + q.id + "'>"; });

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("documents", &Corpus::documents)
      .def_readonly("vocabulary", &Corpus::vocabulary)
      .def_property_readonly("doc_count", &Corpus::doc_count)
      .def_readonly("average_doc_length", &Corpus::average_doc_length)
      .def("find",
           [](const Corpus& corpus, const std::string& id) -> py::object {
             const Document* doc = corpus.find(id);
             return doc ? py::cast(*doc) : py::none();
           })
      .def("__repr__", [](const Corpus& corpus) {
        return "<Corpus docs=" + std::to_string(corpus.doc_count()) + ">";
      });

  py::class_<RetrievalResult>(m, "RetrievalResult")
      .def_readonly("doc_id", &RetrievalResult::doc_id)
      .def_readonly("score", &RetrievalResult::score)
      .def_readonly("rank", &RetrievalResult::rank)
      .def_property_readonly("source",
                             [](const RetrievalResult& r) {
                               return r.source == Source::PerspectiveA ? "A" : "B";
                             })
      .def("__repr__", [](const RetrievalResult& r) {
        return "<RetrievalResult " + r.doc_id + " rank=" + std::to_string(r.rank) + ">";
      });

  py::class_<InvertedIndex>(m, "InvertedIndex")
      .def("idf", &InvertedIndex::idf, py::arg("token"))
      .def_property_readonly("doc_count", &InvertedIndex::doc_count)
      .def_property_readonly("average_doc_length", &InvertedIndex::average_doc_length);

  m.def("tokenize",
        [](const std::string& text) { return tokenize(text); },
        py::arg("text"));
  m.def("load_corpus", &load_corpus, py::arg("path"));
  m.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("path"));
  m.def("load_queries", &load_queries, py::arg("path"));
  m.def("save_queries", &save_queries, py::arg("queries"), py::arg("path"));
  m.def(
      "generate_synthetic_dataset",
      [](std::uint64_t seed, std::size_t n_docs, std::size_t n_queries) {
        auto dataset = generate_synthetic_dataset(seed, n_docs, n_queries);
        return py::make_tuple(std::move(dataset.corpus), std::move(dataset.queries));
      },
      py::arg("seed"), py::arg("n_docs"), py::arg("n_queries"));

  m.def("build_index", &build_index, py::arg("corpus"),
        py::keep_alive<0, 1>());
  m.def(
      "bm25_retrieve",
      [](const InvertedIndex& index, const std::vector<std::string>& query, std::size_t k) {
        return bm25_retrieve(index, query, k);
      },
      py::arg("index"), py::arg("query_tokens"), py::arg("k"));
  m.def(
      "tfidf_cosine_retrieve",
      [](const InvertedIndex& index, const std::vector<std::string>& query, std::size_t k) {
        return tfidf_cosine_retrieve(index, query, k);
      },
      py::arg("index"), py::arg("query_tokens"), py::arg("k"));

  m.def("cyclic_lr", &cyclic_lr, py::arg("t"), py::arg("total_steps"), py::arg("cycles"),
        py::arg("alpha0"));
  m.def("swa_update", &swa_update, py::arg("w_swa"), py::arg("n_models"), py::arg("w"));

  m.def(
      "jsd",
      [](const std::vector<double>& p, const std::vector<double>& q) { return jsd(p, q); },
      py::arg("p"), py::arg("q"));
  m.def(
      "mutual_information",
      [](const std::vector<std::vector<double>>& counts) {
        return mutual_information(DiscreteJoint{counts});
      },
      py::arg("joint_counts"));
  m.def(
      "symmetric_imputation_batch",
      [](const std::vector<std::string>& gold_ids, const std::vector<std::string>& imputed_ids,
         std::size_t slots_per_side) {
        py::list out;
        for (const auto& slot : symmetric_imputation_batch(gold_ids, imputed_ids, slots_per_side)) {
          const char* kind = slot.kind == SlotKind::Gold      ? "gold"
                             : slot.kind == SlotKind::Imputed ? "imputed"
                                                              : "placeholder";
          out.append(py::make_tuple(kind, slot.context_id));
        }
        return out;
      },
      py::arg("gold_ids"), py::arg("imputed_ids"), py::arg("slots_per_side") = 3);
  m.def(
      "merge_contexts",
      [](const std::string& split, const std::vector<std::vector<std::string>>& lists) {
        return merge_contexts(ContextSplit::parse(split), lists);
      },
      py::arg("split"), py::arg("ranked_ids"));
  m.def(
      "extractive_read",
      [](const Corpus& corpus, const std::vector<std::string>& context_ids,
         const std::string& query) {
        std::vector<const Document*> docs;
        for (const auto& id : context_ids) {
          const Document* doc = corpus.find(id);
          if (!doc) throw InputError("unknown context id " + id);
          docs.push_back(doc);
        }
        const InvertedIndex index = build_index(corpus);
        return extractive_read(docs, tokenize(query),
                               [&](const std::string& token) { return index.idf(token); });
      },
      py::arg("corpus"), py::arg("context_ids"), py::arg("query"));

  m.def(
      "exact_shapley",
      [](const std::function<double(std::vector<bool>)>& value, std::size_t d) {
        return exact_shapley([&](const std::vector<bool>& mask) { return value(mask); }, d);
      },
      py::arg("value"), py::arg("d"));
  m.def(
      "kernel_shap",
      [](const std::function<double(std::vector<bool>)>& value,
         const std::vector<std::string>& names, std::size_t n_samples, std::uint64_t seed) {
        KernelShapOptions options;
        options.n_samples = n_samples;
        options.seed = seed;
        return explanation_to_dict(kernel_shap_fit(
            [&](const std::vector<bool>& mask) { return value(mask); }, names, options));
      },
      py::arg("value"), py::arg("feature_names"), py::arg("n_samples") = 2048,
      py::arg("seed") = 0);
  m.def(
      "lime",
      [](const std::function<double(std::vector<bool>)>& value,
         const std::vector<std::string>& names, std::size_t n_samples, std::size_t n_features,
         std::uint64_t seed) {
        LimeOptions options;
        options.n_samples = n_samples;
        options.n_features = n_features;
        options.seed = seed;
        return explanation_to_dict(lime_fit(
            [&](const std::vector<bool>& mask) { return value(mask); }, names, options));
      },
      py::arg("value"), py::arg("feature_names"), py::arg("n_samples") = 150,
      py::arg("n_features") = 10, py::arg("seed") = 0);

  m.def("normalize_answer", &normalize_answer, py::arg("text"));
  m.def("exact_match", &exact_match, py::arg("prediction"), py::arg("gold_answers"));
  m.def("token_f1", &token_f1, py::arg("prediction"), py::arg("gold_answers"));
  m.def("rouge_l", &rouge_l, py::arg("prediction"), py::arg("gold"));
  m.def("recall_at_k", &recall_at_k, py::arg("retrieved_ids"), py::arg("gold_ids"),
        py::arg("k"));
  m.def("r_precision", &r_precision, py::arg("retrieved_ids"), py::arg("gold_ids"));
  m.def("accuracy", &accuracy, py::arg("predicted_labels"), py::arg("gold_labels"));
  m.def(
      "calibration_metrics",
      [](const std::vector<std::vector<double>>& predictions, const std::vector<int>& labels) {
        std::vector<ProbabilityDistribution> dists;
        dists.reserve(predictions.size());
        for (const auto& p : predictions) dists.push_back({p});
        const CalibrationMetrics metrics = calibration_metrics(dists, labels);
        py::dict out;
        out["nll"] = metrics.nll;
        out["brier"] = metrics.brier;
        out["ece"] = metrics.ece;
        out["clamped"] = metrics.clamped;
        return out;
      },
      py::arg("predictions"), py::arg("labels"));

  m.def(
      "run_pipeline",
      [](const py::dict& config) {
        const RunReport report = run_pipeline(PipelineConfig::from_json(to_json(config)));
        return from_json(report_to_json(report));
      },
      py::arg("config"),
      "Run the full pipeline from a flat config dict; returns the report as a dict.");
}
