#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "calrank/errors.hpp"
#include "calrank/explain.hpp"
#include "calrank/rng.hpp"

using namespace calrank;

namespace {

std::vector<std::string> names(std::size_t d) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < d; ++i) out.push_back("tok" + std::to_string(i));
  return out;
}

// Random bounded additive-plus-interaction black box for oracle comparisons.
CoalitionValue random_black_box(std::size_t d, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  auto linear = std::make_shared<std::vector<double>>();
  auto pair_terms = std::make_shared<std::vector<std::tuple<std::size_t, std::size_t, double>>>();
  for (std::size_t i = 0; i < d; ++i) linear->push_back(rng->normal());
  for (std::size_t i = 0; i + 1 < d; ++i)
    pair_terms->emplace_back(i, i + 1, 0.5 * rng->normal());
  return [=](const std::vector<bool>& mask) {
    double value = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) value += (*linear)[i];
    for (const auto& [i, j, w] : *pair_terms)
      if (mask[i] && mask[j]) value += w;
    return value;
  };
}

double weight_of(const Explanation& exp, const std::string& token) {
  for (const auto& [tok, w] : exp.weights)
    if (tok == token) return w;
  return 0.0;
}

}  // namespace

TEST_SUITE("explain") {

TEST_CASE("interpretable tokens are distinct in first-occurrence order") {
  CHECK(interpretable_tokens({"b", "a", "b", "c", "a"}) ==
        std::vector<std::string>{"b", "a", "c"});
}

TEST_CASE("lime on a constant black box shrinks every weight to zero") {
  const auto constant = [](const std::vector<bool>&) { return 0.42; };
  LimeOptions options;
  options.seed = 3;
  const Explanation exp = lime_fit(constant, names(6), options);
  REQUIRE(exp.weights.size() == 6);
  for (const auto& [tok, w] : exp.weights) CHECK(std::abs(w) < 1e-9);
  CHECK(exp.intercept == doctest::Approx(0.42).epsilon(1e-9));
}

TEST_CASE("lime recovers the ordering of a linear black box") {
  const auto linear = [](const std::vector<bool>& mask) {
    return 2.0 * (mask[0] ? 1 : 0) - 1.0 * (mask[1] ? 1 : 0) + 0.0 * (mask[2] ? 1 : 0);
  };
  LimeOptions options;
  options.seed = 5;
  const Explanation exp = lime_fit(linear, {"a", "b", "c"}, options);
  const double wa = weight_of(exp, "a"), wb = weight_of(exp, "b"), wc = weight_of(exp, "c");
  CHECK(wa > 0.0);
  CHECK(wb < 0.0);
  CHECK(wa > wc);
  CHECK(wc > wb);
}

TEST_CASE("lime is deterministic under a fixed seed and caps features") {
  const auto box = random_black_box(8, 21);
  LimeOptions options;
  options.seed = 9;
  options.n_features = 4;
  const Explanation first = lime_fit(box, names(8), options);
  const Explanation second = lime_fit(box, names(8), options);
  CHECK(first.weights == second.weights);
  CHECK(first.intercept == second.intercept);
  CHECK(first.weights.size() == 4);
  CHECK_THROWS_AS(lime_fit(box, {}, options), InputError);
}

TEST_CASE("lime keeps the unperturbed context in the sample set") {
  const auto box = random_black_box(5, 4);
  LimeOptions options;
  options.seed = 2;
  std::vector<PerturbationSample> samples;
  lime_fit(box, names(5), options, &samples);
  REQUIRE(samples.size() == options.n_samples);
  CHECK(samples.front().mask == std::vector<bool>(5, true));
  CHECK(samples.front().proximity_weight == doctest::Approx(1.0));
  for (const auto& sample : samples) CHECK(sample.mask.size() == 5);
}

TEST_CASE("kernel shap is exact on additive black boxes") {
  const std::vector<double> v{0.8, -1.2, 0.3, 2.0};
  const auto additive = [&](const std::vector<bool>& mask) {
    double total = 1.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) total += v[i];
    return total;
  };
  KernelShapOptions options;
  const Explanation exp = kernel_shap_fit(additive, names(4), options);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(weight_of(exp, "tok" + std::to_string(i)) == doctest::Approx(v[i]).epsilon(1e-9));
  CHECK(exp.intercept == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kernel shap respects the symmetry axiom") {
  // Tokens 0 and 1 are exchangeable.
  const auto box = [](const std::vector<bool>& mask) {
    const int count = (mask[0] ? 1 : 0) + (mask[1] ? 1 : 0);
    return static_cast<double>(count) * 1.5 + (mask[2] ? 0.7 : 0.0);
  };
  const Explanation exp = kernel_shap_fit(box, names(3), KernelShapOptions{});
  CHECK(weight_of(exp, "tok0") == doctest::Approx(weight_of(exp, "tok1")).epsilon(1e-9));
}

TEST_CASE("kernel shap enumeration matches the brute-force oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t d = 1 + seed % 8;
    const auto box = random_black_box(d, seed * 31);
    const auto expected = exact_shapley(box, d);
    const Explanation exp = kernel_shap_fit(box, names(d), KernelShapOptions{});
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(weight_of(exp, "tok" + std::to_string(i)) ==
            doctest::Approx(expected[i]).epsilon(1e-6));
      total += weight_of(exp, "tok" + std::to_string(i));
    }
    const double span = box(std::vector<bool>(d, true)) - box(std::vector<bool>(d, false));
    CHECK(total == doctest::Approx(span).epsilon(1e-6));  // efficiency
  }
}

TEST_CASE("kernel shap sampling path approximates the oracle") {
  const auto box = random_black_box(6, 77);
  const auto expected = exact_shapley(box, 6);
  KernelShapOptions options;
  options.n_samples = 2000;
  options.force_sampling = true;
  options.seed = 13;
  const Explanation exp = kernel_shap_fit(box, names(6), options);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(std::abs(weight_of(exp, "tok" + std::to_string(i)) - expected[i]) < 0.05);
}

TEST_CASE("exact_shapley handles the base cases and the hand fixture") {
  const auto single = [](const std::vector<bool>& mask) { return mask[0] ? 3.25 : 1.0; };
  const auto phi = exact_shapley(single, 1);
  CHECK(phi[0] == doctest::Approx(2.25).epsilon(1e-12));

  // v({1})=1 v({2})=2 v({3})=3 v(12)=4 v(13)=5 v(23)=6 v(123)=8.
  const auto table = [](const std::vector<bool>& m) {
    const int bits = (m[0] ? 1 : 0) | (m[1] ? 2 : 0) | (m[2] ? 4 : 0);
    static const double v[8] = {0, 1, 2, 4, 3, 5, 6, 8};
    return v[bits];
  };
  const auto values = exact_shapley(table, 3);
  CHECK(values[0] == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
  CHECK(values[1] == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
  CHECK(values[2] == doctest::Approx(11.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(exact_shapley(single, 13), InputError);
}

TEST_CASE("exact_shapley satisfies efficiency on random games") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const std::size_t d = 1 + seed % 12;
    const auto box = random_black_box(d, seed * 101);
    const auto phi = exact_shapley(box, d);
    double total = 0.0;
    for (const double p : phi) total += p;
    const double span = box(std::vector<bool>(d, true)) - box(std::vector<bool>(d, false));
    CHECK(total == doctest::Approx(span).epsilon(1e-9));
  }
}

TEST_CASE("feature score tables aggregate by token") {
  Explanation a;
  a.method = ExplainMethod::Lime;
  a.context_id = "c1";
  a.weights = {{"x", 0.3}, {"y", -0.1}};
  Explanation b = a;
  b.context_id = "c2";
  b.weights = {{"x", 0.2}, {"z", 0.5}};

  const FeatureScoreTable single = build_feature_score_table({a});
  CHECK(single.scores.at("x") == doctest::Approx(0.3));
  CHECK(single.scores.size() == 2);

  const FeatureScoreTable merged = build_feature_score_table({a, b});
  CHECK(merged.scores.at("x") == doctest::Approx(0.5));
  CHECK(merged.scores.size() == 3);
  CHECK(merged.provenance == std::vector<std::string>{"c1", "c2"});

  Explanation c = b;
  c.weights = {{"p", 1.0}, {"q", 2.0}};
  c.context_id = "c3";
  Explanation disjoint_a = a;
  const FeatureScoreTable disjoint = build_feature_score_table({disjoint_a, c});
  CHECK(disjoint.scores.size() == 4);

  Explanation shap = b;
  shap.method = ExplainMethod::KernelShap;
  CHECK_THROWS_AS(build_feature_score_table({a, shap}), InputError);
}

TEST_CASE("feature-score reranking orders by summed token scores") {
  std::vector<Document> docs{
      {"d1", "", "alpha beta", {}},
      {"d2", "", "answer beta", {}},
      {"d3", "", "alpha alpha gamma", {}},
      {"d4", "", "delta", {}},
  };
  for (auto& doc : docs) doc.tokens = tokenize(doc.text);
  std::vector<RankedCandidate> candidates;
  for (std::size_t i = 0; i < docs.size(); ++i)
    candidates.push_back(
        {&docs[i], {docs[i].id, 1.0 - 0.1 * static_cast<double>(i), static_cast<int>(i + 1),
                    Source::PerspectiveA, QueryVariant::Original}});

  const FeatureScoreTable empty;
  const auto unchanged = rerank_by_feature_scores(empty, candidates);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    CHECK(unchanged[i].doc->id == candidates[i].doc->id);

  FeatureScoreTable promote;
  promote.scores = {{"answer", 1.0}};
  CHECK(rerank_by_feature_scores(promote, candidates)[0].doc->id == "d2");

  // alpha 0.4, beta 0.3, gamma -0.2: d1=0.7, d2=0.3, d3=0.2, d4=0.
  FeatureScoreTable table;
  table.scores = {{"alpha", 0.4}, {"beta", 0.3}, {"gamma", -0.2}};
  const auto ranked = rerank_by_feature_scores(table, candidates);
  CHECK(ranked[0].doc->id == "d1");
  CHECK(ranked[1].doc->id == "d2");
  CHECK(ranked[2].doc->id == "d3");
  CHECK(ranked[3].doc->id == "d4");

  const auto capped = rerank_by_feature_scores(table, candidates, 2);
  CHECK(capped.size() == 2);
  CHECK_THROWS_AS(rerank_by_feature_scores(table, {}), InputError);
}

TEST_CASE("reranking permutes its input without inventing candidates") {
  Rng rng(7);
  std::vector<Document> docs;
  for (int i = 0; i < 12; ++i) {
    Document doc{"d" + std::to_string(i), "", "", {}};
    std::string text;
    for (int t = 0; t < 6; ++t) text += " tok" + std::to_string(rng.below(10));
    doc.text = text;
    doc.tokens = tokenize(text);
    docs.push_back(doc);
  }
  std::vector<RankedCandidate> candidates;
  for (std::size_t i = 0; i < docs.size(); ++i)
    candidates.push_back({&docs[i],
                          {docs[i].id, -static_cast<double>(i), static_cast<int>(i + 1),
                           Source::PerspectiveA, QueryVariant::Original}});
  FeatureScoreTable table;
  for (int t = 0; t < 10; ++t) table.scores["tok" + std::to_string(t)] = rng.normal();

  const auto ranked = rerank_by_feature_scores(table, candidates, candidates.size());
  std::set<std::string> before, after;
  for (const auto& c : candidates) before.insert(c.doc->id);
  for (const auto& c : ranked) after.insert(c.doc->id);
  CHECK(before == after);
}

TEST_CASE("explainer pipeline respects its context budgets") {
  const std::unordered_map<std::string, std::uint32_t> vocab{{"good", 0}, {"bad", 1},
                                                             {"noise", 2}};
  const VocabBinding binding{3, VocabBinding::kDefaultSalt};
  // Scorer that loves contexts containing "good".
  const PairScorer scorer = [&](const InputVector& input) {
    double positive = 0.1;
    for (const auto& [feature, weight] : input.entries)
      if (feature == binding.segment_width() + 0) positive = 0.9;
    return ProbabilityDistribution{{1.0 - positive, positive}};
  };
  Query query;
  query.id = "q";
  query.text = "good or bad";

  std::vector<Document> docs;
  for (int i = 0; i < 10; ++i) {
    Document doc{"d" + std::to_string(i), "", i % 2 == 0 ? "good noise" : "bad noise", {}};
    doc.tokens = tokenize(doc.text);
    docs.push_back(doc);
  }
  std::vector<RankedCandidate> candidates;
  for (std::size_t i = 0; i < docs.size(); ++i)
    candidates.push_back({&docs[i],
                          {docs[i].id, 1.0 - 0.05 * static_cast<double>(i),
                           static_cast<int>(i + 1), Source::PerspectiveA,
                           QueryVariant::Original}});

  ExplainBudgets budgets;
  budgets.lime.n_samples = 40;
  FeatureScoreTable table;
  const auto reranked = explainer_rerank_pipeline(scorer, query, candidates, ExplainMethod::Lime,
                                                  budgets, vocab, binding, &table);
  CHECK(table.provenance.size() == 5);  // the LIME budget
  CHECK(reranked.size() == 10);

  FeatureScoreTable shap_table;
  explainer_rerank_pipeline(scorer, query, candidates, ExplainMethod::KernelShap, budgets, vocab,
                            binding, &shap_table);
  CHECK(shap_table.provenance.size() == 1);  // the SHAP budget

  const std::vector<RankedCandidate> one{candidates[0]};
  const auto same = explainer_rerank_pipeline(scorer, query, one, ExplainMethod::Lime, budgets,
                                              vocab, binding);
  REQUIRE(same.size() == 1);
  CHECK(same[0].doc->id == one[0].doc->id);
}

TEST_CASE("explanations export as one record per token") {
  Explanation exp;
  exp.method = ExplainMethod::Lime;
  exp.context_id = "ctx7";
  exp.weights = {{"alpha", 0.25}, {"beta", -0.5}};
  const auto path = (std::filesystem::temp_directory_path() / "explain_export.jsonl").string();
  export_explanations({{"q1", exp}}, path);

  std::ifstream in(path);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto record = nlohmann::json::parse(line);
    CHECK(record.at("query_id") == "q1");
    CHECK(record.at("context_id") == "ctx7");
    CHECK(record.at("method") == "lime");
    CHECK(record.contains("token"));
    CHECK(record.contains("weight"));
    ++rows;
  }
  CHECK(rows == 2);
  std::remove(path.c_str());
}

}  // TEST_SUITE
