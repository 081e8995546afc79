#include "calrank/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "calrank/errors.hpp"
#include "calrank/rng.hpp"

namespace calrank {

PairScorer scorer_of(const RerankerModel& model) {
  return [&model](const InputVector& input) {
    return forward(model, input, ForwardMode::deterministic());
  };
}

PairScorer scorer_of(const CalibratedPredictor& predictor) {
  return [&predictor](const InputVector& input) { return predictor.predict(input); };
}

std::vector<std::string> interpretable_tokens(const std::vector<std::string>& context_tokens) {
  std::vector<std::string> distinct;
  for (const auto& tok : context_tokens)
    if (std::find(distinct.begin(), distinct.end(), tok) == distinct.end())
      distinct.push_back(tok);
  return distinct;
}

namespace {

// Weighted least squares via normal equations; falls back to a pseudo-inverse
// solve when the system is singular. Column 0 is an unpenalized intercept
// when with_intercept is set.
Eigen::VectorXd solve_weighted(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                               const Eigen::VectorXd& weights, double ridge, bool with_intercept,
                               bool* used_pinv) {
  const Eigen::MatrixXd weighted = weights.asDiagonal() * design;
  Eigen::MatrixXd normal = design.transpose() * weighted;
  for (Eigen::Index j = with_intercept ? 1 : 0; j < normal.rows(); ++j) normal(j, j) += ridge;
  const Eigen::VectorXd rhs = design.transpose() * (weights.asDiagonal() * targets);

  Eigen::VectorXd solution = normal.ldlt().solve(rhs);
  if (solution.allFinite() && (normal * solution - rhs).norm() <= 1e-8 * (1.0 + rhs.norm()))
    return solution;
  if (used_pinv) *used_pinv = true;
  const Eigen::VectorXd sqrt_w = weights.cwiseSqrt();
  const Eigen::MatrixXd scaled = sqrt_w.asDiagonal() * design;
  const Eigen::VectorXd scaled_y = sqrt_w.asDiagonal() * targets;
  return scaled.completeOrthogonalDecomposition().solve(scaled_y);
}

std::vector<std::string> masked_context(const std::vector<std::string>& context_tokens,
                                        const std::vector<std::string>& features,
                                        const std::vector<bool>& mask) {
  std::vector<std::string> kept;
  kept.reserve(context_tokens.size());
  for (const auto& tok : context_tokens) {
    const auto it = std::find(features.begin(), features.end(), tok);
    const auto idx = static_cast<std::size_t>(it - features.begin());
    if (idx < mask.size() && mask[idx]) kept.push_back(tok);
  }
  return kept;
}

CoalitionValue token_coalition_value(const PairScorer& scorer, const Query& query,
                                     const Document& context,
                                     const std::vector<std::string>& features,
                                     const std::unordered_map<std::string, std::uint32_t>& vocab,
                                     const VocabBinding& binding) {
  const std::vector<std::string> query_tokens = tokenize(query.text);
  return [=, &vocab](const std::vector<bool>& mask) {
    const auto kept = masked_context(context.tokens, features, mask);
    const InputVector input = encode_tokens(query_tokens, kept, vocab, binding);
    return scorer(input).probabilities[1];
  };
}

}  // namespace

Explanation lime_fit(const CoalitionValue& value, const std::vector<std::string>& feature_names,
                     const LimeOptions& options, std::vector<PerturbationSample>* samples_out) {
  const std::size_t d = feature_names.size();
  if (d == 0) throw InputError("lime_fit: no interpretable features");
  const std::size_t n = std::max<std::size_t>(options.n_samples, 1);
  const double width = options.kernel_width > 0.0
                           ? options.kernel_width
                           : 0.25 * std::sqrt(static_cast<double>(d));

  Rng rng(options.seed);
  std::vector<PerturbationSample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PerturbationSample sample;
    sample.mask.assign(d, true);
    if (i > 0)  // the first sample is always the unperturbed context
      for (std::size_t j = 0; j < d; ++j) sample.mask[j] = rng.bernoulli(0.5);
    const auto ones = static_cast<double>(
        std::count(sample.mask.begin(), sample.mask.end(), true));
    const double cosine = ones > 0.0 ? std::sqrt(ones / static_cast<double>(d)) : 0.0;
    const double distance = 1.0 - cosine;
    sample.proximity_weight = std::exp(-distance * distance / (width * width));
    sample.model_output = value(sample.mask);
    samples.push_back(std::move(sample));
  }

  const auto fit = [&](const std::vector<std::size_t>& cols, bool* pinv_flag) {
    Eigen::MatrixXd design(static_cast<Eigen::Index>(samples.size()),
                           static_cast<Eigen::Index>(cols.size() + 1));
    Eigen::VectorXd targets(static_cast<Eigen::Index>(samples.size()));
    Eigen::VectorXd weights(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      design(static_cast<Eigen::Index>(i), 0) = 1.0;
      for (std::size_t j = 0; j < cols.size(); ++j)
        design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) =
            samples[i].mask[cols[j]] ? 1.0 : 0.0;
      targets(static_cast<Eigen::Index>(i)) = samples[i].model_output;
      weights(static_cast<Eigen::Index>(i)) = samples[i].proximity_weight;
    }
    return solve_weighted(design, targets, weights, options.ridge_penalty, true, pinv_flag);
  };

  std::vector<std::size_t> all_cols(d);
  std::iota(all_cols.begin(), all_cols.end(), 0);
  Explanation explanation;
  explanation.method = ExplainMethod::Lime;
  const Eigen::VectorXd full_fit = fit(all_cols, &explanation.used_pseudo_inverse);

  std::vector<std::size_t> selected = all_cols;
  std::sort(selected.begin(), selected.end(), [&](std::size_t a, std::size_t b) {
    const double fa = std::abs(full_fit(static_cast<Eigen::Index>(a + 1)));
    const double fb = std::abs(full_fit(static_cast<Eigen::Index>(b + 1)));
    if (fa != fb) return fa > fb;
    return a < b;
  });
  if (selected.size() > options.n_features) selected.resize(options.n_features);
  std::sort(selected.begin(), selected.end());

  const Eigen::VectorXd refit = fit(selected, &explanation.used_pseudo_inverse);
  explanation.intercept = refit(0);
  for (std::size_t j = 0; j < selected.size(); ++j)
    explanation.weights.emplace_back(feature_names[selected[j]],
                                     refit(static_cast<Eigen::Index>(j + 1)));
  if (samples_out) *samples_out = std::move(samples);
  return explanation;
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  double result = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    result *= static_cast<double>(n - i + 1) / static_cast<double>(i);
  return result;
}

double shapley_kernel_weight(std::size_t d, std::size_t size) {
  return static_cast<double>(d - 1) /
         (binomial(d, size) * static_cast<double>(size) * static_cast<double>(d - size));
}

struct CoalitionRow {
  std::vector<bool> mask;
  double value = 0.0;
  double weight = 0.0;
};

}  // namespace

Explanation kernel_shap_fit(const CoalitionValue& value,
                            const std::vector<std::string>& feature_names,
                            const KernelShapOptions& options) {
  const std::size_t d = feature_names.size();
  if (d == 0) throw InputError("kernel_shap_fit: no interpretable features");

  Explanation explanation;
  explanation.method = ExplainMethod::KernelShap;

  const double f_empty = value(std::vector<bool>(d, false));
  const double f_full = value(std::vector<bool>(d, true));
  explanation.intercept = f_empty;

  if (d == 1) {
    explanation.weights.emplace_back(feature_names[0], f_full - f_empty);
    return explanation;
  }

  std::vector<CoalitionRow> rows;
  const bool enumerate =
      !options.force_sampling && d < 63 &&
      (1ULL << d) <= 2 * std::max<std::size_t>(options.n_samples, 1);
  if (enumerate) {
    for (std::uint64_t bits = 1; bits + 1 < (1ULL << d); ++bits) {
      CoalitionRow row;
      row.mask.resize(d);
      std::size_t size = 0;
      for (std::size_t j = 0; j < d; ++j) {
        row.mask[j] = (bits >> j) & 1ULL;
        size += row.mask[j] ? 1 : 0;
      }
      row.weight = shapley_kernel_weight(d, size);
      row.value = value(row.mask);
      rows.push_back(std::move(row));
    }
  } else {
    // Sample coalition sizes with probability proportional to the total
    // kernel mass of that size, then a uniform coalition of that size; the
    // kernel is absorbed by the sampling distribution.
    std::vector<double> size_cdf(d - 1);
    double mass = 0.0;
    for (std::size_t s = 1; s < d; ++s) {
      mass += 1.0 / (static_cast<double>(s) * static_cast<double>(d - s));
      size_cdf[s - 1] = mass;
    }
    for (double& c : size_cdf) c /= mass;

    Rng rng(options.seed);
    std::map<std::vector<bool>, std::pair<double, double>> pooled;  // mask -> (count, value)
    std::vector<std::size_t> perm(d);
    for (std::size_t draw = 0; draw < std::max<std::size_t>(options.n_samples, 1); ++draw) {
      const double u = rng.next_double();
      std::size_t s = 1;
      while (s < d - 1 && u > size_cdf[s - 1]) ++s;
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < s; ++i)
        std::swap(perm[i], perm[i + rng.below(d - i)]);
      std::vector<bool> mask(d, false);
      for (std::size_t i = 0; i < s; ++i) mask[perm[i]] = true;
      auto [it, inserted] = pooled.try_emplace(mask, 0.0, 0.0);
      if (inserted) it->second.second = value(mask);
      it->second.first += 1.0;
    }
    for (auto& [mask, stats] : pooled)
      rows.push_back({mask, stats.second, stats.first});
  }

  // Efficiency is enforced by eliminating the last feature from the system.
  const double span = f_full - f_empty;
  Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(d - 1));
  Eigen::VectorXd targets(static_cast<Eigen::Index>(rows.size()));
  Eigen::VectorXd weights(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double last = rows[i].mask[d - 1] ? 1.0 : 0.0;
    for (std::size_t j = 0; j + 1 < d; ++j)
      design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (rows[i].mask[j] ? 1.0 : 0.0) - last;
    targets(static_cast<Eigen::Index>(i)) = rows[i].value - f_empty - last * span;
    weights(static_cast<Eigen::Index>(i)) = rows[i].weight;
  }
  const Eigen::VectorXd phi =
      solve_weighted(design, targets, weights, 0.0, false, &explanation.used_pseudo_inverse);

  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < d; ++j) {
    explanation.weights.emplace_back(feature_names[j], phi(static_cast<Eigen::Index>(j)));
    sum += phi(static_cast<Eigen::Index>(j));
  }
  explanation.weights.emplace_back(feature_names[d - 1], span - sum);
  return explanation;
}

std::vector<double> exact_shapley(const CoalitionValue& value, std::size_t d) {
  if (d < 1 || d > 12) throw InputError("exact_shapley: d must be in [1, 12]");

  const std::uint64_t n_coalitions = 1ULL << d;
  std::vector<double> cache(n_coalitions);
  std::vector<bool> mask(d);
  for (std::uint64_t bits = 0; bits < n_coalitions; ++bits) {
    for (std::size_t j = 0; j < d; ++j) mask[j] = (bits >> j) & 1ULL;
    cache[bits] = value(mask);
  }

  std::vector<double> factorial(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i) factorial[i] = factorial[i - 1] * static_cast<double>(i);

  std::vector<double> shapley(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::uint64_t bits = 0; bits < n_coalitions; ++bits) {
      if ((bits >> i) & 1ULL) continue;
      const auto size = static_cast<std::size_t>(std::popcount(bits));
      const double coeff = factorial[size] * factorial[d - size - 1] / factorial[d];
      shapley[i] += coeff * (cache[bits | (1ULL << i)] - cache[bits]);
    }
  }
  return shapley;
}

Explanation lime_explain(const PairScorer& scorer, const Query& query, const Document& context,
                         const std::unordered_map<std::string, std::uint32_t>& vocab,
                         const VocabBinding& binding, const LimeOptions& options) {
  const auto features = interpretable_tokens(context.tokens);
  if (features.empty()) throw InputError("lime_explain: context has no tokens");
  auto value = token_coalition_value(scorer, query, context, features, vocab, binding);
  Explanation explanation = lime_fit(value, features, options);
  explanation.context_id = context.id;
  return explanation;
}

Explanation kernel_shap_explain(const PairScorer& scorer, const Query& query,
                                const Document& context,
                                const std::unordered_map<std::string, std::uint32_t>& vocab,
                                const VocabBinding& binding, const KernelShapOptions& options) {
  const auto features = interpretable_tokens(context.tokens);
  if (features.empty()) throw InputError("kernel_shap_explain: context has no tokens");
  auto value = token_coalition_value(scorer, query, context, features, vocab, binding);
  Explanation explanation = kernel_shap_fit(value, features, options);
  explanation.context_id = context.id;
  return explanation;
}

double FeatureScoreTable::score_of(const std::vector<std::string>& tokens) const {
  double total = 0.0;
  for (const auto& tok : interpretable_tokens(tokens)) {
    auto it = scores.find(tok);
    if (it != scores.end()) total += it->second;
  }
  return total;
}

FeatureScoreTable build_feature_score_table(const std::vector<Explanation>& explanations) {
  FeatureScoreTable table;
  if (explanations.empty()) return table;
  table.method = explanations.front().method;
  for (const Explanation& exp : explanations) {
    if (exp.method != table.method)
      throw InputError("build_feature_score_table: mixed explanation methods");
    for (const auto& [token, weight] : exp.weights) table.scores[token] += weight;
    table.provenance.push_back(exp.context_id);
  }
  return table;
}

std::vector<RankedCandidate> rerank_by_feature_scores(const FeatureScoreTable& table,
                                                      const std::vector<RankedCandidate>& candidates,
                                                      std::size_t k) {
  if (candidates.empty()) throw InputError("rerank_by_feature_scores: no candidates");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    scored.emplace_back(table.score_of(candidates[i].doc->tokens), i);
  std::sort(scored.begin(), scored.end(), [&](const auto& lhs, const auto& rhs) {
    if (lhs.first != rhs.first) return lhs.first > rhs.first;
    const auto& lc = candidates[lhs.second];
    const auto& rc = candidates[rhs.second];
    if (lc.base.rank != rc.base.rank) return lc.base.rank < rc.base.rank;
    return lc.doc->id < rc.doc->id;
  });
  std::vector<RankedCandidate> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i)
    out.push_back(candidates[scored[i].second]);
  return out;
}

std::vector<RankedCandidate> explainer_rerank_pipeline(
    const PairScorer& scorer, const Query& query, const std::vector<RankedCandidate>& candidates,
    ExplainMethod method, const ExplainBudgets& budgets,
    const std::unordered_map<std::string, std::uint32_t>& vocab, const VocabBinding& binding,
    FeatureScoreTable* table_out) {
  if (candidates.empty()) throw InputError("explainer_rerank_pipeline: no candidates");
  const std::size_t budget = method == ExplainMethod::Lime ? budgets.lime_contexts
                                                           : budgets.shap_contexts;
  const std::size_t n_explain = std::min(budget, candidates.size());

  std::vector<Explanation> explanations;
  for (std::size_t i = 0; i < n_explain; ++i) {
    const Document& context = *candidates[i].doc;
    if (method == ExplainMethod::Lime) {
      LimeOptions opts = budgets.lime;
      opts.seed = derive_seed(budgets.lime.seed, i);
      explanations.push_back(lime_explain(scorer, query, context, vocab, binding, opts));
    } else {
      KernelShapOptions opts = budgets.shap;
      opts.seed = derive_seed(budgets.shap.seed, i);
      explanations.push_back(kernel_shap_explain(scorer, query, context, vocab, binding, opts));
    }
  }
  const FeatureScoreTable table = build_feature_score_table(explanations);
  if (table_out) *table_out = table;
  return rerank_by_feature_scores(table, candidates, budgets.rerank_depth);
}

void export_explanations(const std::vector<std::pair<std::string, Explanation>>& by_query,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write explanation file " + path);
  for (const auto& [query_id, exp] : by_query) {
    for (const auto& [token, weight] : exp.weights) {
      nlohmann::json record{{"query_id", query_id},
                            {"context_id", exp.context_id},
                            {"method", exp.method == ExplainMethod::Lime ? "lime" : "shap"},
                            {"token", token},
                            {"weight", weight}};
      out << record.dump() << "\n";
    }
  }
}

}  // namespace calrank
