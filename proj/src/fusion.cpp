#include "calrank/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "calrank/errors.hpp"

namespace calrank {

ContextSplit ContextSplit::parse(const std::string& text) {
  ContextSplit split;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(';', start), text.size());
    const std::string part = text.substr(start, end - start);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw InputError("bad context split \"" + text + "\"");
    const std::size_t count = std::stoull(part);
    if (count < 1) throw InputError("context split counts must be >= 1");
    split.counts.push_back(count);
    if (end == text.size()) break;
    start = end + 1;
  }
  if (split.counts.empty()) throw InputError("empty context split");
  return split;
}

std::size_t ContextSplit::total() const {
  std::size_t sum = 0;
  for (const std::size_t c : counts) sum += c;
  return sum;
}

std::string ContextSplit::to_string() const {
  std::string out;
  for (const std::size_t c : counts) {
    if (!out.empty()) out += ";";
    out += std::to_string(c);
  }
  return out;
}

namespace {

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (const double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

void check_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (const double x : p) {
    if (!(x >= 0.0 && x <= 1.0 + 1e-9))
      throw InputError(std::string("jsd: ") + name + " has entries outside [0, 1]");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InputError(std::string("jsd: ") + name + " is not normalized");
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("jsd: length mismatch");
  check_distribution(p, "P");
  check_distribution(q, "Q");
  std::vector<double> mixture(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mixture[i] = 0.5 * (p[i] + q[i]);
  return entropy(mixture) - 0.5 * (entropy(p) + entropy(q));
}

double jsd_regularized_loss(const std::vector<ImputationPair>& batch,
                            const std::vector<double>& f, double lambda, bool* clamped) {
  if (batch.empty()) throw InputError("jsd_regularized_loss: empty batch");
  if (f.size() != batch.size())
    throw InputError("jsd_regularized_loss: one f value per pair required");
  if (lambda < 0.0) throw InputError("jsd_regularized_loss: lambda must be >= 0");

  double cross_entropy = 0.0;
  double divergence = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double fi = f[i];
    if (fi < 1e-12 || fi > 1.0 - 1e-12) {
      fi = std::clamp(fi, 1e-12, 1.0 - 1e-12);
      if (clamped) *clamped = true;
    }
    cross_entropy -= batch[i].label == 1 ? std::log(fi) : std::log(1.0 - fi);

    // Two-component softmax of (g(x_i), g(z_i)) and its mirror.
    const double gap = batch[i].imputed_score - batch[i].gold_score;
    const double p = 1.0 / (1.0 + std::exp(-gap));
    const double dist_p[2] = {p, 1.0 - p};
    const double dist_q[2] = {1.0 - p, p};
    divergence += jsd(dist_p, dist_q);
  }
  const double n = static_cast<double>(batch.size());
  return cross_entropy / n + lambda * divergence / n;
}

std::vector<ContextSlot> symmetric_imputation_batch(const std::vector<std::string>& gold_ids,
                                                    const std::vector<std::string>& imputed_ids,
                                                    std::size_t slots_per_side) {
  if (slots_per_side < 1)
    throw InputError("symmetric_imputation_batch: slots_per_side must be >= 1");
  std::vector<ContextSlot> slots;
  slots.reserve(2 * slots_per_side);
  for (std::size_t i = 0; i < slots_per_side; ++i)
    slots.push_back(i < gold_ids.size() ? ContextSlot{SlotKind::Gold, gold_ids[i]}
                                        : ContextSlot{});
  for (std::size_t i = 0; i < slots_per_side; ++i)
    slots.push_back(i < imputed_ids.size() ? ContextSlot{SlotKind::Imputed, imputed_ids[i]}
                                           : ContextSlot{});
  return slots;
}

double DiscreteJoint::total() const {
  double sum = 0.0;
  for (const auto& row : counts)
    for (const double c : row) sum += c;
  return sum;
}

double mutual_information(const DiscreteJoint& joint) {
  const double total = joint.total();
  if (!(total > 0.0)) throw InputError("mutual_information: total count must be > 0");

  const std::size_t nx = joint.counts.size();
  const std::size_t ny = nx == 0 ? 0 : joint.counts.front().size();
  std::vector<double> px(nx, 0.0), py(ny, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    if (joint.counts[x].size() != ny)
      throw InputError("mutual_information: ragged joint counts");
    for (std::size_t y = 0; y < ny; ++y) {
      if (joint.counts[x][y] < 0.0)
        throw InputError("mutual_information: negative count");
      px[x] += joint.counts[x][y] / total;
      py[y] += joint.counts[x][y] / total;
    }
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y) {
      const double pxy = joint.counts[x][y] / total;
      if (pxy > 0.0) mi += pxy * std::log(pxy / (px[x] * py[y]));
    }
  return mi;
}

double perspective_mi(const std::vector<const Document*>& side_a,
                      const std::vector<const Document*>& side_b) {
  if (side_a.empty() || side_b.empty())
    throw InputError("perspective_mi: both context sets must be nonempty");
  std::set<std::string> tokens_a, tokens_b, all;
  for (const Document* doc : side_a)
    for (const auto& tok : doc->tokens) {
      tokens_a.insert(tok);
      all.insert(tok);
    }
  for (const Document* doc : side_b)
    for (const auto& tok : doc->tokens) {
      tokens_b.insert(tok);
      all.insert(tok);
    }
  DiscreteJoint joint{{{0.0, 0.0}, {0.0, 0.0}}};
  for (const auto& tok : all) {
    const std::size_t in_a = tokens_a.count(tok) ? 1 : 0;
    const std::size_t in_b = tokens_b.count(tok) ? 1 : 0;
    joint.counts[in_a][in_b] += 1.0;
  }
  return mutual_information(joint);
}

std::vector<std::string> merge_contexts(const ContextSplit& split,
                                        const std::vector<std::vector<std::string>>& ranked_ids) {
  if (ranked_ids.size() != split.counts.size())
    throw InputError("merge_contexts: one ranked list per split component required");
  std::vector<std::string> merged;
  std::unordered_set<std::string> seen;
  for (std::size_t j = 0; j < split.counts.size(); ++j) {
    std::size_t taken = 0;
    for (const auto& id : ranked_ids[j]) {
      if (taken == split.counts[j]) break;
      if (!seen.insert(id).second) continue;  // duplicate: backfill from the same list
      merged.push_back(id);
      ++taken;
    }
  }
  return merged;
}

std::string extractive_read(const std::vector<const Document*>& contexts,
                            const std::vector<std::string>& query_tokens,
                            const std::function<double(const std::string&)>& idf) {
  if (contexts.empty()) throw InputError("extractive_read: no contexts");
  constexpr std::size_t kMaxSpan = 5;
  constexpr std::size_t kWindow = 10;

  std::vector<std::string> distinct_query;
  for (const auto& tok : query_tokens)
    if (std::find(distinct_query.begin(), distinct_query.end(), tok) == distinct_query.end())
      distinct_query.push_back(tok);
  std::vector<double> query_idf(distinct_query.size());
  for (std::size_t q = 0; q < distinct_query.size(); ++q) query_idf[q] = idf(distinct_query[q]);

  double best_score = -1.0;
  const Document* best_doc = nullptr;
  std::size_t best_start = 0, best_len = 0;

  std::vector<std::vector<std::size_t>> positions(distinct_query.size());
  for (const Document* doc : contexts) {
    const auto& tokens = doc->tokens;
    for (auto& p : positions) p.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i)
      for (std::size_t q = 0; q < distinct_query.size(); ++q)
        if (tokens[i] == distinct_query[q]) positions[q].push_back(i);

    // Occurrence in [a, b)?
    const auto hit = [](const std::vector<std::size_t>& pos, std::size_t a, std::size_t b) {
      auto it = std::lower_bound(pos.begin(), pos.end(), a);
      return it != pos.end() && *it < b;
    };

    for (std::size_t start = 0; start < tokens.size(); ++start) {
      for (std::size_t len = 1; len <= kMaxSpan && start + len <= tokens.size(); ++len) {
        const std::size_t lo = start >= kWindow ? start - kWindow : 0;
        const std::size_t hi = std::min(tokens.size(), start + len + kWindow);
        double score = 0.0;
        // The window excludes the span's own tokens.
        for (std::size_t q = 0; q < distinct_query.size(); ++q)
          if (hit(positions[q], lo, start) || hit(positions[q], start + len, hi))
            score += query_idf[q];
        if (score > best_score) {
          best_score = score;
          best_doc = doc;
          best_start = start;
          best_len = len;
        }
      }
    }
  }
  if (!best_doc) return "";
  std::string answer;
  for (std::size_t i = best_start; i < best_start + best_len; ++i) {
    if (!answer.empty()) answer += " ";
    answer += best_doc->tokens[i];
  }
  return answer;
}

}  // namespace calrank
