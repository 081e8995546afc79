#include "calrank/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

#include "calrank/errors.hpp"
#include "calrank/rng.hpp"

namespace calrank {

namespace {

std::uint64_t fnv1a64(const std::string& s, std::uint64_t salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ salt;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint32_t VocabBinding::feature_of(
    const std::string& token, int segment,
    const std::unordered_map<std::string, std::uint32_t>& vocab) const {
  const std::uint32_t base = segment == 0 ? 0 : segment_width();
  auto it = vocab.find(token);
  if (it != vocab.end() && it->second < vocab_size) return base + it->second;
  return base + vocab_size +
         static_cast<std::uint32_t>(fnv1a64(token, hash_salt) % kOovBuckets);
}

bool ProbabilityDistribution::is_normalized(double tol) const {
  double sum = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0 + tol)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

std::size_t RerankerModel::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

std::vector<double> RerankerModel::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  flat.insert(flat.end(), w1.begin(), w1.end());
  flat.insert(flat.end(), b1.begin(), b1.end());
  flat.insert(flat.end(), w2.begin(), w2.end());
  flat.insert(flat.end(), b2.begin(), b2.end());
  return flat;
}

void RerankerModel::set_flat_parameters(const std::vector<double>& flat) {
  if (flat.size() != parameter_count())
    throw InputError("set_flat_parameters: parameter shape mismatch");
  auto it = flat.begin();
  const auto take = [&](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(w1);
  take(b1);
  take(w2);
  take(b2);
}

RerankerModel make_reranker(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.hidden_dim == 0) throw InputError("make_reranker: hidden_dim must be >= 1");
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0))
    throw InputError("make_reranker: dropout_rate must be in [0, 1)");
  RerankerModel model;
  model.binding = {spec.vocab_size, spec.hash_salt};
  model.hidden_dim = spec.hidden_dim;
  model.dropout_rate = spec.dropout_rate;
  const std::size_t fan_in = static_cast<std::size_t>(model.binding.feature_dim());
  model.w1.resize(fan_in * spec.hidden_dim);
  model.b1.assign(spec.hidden_dim, 0.0);
  model.w2.assign(2 * spec.hidden_dim, 0.0);
  model.b2.assign(2, 0.0);
  Rng rng(derive_seed(seed, 0x1717));
  for (double& w : model.w1) w = (rng.next_double() - 0.5) * 0.1;
  return model;
}

InputVector encode_tokens(const std::vector<std::string>& query_tokens,
                          const std::vector<std::string>& context_tokens,
                          const std::unordered_map<std::string, std::uint32_t>& vocab,
                          const VocabBinding& binding) {
  std::map<std::uint32_t, double> counts;
  for (const auto& tok : query_tokens) counts[binding.feature_of(tok, 0, vocab)] += 1.0;
  for (const auto& tok : context_tokens) counts[binding.feature_of(tok, 1, vocab)] += 1.0;
  counts[binding.separator_feature()] = 1.0;
  counts[binding.bias_feature()] = 1.0;
  InputVector input;
  input.entries.assign(counts.begin(), counts.end());
  return input;
}

InputVector encode_pair(const Query& query, const Document& doc,
                        const std::unordered_map<std::string, std::uint32_t>& vocab,
                        const VocabBinding& binding) {
  return encode_tokens(tokenize(query.text), doc.tokens, vocab, binding);
}

namespace {

struct ForwardTrace {
  std::vector<double> pre_hidden;      // z1
  std::vector<double> hidden;          // after relu, dropout and scaling
  std::vector<double> mask_scale;      // per-unit multiplier applied after relu
  std::vector<double> logits;          // z2
  std::vector<double> probabilities;   // softmax(z2)
};

ForwardTrace run_forward(const RerankerModel& model, const InputVector& input,
                         const ForwardMode& mode) {
  const std::size_t hidden_dim = model.hidden_dim;
  ForwardTrace trace;
  trace.pre_hidden.assign(model.b1.begin(), model.b1.end());
  for (const auto& [feature, weight] : input.entries) {
    if (feature >= model.binding.feature_dim())
      throw InputError("forward: feature index out of range");
    const double* row = &model.w1[static_cast<std::size_t>(feature) * hidden_dim];
    for (std::size_t j = 0; j < hidden_dim; ++j) trace.pre_hidden[j] += weight * row[j];
  }

  trace.mask_scale.assign(hidden_dim, 1.0);
  if (mode.kind == ForwardMode::Kind::SampledMask && model.dropout_rate > 0.0) {
    Rng rng(mode.seed);
    const double keep_scale = 1.0 / (1.0 - model.dropout_rate);
    for (std::size_t j = 0; j < hidden_dim; ++j)
      trace.mask_scale[j] = rng.bernoulli(model.dropout_rate) ? 0.0 : keep_scale;
  }

  trace.hidden.resize(hidden_dim);
  for (std::size_t j = 0; j < hidden_dim; ++j)
    trace.hidden[j] = std::max(0.0, trace.pre_hidden[j]) * trace.mask_scale[j];

  trace.logits.assign(model.b2.begin(), model.b2.end());
  for (std::size_t c = 0; c < 2; ++c) {
    const double* row = &model.w2[c * hidden_dim];
    for (std::size_t j = 0; j < hidden_dim; ++j) trace.logits[c] += row[j] * trace.hidden[j];
  }
  for (double z : trace.logits)
    if (!std::isfinite(z)) throw NumericError("forward: non-finite logits");

  const double zmax = std::max(trace.logits[0], trace.logits[1]);
  double denom = 0.0;
  trace.probabilities.resize(2);
  for (std::size_t c = 0; c < 2; ++c) {
    trace.probabilities[c] = std::exp(trace.logits[c] - zmax);
    denom += trace.probabilities[c];
  }
  for (double& p : trace.probabilities) p /= denom;
  return trace;
}

}  // namespace

ProbabilityDistribution forward(const RerankerModel& model, const InputVector& input,
                                const ForwardMode& mode) {
  return {run_forward(model, input, mode).probabilities};
}

std::vector<double> hidden_activations(const RerankerModel& model, const InputVector& input,
                                       const ForwardMode& mode) {
  return run_forward(model, input, mode).hidden;
}

double cyclic_lr(std::size_t t, std::size_t total_steps, std::size_t cycles, double alpha0) {
  if (cycles < 1) throw InputError("cyclic_lr: cycles must be >= 1");
  if (t < 1 || t > total_steps) throw InputError("cyclic_lr: step out of range");
  const std::size_t cycle_len = (total_steps + cycles - 1) / cycles;
  const double phase = static_cast<double>((t - 1) % cycle_len) / static_cast<double>(cycle_len);
  return alpha0 / 2.0 * (std::cos(std::numbers::pi * phase) + 1.0);
}

std::size_t total_steps(std::size_t dataset_size, const TrainingConfig& config) {
  const std::size_t steps_per_epoch = (dataset_size + config.batch_size - 1) / config.batch_size;
  return steps_per_epoch * config.epochs;
}

namespace {

struct Gradients {
  std::vector<double> w1, b1, w2, b2;

  explicit Gradients(const RerankerModel& model)
      : w1(model.w1.size(), 0.0),
        b1(model.b1.size(), 0.0),
        w2(model.w2.size(), 0.0),
        b2(model.b2.size(), 0.0) {}

  void scale(double s) {
    for (double& g : w1) g *= s;
    for (double& g : b1) g *= s;
    for (double& g : w2) g *= s;
    for (double& g : b2) g *= s;
  }
};

// Accumulates cross-entropy gradients for one example; returns its loss.
double backward(const RerankerModel& model, const InputVector& input, int label,
                const ForwardMode& mode, Gradients& grads) {
  const std::size_t hidden_dim = model.hidden_dim;
  const ForwardTrace trace = run_forward(model, input, mode);
  const double p_true = std::max(trace.probabilities[static_cast<std::size_t>(label)], 1e-300);
  const double loss = -std::log(p_true);

  double dlogits[2];
  for (std::size_t c = 0; c < 2; ++c)
    dlogits[c] = trace.probabilities[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);

  std::vector<double> dhidden(hidden_dim, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    const double* w2_row = &model.w2[c * hidden_dim];
    double* g2_row = &grads.w2[c * hidden_dim];
    for (std::size_t j = 0; j < hidden_dim; ++j) {
      g2_row[j] += dlogits[c] * trace.hidden[j];
      dhidden[j] += dlogits[c] * w2_row[j];
    }
    grads.b2[c] += dlogits[c];
  }

  std::vector<double> dpre(hidden_dim);
  for (std::size_t j = 0; j < hidden_dim; ++j)
    dpre[j] = trace.pre_hidden[j] > 0.0 ? dhidden[j] * trace.mask_scale[j] : 0.0;

  for (const auto& [feature, weight] : input.entries) {
    double* g1_row = &grads.w1[static_cast<std::size_t>(feature) * hidden_dim];
    for (std::size_t j = 0; j < hidden_dim; ++j) g1_row[j] += weight * dpre[j];
  }
  for (std::size_t j = 0; j < hidden_dim; ++j) grads.b1[j] += dpre[j];
  return loss;
}

class AdamW {
public:
  AdamW(std::size_t size, const TrainingConfig& config)
      : m_(size, 0.0), v_(size, 0.0), config_(config) {}

  void step(std::size_t t, double lr, std::vector<double>& params,
            const std::vector<double>& grads, std::size_t offset) {
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double& m = m_[offset + i];
      double& v = v_[offset + i];
      m = config_.beta1 * m + (1.0 - config_.beta1) * grads[i];
      v = config_.beta2 * v + (1.0 - config_.beta2) * grads[i] * grads[i];
      const double update = (m / bc1) / (std::sqrt(v / bc2) + config_.adam_epsilon);
      params[i] -= lr * (update + config_.weight_decay * params[i]);
    }
  }

private:
  std::vector<double> m_, v_;
  TrainingConfig config_;
};

}  // namespace

TrainResult train(const RerankerModel& model, const std::vector<Example>& dataset,
                  const TrainingConfig& config) {
  if (dataset.empty()) throw InputError("train: empty dataset");
  if (config.batch_size < 1 || config.epochs < 1)
    throw InputError("train: batch_size and epochs must be >= 1");
  for (const Example& ex : dataset)
    if (ex.label != 0 && ex.label != 1) throw InputError("train: labels must be 0 or 1");

  const std::size_t n = dataset.size();
  const std::size_t steps = total_steps(n, config);
  const bool cyclic = config.schedule == Schedule::CyclicAnnealing;
  if (cyclic && config.cycles > steps)
    throw InputError("train: more cycles than training steps");
  const std::size_t cycle_len = cyclic ? (steps + config.cycles - 1) / config.cycles : 0;
  const std::size_t stride = std::max<std::size_t>(1, (steps + 19) / 20);

  TrainResult result{model, {}};
  RerankerModel& net = result.model;

  AdamW opt_w1(net.w1.size(), config);
  AdamW opt_b1(net.b1.size(), config);
  AdamW opt_w2(net.w2.size(), config);
  AdamW opt_b2(net.b2.size(), config);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed ^ 0x5f5f5f5fULL, epoch));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      ++t;
      const std::size_t end = std::min(n, start + config.batch_size);
      const double lr = cyclic ? cyclic_lr(t, steps, config.cycles, config.learning_rate)
                               : config.learning_rate;

      Gradients grads(net);
      double loss = 0.0;
      const std::uint64_t step_seed = derive_seed(config.seed, t);
      try {
        for (std::size_t i = start; i < end; ++i) {
          const Example& ex = dataset[order[i]];
          const ForwardMode mode =
              net.dropout_rate > 0.0
                  ? ForwardMode::sampled_mask(derive_seed(step_seed, i - start))
                  : ForwardMode::deterministic();
          loss += backward(net, ex.input, ex.label, mode, grads);
        }
      } catch (const NumericError&) {
        throw NumericError("train: non-finite loss at step " + std::to_string(t));
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      loss *= inv;
      grads.scale(inv);
      if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss at step " + std::to_string(t));

      opt_w1.step(t, lr, net.w1, grads.w1, 0);
      opt_b1.step(t, lr, net.b1, grads.b1, 0);
      opt_w2.step(t, lr, net.w2, grads.w2, 0);
      opt_b2.step(t, lr, net.b2, grads.b2, 0);

      const bool boundary = cyclic ? (t % cycle_len == 0) : (t % stride == 0);
      if (config.collect_checkpoints && (boundary || t == steps))
        if (result.checkpoints.empty() || result.checkpoints.back().step != t)
          result.checkpoints.push_back(
              {net.flat_parameters(), t, cyclic ? (t - 1) / cycle_len + 1 : 0});
    }
  }
  return result;
}

double mean_cross_entropy(const RerankerModel& model, const std::vector<Example>& dataset) {
  if (dataset.empty()) throw InputError("mean_cross_entropy: empty dataset");
  double loss = 0.0;
  for (const Example& ex : dataset) {
    const ForwardTrace trace = run_forward(model, ex.input, ForwardMode::deterministic());
    loss -= std::log(std::max(trace.probabilities[static_cast<std::size_t>(ex.label)], 1e-300));
  }
  return loss / static_cast<double>(dataset.size());
}

double gradient_check(const RerankerModel& model, const InputVector& input, int label,
                      double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw InputError("gradient_check: epsilon must be in (0, 1e-2]");

  Gradients grads(model);
  backward(model, input, label, ForwardMode::deterministic(), grads);
  std::vector<double> analytic;
  analytic.reserve(model.parameter_count());
  analytic.insert(analytic.end(), grads.w1.begin(), grads.w1.end());
  analytic.insert(analytic.end(), grads.b1.begin(), grads.b1.end());
  analytic.insert(analytic.end(), grads.w2.begin(), grads.w2.end());
  analytic.insert(analytic.end(), grads.b2.begin(), grads.b2.end());

  RerankerModel probe = model;
  double* blocks[] = {probe.w1.data(), probe.b1.data(), probe.w2.data(), probe.b2.data()};
  const std::size_t sizes[] = {probe.w1.size(), probe.b1.size(), probe.w2.size(),
                               probe.b2.size()};
  const auto loss = [&] {
    const ForwardTrace trace = run_forward(probe, input, ForwardMode::deterministic());
    return -std::log(std::max(trace.probabilities[static_cast<std::size_t>(label)], 1e-300));
  };

  double worst = 0.0;
  std::size_t flat_index = 0;
  for (std::size_t block = 0; block < 4; ++block) {
    for (std::size_t i = 0; i < sizes[block]; ++i, ++flat_index) {
      double& param = blocks[block][i];
      const double saved = param;
      param = saved + epsilon;
      const double up = loss();
      param = saved - epsilon;
      const double down = loss();
      param = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max(std::abs(analytic[flat_index]), std::abs(numeric));
      const double err = std::abs(analytic[flat_index] - numeric);
      worst = std::max(worst, denom < 1e-8 ? err : err / denom);
    }
  }
  return worst;
}

namespace {

constexpr char kModelMagic[4] = {'C', 'R', 'K', 'M'};
constexpr std::uint8_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("model file truncated");
  return value;
}

void write_vec(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_vec(std::istream& in, std::vector<double>& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw InputError("model file truncated");
}

}  // namespace

void save_model_stream(const RerankerModel& model, std::ostream& out) {
  out.write(kModelMagic, 4);
  write_pod(out, kModelVersion);
  write_pod(out, model.binding.vocab_size);
  write_pod(out, model.hidden_dim);
  write_pod(out, static_cast<std::uint32_t>(2));
  write_pod(out, model.dropout_rate);
  write_pod(out, model.binding.hash_salt);
  write_vec(out, model.w1);
  write_vec(out, model.b1);
  write_vec(out, model.w2);
  write_vec(out, model.b2);
}

RerankerModel load_model_stream(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw InputError("not a reranker model file");
  if (read_pod<std::uint8_t>(in) != kModelVersion)
    throw InputError("unsupported model version");
  RerankerModel model;
  model.binding.vocab_size = read_pod<std::uint32_t>(in);
  model.hidden_dim = read_pod<std::uint32_t>(in);
  if (read_pod<std::uint32_t>(in) != 2) throw InputError("unsupported class count");
  model.dropout_rate = read_pod<double>(in);
  model.binding.hash_salt = read_pod<std::uint64_t>(in);
  model.w1.resize(static_cast<std::size_t>(model.binding.feature_dim()) * model.hidden_dim);
  model.b1.resize(model.hidden_dim);
  model.w2.resize(2 * model.hidden_dim);
  model.b2.resize(2);
  read_vec(in, model.w1);
  read_vec(in, model.b1);
  read_vec(in, model.w2);
  read_vec(in, model.b2);
  return model;
}

void save_model(const RerankerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write model file " + path);
  save_model_stream(model, out);
}

RerankerModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file " + path);
  return load_model_stream(in);
}

}  // namespace calrank
