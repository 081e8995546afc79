#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "calrank/corpus.hpp"

namespace calrank {

// Feature-space layout shared by a model and everything that encodes for it.
// Query-segment and context-segment features occupy disjoint index ranges;
// out-of-vocabulary tokens hash into a reserved bucket range per segment.
struct VocabBinding {
  static constexpr std::uint32_t kOovBuckets = 1u << 15;
  static constexpr std::uint64_t kDefaultSalt = 0x7a3c9f2b11d4e6ULL;

  std::uint32_t vocab_size = 0;
  std::uint64_t hash_salt = kDefaultSalt;

  std::uint32_t segment_width() const { return vocab_size + kOovBuckets; }
  std::uint32_t feature_dim() const { return 2 * segment_width() + 2; }
  std::uint32_t separator_feature() const { return 2 * segment_width(); }
  std::uint32_t bias_feature() const { return 2 * segment_width() + 1; }

  // segment 0 = query, 1 = context.
  std::uint32_t feature_of(const std::string& token, int segment,
                           const std::unordered_map<std::string, std::uint32_t>& vocab) const;
};

// Sparse feature vector; entries sorted by index, indices unique.
struct InputVector {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

struct ProbabilityDistribution {
  std::vector<double> probabilities;

  // Entries in [0,1], sum within 1e-9 of one.
  bool is_normalized(double tol = 1e-9) const;
};

// Two-layer scorer: softmax(W2 relu(W1 x + b1) + b2), hidden-layer dropout.
struct RerankerModel {
  VocabBinding binding;
  std::uint32_t hidden_dim = 0;
  double dropout_rate = 0.0;
  std::vector<double> w1;  // [feature][hidden], feature-major
  std::vector<double> b1;  // [hidden]
  std::vector<double> w2;  // [class][hidden], 2 classes
  std::vector<double> b2;  // [2]

  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& flat);
};

struct ModelSpec {
  std::uint32_t vocab_size = 0;
  std::uint32_t hidden_dim = 32;
  double dropout_rate = 0.0;
  std::uint64_t hash_salt = VocabBinding::kDefaultSalt;
};

// Hidden weights seeded uniform in [-0.05, 0.05); output layer zeroed, so an
// untrained model predicts the uniform distribution.
RerankerModel make_reranker(const ModelSpec& spec, std::uint64_t seed);

struct ForwardMode {
  enum class Kind { Deterministic, SampledMask };
  Kind kind = Kind::Deterministic;
  std::uint64_t seed = 0;

  static ForwardMode deterministic() { return {}; }
  static ForwardMode sampled_mask(std::uint64_t seed) {
    return {Kind::SampledMask, seed};
  }
};

InputVector encode_pair(const Query& query, const Document& doc,
                        const std::unordered_map<std::string, std::uint32_t>& vocab,
                        const VocabBinding& binding);
InputVector encode_tokens(const std::vector<std::string>& query_tokens,
                          const std::vector<std::string>& context_tokens,
                          const std::unordered_map<std::string, std::uint32_t>& vocab,
                          const VocabBinding& binding);

ProbabilityDistribution forward(const RerankerModel& model, const InputVector& input,
                                const ForwardMode& mode);
// Post-dropout hidden activations for the same pass forward() would run.
std::vector<double> hidden_activations(const RerankerModel& model, const InputVector& input,
                                       const ForwardMode& mode);

// Cyclic cosine annealing over cycles of length ceil(T / M); 1 <= t <= T.
double cyclic_lr(std::size_t t, std::size_t total_steps, std::size_t cycles, double alpha0);

enum class Schedule { Constant, CyclicAnnealing };

struct TrainingConfig {
  double learning_rate = 1e-2;  // sized for the small bag-of-tokens model;
                                // transformer-scale rerankers run nearer 5e-5
  std::size_t epochs = 4;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::Constant;
  std::size_t cycles = 1;  // M, cyclic schedule only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
  bool collect_checkpoints = true;
};

struct Checkpoint {
  std::vector<double> parameters;
  std::size_t step = 0;   // 1-based
  std::size_t cycle = 0;  // 1-based under the cyclic schedule, 0 otherwise
};

struct TrainResult {
  RerankerModel model;
  std::vector<Checkpoint> checkpoints;
};

struct Example {
  InputVector input;
  int label = 0;  // {0, 1}
};

std::size_t total_steps(std::size_t dataset_size, const TrainingConfig& config);

// AdamW on mean cross-entropy. Checkpoints land on cycle boundaries (cyclic)
// or every ceil(steps / 20) steps (constant); the final step is always
// checkpointed. Deterministic given config.seed.
TrainResult train(const RerankerModel& model, const std::vector<Example>& dataset,
                  const TrainingConfig& config);

// Max relative error between analytic and central finite-difference gradients
// of the deterministic cross-entropy at one example.
double gradient_check(const RerankerModel& model, const InputVector& input, int label,
                      double epsilon);

double mean_cross_entropy(const RerankerModel& model, const std::vector<Example>& dataset);

// Flat container: magic, version byte, shape header, dropout rate,
// vocabulary hash salt, then row-major parameter blocks (w1, b1, w2, b2).
void save_model(const RerankerModel& model, const std::string& path);
RerankerModel load_model(const std::string& path);
void save_model_stream(const RerankerModel& model, std::ostream& out);
RerankerModel load_model_stream(std::istream& in);

}  // namespace calrank
