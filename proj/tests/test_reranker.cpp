#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "calrank/errors.hpp"
#include "calrank/reranker.hpp"
#include "calrank/rng.hpp"

using namespace calrank;

namespace {

const std::unordered_map<std::string, std::uint32_t> kVocab{
    {"pos", 0}, {"neg", 1}, {"mid", 2}, {"pad", 3}};
const VocabBinding kBinding{4, VocabBinding::kDefaultSalt};

RerankerModel randomized_model(std::uint32_t hidden, double dropout, std::uint64_t seed) {
  RerankerModel model = make_reranker({4, hidden, dropout}, seed);
  Rng rng(derive_seed(seed, 77));
  for (double& w : model.w2) w = rng.normal() * 0.5;
  for (double& b : model.b1) b = rng.normal() * 0.1;
  for (double& b : model.b2) b = rng.normal() * 0.1;
  return model;
}

// A two-class toy set separable on the context token.
std::vector<Example> separable_dataset() {
  return {
      {encode_tokens({"q"}, {"pos"}, kVocab, kBinding), 1},
      {encode_tokens({"q"}, {"neg"}, kVocab, kBinding), 0},
      {encode_tokens({"q"}, {"pos", "mid"}, kVocab, kBinding), 1},
      {encode_tokens({"q"}, {"neg", "mid"}, kVocab, kBinding), 0},
  };
}

}  // namespace

TEST_SUITE("reranker") {

TEST_CASE("encode_pair is deterministic, segmented and asymmetric") {
  Query query;
  query.id = "q";
  query.text = "pos mid";
  Document doc{"d", "", "neg pad", {}};
  doc.tokens = tokenize(doc.title + " " + doc.text);

  const InputVector once = encode_pair(query, doc, kVocab, kBinding);
  const InputVector twice = encode_pair(query, doc, kVocab, kBinding);
  CHECK(once.entries == twice.entries);

  Document empty_doc{"e", "", "", {}};
  const InputVector query_only = encode_pair(query, empty_doc, kVocab, kBinding);
  // Query tokens, separator and bias only.
  CHECK(query_only.entries.size() == 4);
  bool has_separator = false;
  for (const auto& [feature, weight] : query_only.entries)
    if (feature == kBinding.separator_feature()) {
      has_separator = true;
      CHECK(weight == 1.0);
    }
  CHECK(has_separator);

  Query swapped;
  swapped.id = "q2";
  swapped.text = "neg pad";
  Document swapped_doc{"d2", "", "pos mid", {}};
  swapped_doc.tokens = tokenize(swapped_doc.text);
  CHECK(encode_pair(swapped, swapped_doc, kVocab, kBinding).entries != once.entries);
}

TEST_CASE("out-of-vocabulary tokens land in the reserved bucket range") {
  const InputVector input = encode_tokens({"unseen_token"}, {"another_unseen"}, kVocab, kBinding);
  for (const auto& [feature, weight] : input.entries) {
    if (feature == kBinding.separator_feature() || feature == kBinding.bias_feature()) continue;
    const bool query_oov =
        feature >= kBinding.vocab_size && feature < kBinding.segment_width();
    const bool context_oov = feature >= kBinding.segment_width() + kBinding.vocab_size &&
                             feature < 2 * kBinding.segment_width();
    CHECK((query_oov || context_oov));
  }
}

TEST_CASE("sampled mask with zero dropout equals the deterministic forward") {
  const RerankerModel model = randomized_model(8, 0.0, 3);
  const InputVector input = encode_tokens({"pos"}, {"neg", "mid"}, kVocab, kBinding);
  const auto det = forward(model, input, ForwardMode::deterministic());
  const auto sampled = forward(model, input, ForwardMode::sampled_mask(123456));
  CHECK(det.probabilities == sampled.probabilities);
}

TEST_CASE("forward outputs a normalized distribution") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const RerankerModel model = randomized_model(8, 0.3, rng.next_u64());
    const InputVector input = encode_tokens({"pos", "pad"}, {"neg"}, kVocab, kBinding);
    const auto out = forward(model, input, ForwardMode::sampled_mask(rng.next_u64()));
    CHECK(out.is_normalized(1e-9));
  }
}

TEST_CASE("forward matches a straight-line evaluation of the two-layer formula") {
  RerankerModel model = make_reranker({4, 2, 0.0}, 1);
  for (double& w : model.w1) w = 0.0;
  const std::size_t h = model.hidden_dim;
  model.w1[0 * h + 0] = 0.5;
  model.w1[0 * h + 1] = -0.3;
  model.w1[1 * h + 0] = 0.2;
  model.w1[1 * h + 1] = 0.4;
  model.b1 = {0.1, -0.2};
  model.w2 = {0.7, -0.5, -0.2, 0.9};
  model.b2 = {0.05, -0.05};

  InputVector input;
  input.entries = {{0, 1.0}, {1, 2.0}};

  const double z1_0 = 0.5 * 1.0 + 0.2 * 2.0 + 0.1;
  const double z1_1 = -0.3 * 1.0 + 0.4 * 2.0 - 0.2;
  const double h0 = std::max(0.0, z1_0);
  const double h1 = std::max(0.0, z1_1);
  const double z2_0 = 0.7 * h0 - 0.5 * h1 + 0.05;
  const double z2_1 = -0.2 * h0 + 0.9 * h1 - 0.05;
  const double denom = std::exp(z2_0) + std::exp(z2_1);

  const auto out = forward(model, input, ForwardMode::deterministic());
  CHECK(out.probabilities[0] == doctest::Approx(std::exp(z2_0) / denom).epsilon(1e-9));
  CHECK(out.probabilities[1] == doctest::Approx(std::exp(z2_1) / denom).epsilon(1e-9));
}

TEST_CASE("forward rejects non-finite parameters") {
  RerankerModel model = randomized_model(4, 0.0, 5);
  model.b2[0] = std::numeric_limits<double>::infinity();
  const InputVector input = encode_tokens({"pos"}, {"neg"}, kVocab, kBinding);
  CHECK_THROWS_AS(forward(model, input, ForwardMode::deterministic()), NumericError);
}

TEST_CASE("cyclic_lr reproduces the annealing schedule") {
  CHECK(cyclic_lr(1, 100, 5, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(cyclic_lr(11, 100, 5, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(cyclic_lr(21, 100, 5, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(cyclic_lr(0, 100, 5, 0.1), InputError);
  CHECK_THROWS_AS(cyclic_lr(101, 100, 5, 0.1), InputError);
}

TEST_CASE("cyclic_lr is cycle-periodic and restarts at alpha0") {
  const std::size_t total = 90, cycles = 3;
  const std::size_t cycle_len = (total + cycles - 1) / cycles;
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 1 + rng.below(total - cycle_len);
    CHECK(cyclic_lr(t, total, cycles, 0.2) ==
          doctest::Approx(cyclic_lr(t + cycle_len, total, cycles, 0.2)).epsilon(1e-15));
  }
  for (std::size_t c = 0; c < cycles; ++c)
    CHECK(cyclic_lr(1 + c * cycle_len, total, cycles, 0.2) ==
          doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("training fits a separable toy set") {
  const auto dataset = separable_dataset();
  TrainingConfig config;
  config.learning_rate = 5e-2;
  config.epochs = 50;  // 200 steps at batch size 1
  config.batch_size = 1;
  config.seed = 11;
  const TrainResult result = train(make_reranker({4, 8, 0.0}, 11), dataset, config);
  for (const Example& ex : dataset) {
    const auto out = forward(result.model, ex.input, ForwardMode::deterministic());
    CHECK((out.probabilities[1] > 0.5) == (ex.label == 1));
  }
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  const auto dataset = separable_dataset();
  TrainingConfig config;
  config.epochs = 5;
  config.batch_size = 2;
  config.seed = 9;
  const auto first = train(make_reranker({4, 8, 0.2}, 9), dataset, config);
  const auto second = train(make_reranker({4, 8, 0.2}, 9), dataset, config);
  CHECK(first.model.flat_parameters() == second.model.flat_parameters());
  REQUIRE(first.checkpoints.size() == second.checkpoints.size());
  for (std::size_t i = 0; i < first.checkpoints.size(); ++i)
    CHECK(first.checkpoints[i].parameters == second.checkpoints[i].parameters);
}

TEST_CASE("initial loss on balanced labels is ln 2") {
  const auto dataset = separable_dataset();
  const RerankerModel model = make_reranker({4, 8, 0.0}, 21);
  CHECK(mean_cross_entropy(model, dataset) == doctest::Approx(std::numbers::ln2).epsilon(1e-6));
}

TEST_CASE("training surfaces non-finite losses with the step index") {
  auto dataset = separable_dataset();
  RerankerModel model = make_reranker({4, 4, 0.0}, 2);
  model.b2[1] = std::numeric_limits<double>::quiet_NaN();
  TrainingConfig config;
  config.epochs = 1;
  config.batch_size = 4;
  CHECK_THROWS_WITH_AS(train(model, dataset, config), doctest::Contains("step 1"), NumericError);
}

TEST_CASE("checkpoints land on cycle boundaries and strides") {
  std::vector<Example> dataset;
  for (int i = 0; i < 40; ++i) {
    dataset.push_back({encode_tokens({"q"}, {i % 2 == 0 ? "pos" : "neg"}, kVocab, kBinding),
                       i % 2 == 0 ? 1 : 0});
  }
  TrainingConfig config;
  config.epochs = 5;  // 40 / 8 -> 5 steps per epoch, 25 total
  config.batch_size = 8;
  config.schedule = Schedule::CyclicAnnealing;
  config.cycles = 5;
  const auto result = train(make_reranker({4, 4, 0.0}, 3), dataset, config);
  REQUIRE(result.checkpoints.size() == 5);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(result.checkpoints[c].step == (c + 1) * 5);
    CHECK(result.checkpoints[c].cycle == c + 1);
  }

  TrainingConfig constant = config;
  constant.schedule = Schedule::Constant;
  const auto strided = train(make_reranker({4, 4, 0.0}, 3), dataset, constant);
  REQUIRE(strided.checkpoints.size() == 13);  // stride ceil(25/20) = 2 -> 2,4,...,24 plus 25
  CHECK(strided.checkpoints.back().step == 25);
}

TEST_CASE("dropout is unbiased for the hidden activations") {
  const RerankerModel model = randomized_model(8, 0.25, 31);
  const InputVector input = encode_tokens({"pos", "mid"}, {"neg", "pad"}, kVocab, kBinding);
  const auto expected = hidden_activations(model, input, ForwardMode::deterministic());

  std::vector<double> mean(expected.size(), 0.0);
  const std::size_t samples = 20000;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto h = hidden_activations(model, input, ForwardMode::sampled_mask(derive_seed(8, s)));
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += h[j] / static_cast<double>(samples);
  }
  for (std::size_t j = 0; j < mean.size(); ++j) {
    if (expected[j] > 1e-6)
      CHECK(std::abs(mean[j] - expected[j]) / expected[j] < 0.02);
    else
      CHECK(mean[j] == doctest::Approx(expected[j]));
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const RerankerModel model = randomized_model(3, 0.0, rng.next_u64());
    const InputVector input = encode_tokens({"pos", "pad"}, {"neg", "mid"}, kVocab, kBinding);
    const int label = static_cast<int>(rng.below(2));
    CHECK(gradient_check(model, input, label, 1e-5) < 1e-4);
    CHECK(gradient_check(model, input, label, 2e-5) < 1e-3);
  }
  CHECK_THROWS_AS(gradient_check(randomized_model(3, 0.0, 1),
                                 encode_tokens({"pos"}, {"neg"}, kVocab, kBinding), 0, 0.5),
                  InputError);
}

TEST_CASE("dead relu units have exactly zero gradient") {
  RerankerModel model = randomized_model(3, 0.0, 12);
  for (double& b : model.b1) b = -100.0;  // all hidden units off for this input
  const InputVector input = encode_tokens({"pos"}, {"neg"}, kVocab, kBinding);
  // Finite-difference oracle on one w1 coordinate feeding a dead unit.
  const std::size_t coord = input.entries.front().first * model.hidden_dim;
  RerankerModel probe = model;
  const double eps = 1e-5;
  probe.w1[coord] += eps;
  const double up =
      -std::log(forward(probe, input, ForwardMode::deterministic()).probabilities[0]);
  probe.w1[coord] -= 2 * eps;
  const double down =
      -std::log(forward(probe, input, ForwardMode::deterministic()).probabilities[0]);
  CHECK(std::abs((up - down) / (2 * eps)) < 1e-8);
  // And the full check still passes, so the analytic side agrees there too.
  CHECK(gradient_check(model, input, 0, 1e-5) < 1e-4);
}

TEST_CASE("model serialization round trips") {
  const RerankerModel model = randomized_model(6, 0.15, 44);
  const auto path = (std::filesystem::temp_directory_path() / "model_rt.bin").string();
  save_model(model, path);
  const RerankerModel loaded = load_model(path);
  CHECK(loaded.flat_parameters() == model.flat_parameters());
  CHECK(loaded.dropout_rate == model.dropout_rate);
  CHECK(loaded.binding.vocab_size == model.binding.vocab_size);
  CHECK(loaded.binding.hash_salt == model.binding.hash_salt);

  const InputVector input = encode_tokens({"pos"}, {"neg", "mid"}, kVocab, kBinding);
  CHECK(forward(loaded, input, ForwardMode::deterministic()).probabilities ==
        forward(model, input, ForwardMode::deterministic()).probabilities);
  std::remove(path.c_str());
}

TEST_CASE("model loader rejects foreign files") {
  const auto path = (std::filesystem::temp_directory_path() / "model_bad.bin").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "JUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(load_model(path), InputError);
  std::remove(path.c_str());
}

}  // TEST_SUITE
