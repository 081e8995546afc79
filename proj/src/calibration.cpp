#include "calrank/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "calrank/errors.hpp"
#include "calrank/rng.hpp"

namespace calrank {

namespace {

// Mean anchored at the first member: identical members (and dropout at rate
// zero) reproduce the single distribution bit for bit.
ProbabilityDistribution mean_distribution(const std::vector<ProbabilityDistribution>& parts) {
  ProbabilityDistribution out = parts.front();
  const double m = static_cast<double>(parts.size());
  for (std::size_t c = 0; c < out.probabilities.size(); ++c) {
    double correction = 0.0;
    for (std::size_t i = 1; i < parts.size(); ++i)
      correction += parts[i].probabilities[c] - parts.front().probabilities[c];
    out.probabilities[c] += correction / m;
  }
  return out;
}

}  // namespace

CalibratedPredictor train_deep_ensemble(const ModelSpec& spec, const std::vector<Example>& dataset,
                                        const TrainingConfig& config,
                                        const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw InputError("train_deep_ensemble: need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw InputError("train_deep_ensemble: duplicate seeds");
  CalibratedPredictor predictor;
  predictor.method = CalibrationMethod::DeepEnsemble;
  for (const std::uint64_t seed : seeds) {
    TrainingConfig member_config = config;
    member_config.seed = seed;
    member_config.collect_checkpoints = false;
    predictor.members.push_back(
        train(make_reranker(spec, seed), dataset, member_config).model);
  }
  return predictor;
}

ProbabilityDistribution ensemble_predict(const CalibratedPredictor& predictor,
                                         const InputVector& input) {
  if (predictor.members.empty()) throw InputError("ensemble_predict: no members");
  std::size_t first = 0;
  if (predictor.method == CalibrationMethod::SnapshotEnsemble && predictor.use_last > 0 &&
      predictor.use_last < predictor.members.size())
    first = predictor.members.size() - predictor.use_last;
  std::vector<ProbabilityDistribution> outputs;
  for (std::size_t m = first; m < predictor.members.size(); ++m)
    outputs.push_back(forward(predictor.members[m], input, ForwardMode::deterministic()));
  return mean_distribution(outputs);
}

CalibratedPredictor train_snapshot_ensemble(const ModelSpec& spec,
                                            const std::vector<Example>& dataset,
                                            TrainingConfig config, std::size_t cycles,
                                            std::size_t use_last) {
  if (cycles < 1) throw InputError("train_snapshot_ensemble: cycles must be >= 1");
  config.schedule = Schedule::CyclicAnnealing;
  config.cycles = cycles;
  config.collect_checkpoints = true;
  RerankerModel initial = make_reranker(spec, config.seed);
  TrainResult result = train(initial, dataset, config);

  CalibratedPredictor predictor;
  predictor.method = CalibrationMethod::SnapshotEnsemble;
  // Snapshots with fewer than use_last cycles all stay usable.
  predictor.use_last = std::min(use_last, result.checkpoints.size());
  for (const Checkpoint& ckpt : result.checkpoints) {
    RerankerModel member = initial;
    member.set_flat_parameters(ckpt.parameters);
    predictor.members.push_back(std::move(member));
  }
  return predictor;
}

std::vector<double> swa_update(const std::vector<double>& w_swa, std::size_t n_models,
                               const std::vector<double>& w) {
  if (w_swa.size() != w.size()) throw InputError("swa_update: parameter shape mismatch");
  if (n_models < 1) throw InputError("swa_update: n_models must be >= 1");
  std::vector<double> out(w_swa.size());
  const double n = static_cast<double>(n_models);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (w_swa[i] * n + w[i]) / (n + 1.0);
  return out;
}

RerankerModel swa_finalize(const RerankerModel& architecture,
                           const std::vector<Checkpoint>& checkpoints, const SwaWindow& window) {
  if (checkpoints.empty()) throw InputError("swa_finalize: no checkpoints");
  std::size_t first = 0;
  if (window.kind == SwaWindow::Kind::LastFraction) {
    if (!(window.fraction > 0.0 && window.fraction <= 1.0))
      throw InputError("swa_finalize: fraction must be in (0, 1]");
    const auto keep = static_cast<std::size_t>(
        std::ceil(window.fraction * static_cast<double>(checkpoints.size())));
    first = checkpoints.size() - std::max<std::size_t>(1, keep);
  }
  std::vector<double> averaged = checkpoints[first].parameters;
  std::size_t n_models = 1;
  for (std::size_t i = first + 1; i < checkpoints.size(); ++i, ++n_models)
    averaged = swa_update(averaged, n_models, checkpoints[i].parameters);
  RerankerModel model = architecture;
  model.set_flat_parameters(averaged);
  return model;
}

ProbabilityDistribution mc_dropout_predict(const RerankerModel& model, const InputVector& input,
                                           std::size_t samples, std::uint64_t seed) {
  if (samples < 1) throw InputError("mc_dropout_predict: samples must be >= 1");
  std::vector<ProbabilityDistribution> outputs;
  outputs.reserve(samples);
  for (std::size_t t = 0; t < samples; ++t)
    outputs.push_back(forward(model, input, ForwardMode::sampled_mask(derive_seed(seed, t))));
  return mean_distribution(outputs);
}

CalibratedPredictor train_calibrated(const ModelSpec& spec, const std::vector<Example>& dataset,
                                     const EnsembleConfig& config) {
  CalibratedPredictor predictor;
  switch (config.method) {
    case CalibrationMethod::DeepEnsemble:
      return train_deep_ensemble(spec, dataset, config.base, config.seeds);
    case CalibrationMethod::SnapshotEnsemble:
      return train_snapshot_ensemble(spec, dataset, config.base, config.ensemble_size,
                                     config.use_last);
    case CalibrationMethod::Swa: {
      RerankerModel initial = make_reranker(spec, config.base.seed);
      TrainingConfig training = config.base;
      training.collect_checkpoints = true;
      TrainResult result = train(initial, dataset, training);
      predictor.method = CalibrationMethod::Swa;
      predictor.members.push_back(swa_finalize(initial, result.checkpoints, config.window));
      return predictor;
    }
    case CalibrationMethod::McDropout: {
      TrainingConfig training = config.base;
      training.collect_checkpoints = false;
      predictor.method = CalibrationMethod::McDropout;
      predictor.members.push_back(
          train(make_reranker(spec, training.seed), dataset, training).model);
      predictor.mc_samples = config.mc_samples;
      predictor.mc_seed = config.mc_seed;
      return predictor;
    }
    case CalibrationMethod::None: {
      TrainingConfig training = config.base;
      training.collect_checkpoints = false;
      predictor.method = CalibrationMethod::None;
      predictor.members.push_back(
          train(make_reranker(spec, training.seed), dataset, training).model);
      return predictor;
    }
  }
  return predictor;
}

ProbabilityDistribution CalibratedPredictor::predict(const InputVector& input) const {
  switch (method) {
    case CalibrationMethod::McDropout:
      if (members.size() != 1) throw InputError("predict: MC dropout carrier needs one model");
      return mc_dropout_predict(members.front(), input, mc_samples, mc_seed);
    case CalibrationMethod::Swa:
    case CalibrationMethod::None:
      if (members.size() != 1) throw InputError("predict: expected a single model");
      return forward(members.front(), input, ForwardMode::deterministic());
    default:
      return ensemble_predict(*this, input);
  }
}

CalibrationMetrics calibration_metrics(const std::vector<ProbabilityDistribution>& predictions,
                                       const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw InputError("calibration_metrics: predictions and labels must align and be nonempty");

  CalibrationMetrics metrics;
  constexpr int kBins = 10;
  double bin_weight[kBins] = {};
  double bin_correct[kBins] = {};
  double bin_confidence[kBins] = {};

  const double n = static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i].probabilities;
    const auto label = static_cast<std::size_t>(labels[i]);
    if (label >= p.size()) throw InputError("calibration_metrics: label out of range");

    double p_true = p[label];
    if (p_true < 1e-12) {
      p_true = 1e-12;
      metrics.clamped = true;
    }
    metrics.nll -= std::log(p_true);

    for (std::size_t c = 0; c < p.size(); ++c) {
      const double target = c == label ? 1.0 : 0.0;
      metrics.brier += (p[c] - target) * (p[c] - target);
    }

    const auto argmax = static_cast<std::size_t>(
        std::max_element(p.begin(), p.end()) - p.begin());
    const double confidence = p[argmax];
    const int bin = std::min(kBins - 1, static_cast<int>(confidence * kBins));
    bin_weight[bin] += 1.0;
    bin_correct[bin] += argmax == label ? 1.0 : 0.0;
    bin_confidence[bin] += confidence;
  }
  metrics.nll /= n;
  metrics.brier /= n;
  for (int b = 0; b < kBins; ++b) {
    if (bin_weight[b] == 0.0) continue;
    const double acc = bin_correct[b] / bin_weight[b];
    const double conf = bin_confidence[b] / bin_weight[b];
    metrics.ece += bin_weight[b] / n * std::abs(acc - conf);
  }
  return metrics;
}

namespace {

constexpr char kPredictorMagic[4] = {'C', 'R', 'K', 'P'};
constexpr std::uint8_t kPredictorVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("predictor file truncated");
  return value;
}

}  // namespace

void save_predictor(const CalibratedPredictor& predictor, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write predictor file " + path);
  out.write(kPredictorMagic, 4);
  write_pod(out, kPredictorVersion);
  write_pod(out, static_cast<std::uint8_t>(predictor.method));
  write_pod(out, static_cast<std::uint64_t>(predictor.members.size()));
  write_pod(out, static_cast<std::uint64_t>(predictor.use_last));
  write_pod(out, static_cast<std::uint64_t>(predictor.mc_samples));
  write_pod(out, predictor.mc_seed);
  for (const RerankerModel& member : predictor.members) save_model_stream(member, out);
}

CalibratedPredictor load_predictor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open predictor file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kPredictorMagic, 4) != 0)
    throw InputError("not a predictor file");
  if (read_pod<std::uint8_t>(in) != kPredictorVersion)
    throw InputError("unsupported predictor version");
  CalibratedPredictor predictor;
  predictor.method = static_cast<CalibrationMethod>(read_pod<std::uint8_t>(in));
  const auto n_members = read_pod<std::uint64_t>(in);
  predictor.use_last = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
  predictor.mc_samples = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
  predictor.mc_seed = read_pod<std::uint64_t>(in);
  for (std::uint64_t m = 0; m < n_members; ++m)
    predictor.members.push_back(load_model_stream(in));
  return predictor;
}

}  // namespace calrank
