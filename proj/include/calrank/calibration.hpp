#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calrank/reranker.hpp"

namespace calrank {

enum class CalibrationMethod { None, DeepEnsemble, SnapshotEnsemble, Swa, McDropout };

struct SwaWindow {
  enum class Kind { FullTrajectory, LastFraction };
  Kind kind = Kind::FullTrajectory;
  double fraction = 1.0;  // used by LastFraction, in (0, 1]

  static SwaWindow full() { return {}; }
  static SwaWindow last_fraction(double f) { return {Kind::LastFraction, f}; }
};

struct EnsembleConfig {
  CalibrationMethod method = CalibrationMethod::None;
  TrainingConfig base;
  std::size_t ensemble_size = 3;          // M for deep and snapshot ensembles
  std::vector<std::uint64_t> seeds;       // deep ensemble member seeds
  std::size_t use_last = 3;               // snapshot: how many trailing cycles predict
  SwaWindow window;                       // SWA checkpoint window
  std::size_t mc_samples = 3;             // T
  std::uint64_t mc_seed = 0;
};

// Members share architecture and vocabulary binding. SWA keeps one averaged
// model; the MC dropout carrier keeps one model plus its sampling budget.
struct CalibratedPredictor {
  CalibrationMethod method = CalibrationMethod::None;
  std::vector<RerankerModel> members;
  std::size_t use_last = 0;  // snapshot ensembles; 0 means all members
  std::size_t mc_samples = 1;
  std::uint64_t mc_seed = 0;

  ProbabilityDistribution predict(const InputVector& input) const;
};

CalibratedPredictor train_deep_ensemble(const ModelSpec& spec, const std::vector<Example>& dataset,
                                        const TrainingConfig& config,
                                        const std::vector<std::uint64_t>& seeds);

// Dispatches on config.method; None trains one model with deterministic
// prediction.
CalibratedPredictor train_calibrated(const ModelSpec& spec, const std::vector<Example>& dataset,
                                     const EnsembleConfig& config);

// Mean of the usable members' deterministic forwards, order-fixed.
ProbabilityDistribution ensemble_predict(const CalibratedPredictor& predictor,
                                         const InputVector& input);

CalibratedPredictor train_snapshot_ensemble(const ModelSpec& spec,
                                            const std::vector<Example>& dataset,
                                            TrainingConfig config, std::size_t cycles,
                                            std::size_t use_last = 3);

// One incremental averaging fold: (w_swa * n_models + w) / (n_models + 1).
std::vector<double> swa_update(const std::vector<double>& w_swa, std::size_t n_models,
                               const std::vector<double>& w);

RerankerModel swa_finalize(const RerankerModel& architecture,
                           const std::vector<Checkpoint>& checkpoints, const SwaWindow& window);

ProbabilityDistribution mc_dropout_predict(const RerankerModel& model, const InputVector& input,
                                           std::size_t samples, std::uint64_t seed);

struct CalibrationMetrics {
  double nll = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  bool clamped = false;  // some p(y_true) hit the 1e-12 floor
};

// NLL, Brier and 10-bin expected calibration error over max-class confidence.
CalibrationMetrics calibration_metrics(const std::vector<ProbabilityDistribution>& predictions,
                                       const std::vector<int>& labels);

void save_predictor(const CalibratedPredictor& predictor, const std::string& path);
CalibratedPredictor load_predictor(const std::string& path);

}  // namespace calrank
