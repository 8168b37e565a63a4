#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "explora/bank.hpp"
#include "explora/detector.hpp"
#include "explora/metrics.hpp"
#include "explora/risk.hpp"
#include "explora/tracking.hpp"
#include "explora/world.hpp"

namespace explora::sim {

/// How the student's targets are formed each round.
enum class Strategy {
  baseline,       // annotations only; unlabeled candidates are background
  exploratory,    // teacher boxes >= tau (after GT NMS) become positives
  adding,         // bank-selected boxes are positives
  ignoring,       // bank-selected boxes are excluded from the loss
  recalibration,  // student's own background loss above the flip threshold turns positive
  multistage,     // a frozen previous-stage model supplies positives >= tau
  scar,           // unbiased PU risk with a fixed class prior
  sampling,       // background only near annotations (spatial radius)
};

const char* to_string(Strategy);
Strategy strategy_from_string(const std::string&);

struct EvalConfig {
  double nms_iou = 0.5;
  std::size_t max_detections_per_slice = 4;
  tracking::LinkConfig link;
  double overlap = metrics::kDefaultOverlap;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct TrainConfig {
  double tau = 0.9;
  double theta = 0.85;
  double gamma_match = 0.7;
  std::size_t epsilon = 20;
  double ema_momentum = 0.999;
  double learning_rate = 0.02;
  std::size_t batch_size = 4;  // images per round
  std::size_t max_rounds = 27000;
  double slice_dropout_prob = 0.5;
  std::uint64_t seed = 1;

  std::size_t hidden = 16;
  std::size_t eval_interval = 500;
  double resize_lo = 0.8;
  double resize_hi = 1.2;
  double positive_iou = 0.5;
  double detection_nms_iou = 0.5;
  std::size_t negatives_per_positive = 1;
  std::size_t min_negatives = 6;
  double flip_threshold = risk::kDefaultFlipThreshold;
  std::size_t multistage_stages = 2;
  double scar_prior = 0.3;
  double sampling_radius = 0.3;
  EvalConfig eval;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);

struct LogRow {
  std::size_t round = 0;
  std::size_t mined_total = 0;
  std::size_t mined_latest = 0;
  double val_ap = 0.0;
  double loss = 0.0;

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct DynamicsLog {
  std::vector<LogRow> rows;

  /// round,mined_total,mined_latest,val_ap,loss
  std::string to_csv() const;
  const LogRow& at_round(std::size_t round) const;
};

struct TrainingPlan {
  Strategy strategy = Strategy::baseline;
  const DetectorParams* pseudo_source = nullptr;                      // multistage
  const std::map<std::string, std::vector<Box2D>>* selected = nullptr;  // adding / ignoring
  bool record_bank = false;
};

struct TrainingOutcome {
  DetectorParams teacher;
  DetectorParams student;
  PredictionBank bank;
  DynamicsLog log;
  /// Bank as it stood at the first log row with maximal validation AP.
  PredictionBank best_bank;
  std::size_t best_round = 0;
};

/// Bank key of a training image.
std::string image_key(const std::string& case_id, int slice);

/// Single-threaded, deterministic given world, config and plan. Throws
/// Error(divergence) naming the round when the loss becomes non-finite.
TrainingOutcome train(const SimWorld& world, const TrainConfig& config, const TrainingPlan& plan);

/// Teacher-student training with pseudo-labels and bank recording.
TrainingOutcome run_exploratory(const SimWorld& world, const TrainConfig& config);

/// Fresh student trained on annotations plus the selection.
TrainingOutcome run_retrain(const SimWorld& world, const TrainConfig& config,
                            const std::map<std::string, std::vector<Box2D>>& selected,
                            risk::RetrainMode mode);

/// Baseline followed by `multistage_stages` from-scratch retrainings, each
/// supervised by the previous stage's teacher.
TrainingOutcome run_multistage(const SimWorld& world, const TrainConfig& config);

enum class StopMode { validation_ap, mined_surge };

struct SurgeConfig {
  double factor = 1.5;
  std::size_t window = 5;
  std::size_t min_count = 10;
};

/// validation_ap: round of the first maximum of val_ap. mined_surge: first
/// round whose mined_total exceeds factor x the median of the preceding
/// `window` rows (and min_count); the final round when no surge happens.
std::size_t stopping_round(const DynamicsLog& log, StopMode mode, const SurgeConfig& surge = {});

/// Per-slice detection, 3D linking and FROC on one split.
struct SplitEvaluation {
  metrics::EvalResult result;
  std::vector<tracking::Track3D> tracks;
};
SplitEvaluation evaluate(const SimWorld& world, const DetectorParams& model, Split split,
                         const EvalConfig& config);

/// Ground-truth tracks of a study (one per lesion).
std::vector<tracking::Track3D> lesion_tracks(const Study& study);

/// Mined entries with at least `min_hits` hits and how many of them overlap
/// a latent lesion at IoU >= 0.5.
struct MinedPrecision {
  std::size_t selected = 0;
  std::size_t correct = 0;
  double precision() const { return selected ? static_cast<double>(correct) / selected : 0.0; }
};
MinedPrecision mined_precision(const SimWorld& world, const PredictionBank& bank, std::size_t min_hits);

}  // namespace explora::sim
