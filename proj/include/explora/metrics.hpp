#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "explora/tracking.hpp"

namespace explora::metrics {

using tracking::Track3D;

inline constexpr std::array<double, 7> kFpRates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
inline constexpr double kDefaultOverlap = 0.3;

/// Stacked-box volumetric IoU: per-slice 2D intersections and areas summed
/// over the z-extent of each track.
double volumetric_iou(const Track3D& a, const Track3D& b);

enum class MatchKind { true_positive, false_positive, duplicate };

struct MatchRecord {
  std::size_t prediction = 0;
  double score = 0.0;
  MatchKind kind = MatchKind::false_positive;
  std::ptrdiff_t ground_truth = -1;  // matched (or duplicated) GT index
};

struct MatchLedger {
  std::string case_id;
  std::size_t ground_truth_count = 0;
  std::vector<MatchRecord> records;  // in matching order (descending score)
};

/// Greedy matching in descending prediction score (ties by index). A
/// prediction claims the unmatched GT with the highest volumetric IoU at or
/// above the threshold. One that only reaches already-claimed GTs is a
/// duplicate: it is not a false positive for sensitivity, but counts as one
/// for AP.
MatchLedger match_3d(const std::string& case_id, std::span<const Track3D> predictions,
                     std::span<const Track3D> ground_truth, double overlap_threshold = kDefaultOverlap);

struct EvalResult {
  std::array<double, 7> sensitivity{};
  double average_sensitivity = 0.0;
  double ap = 0.0;
  std::size_t cases = 0;
  std::size_t ground_truth = 0;
};

/// Sensitivity at each FP-per-volume budget (largest score threshold whose
/// mean FP count fits the budget, no interpolation), their mean, and AP with
/// all-points interpolation. Predictions with equal score share a threshold.
EvalResult froc(std::span<const MatchLedger> ledgers);

/// Table-style CSV: seven sensitivities, AVG, AP, as percentages with two decimals.
std::string csv_header();
std::string csv_row(const EvalResult& result);

}  // namespace explora::metrics
