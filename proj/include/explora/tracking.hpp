#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "explora/geometry.hpp"

namespace explora::tracking {

struct KalmanConfig {
  double process_noise = 1e-3;      // sigma_q, normalized units
  double measurement_noise = 1e-2;  // sigma_r
  double initial_std = 5e-2;        // prior spread of a freshly started track

  friend bool operator==(const KalmanConfig&, const KalmanConfig&) = default;
};

/// Constant-position filter over (cx, cy, w, h).
struct KalmanState {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Identity();
};

Eigen::Vector4d to_measurement(const Box2D& box);
Box2D to_box(const Eigen::Vector4d& state);

KalmanState kalman_init(const Box2D& first, const KalmanConfig& config);
/// Identity transition; covariance grows by sigma_q^2 I. Rejects a
/// non-symmetric or non-PSD covariance.
KalmanState kalman_predict(const KalmanState& state, const KalmanConfig& config);
/// Standard update in Joseph form; the result is re-symmetrized.
KalmanState kalman_correct(const KalmanState& state, const Box2D& measurement,
                           const KalmanConfig& config);

bool is_symmetric_psd(const Eigen::Matrix4d& m, double tol = 1e-10);

struct Track3D {
  std::string case_id;
  int z_start = 0;
  int z_end = 0;
  /// One box per slice in [z_start, z_end]; slices bridged over a gap carry
  /// the filter's predicted box.
  std::vector<Box2D> boxes;
  double score = 0.0;
  /// (slice, index into that slice's detections) for every linked detection.
  std::vector<std::pair<int, std::size_t>> members;

  const Box2D& box_at(int z) const { return boxes.at(static_cast<std::size_t>(z - z_start)); }
};

struct LinkConfig {
  double link_iou = 0.5;
  int max_gap = 1;
  KalmanConfig kalman;

  friend bool operator==(const LinkConfig&, const LinkConfig&) = default;
};

/// Greedy slice-by-slice association. Each live track predicts its next box
/// and claims the best unclaimed detection with IoU >= link_iou (ties go to
/// the higher-scoring detection). Unclaimed detections open new tracks; a
/// track ends after more than max_gap consecutive misses. Track score is the
/// mean of its member scores.
std::vector<Track3D> link_tracks(const std::string& case_id,
                                 const std::map<int, std::vector<ScoredBox>>& per_slice,
                                 const LinkConfig& config);

struct Box3D {
  int z_start = 0;
  int z_end = 0;
  Box2D box;
};

/// z-extent plus the coordinate-wise enclosing box of the member boxes.
Box3D track_to_box3d(const Track3D& track);

}  // namespace explora::tracking
