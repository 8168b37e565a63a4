#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace explora {

using Rng = std::mt19937_64;

/// Axis-aligned box in corner form, normalized image units.
struct Box2D {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  /// Finite coordinates with strictly positive extent on both axes.
  bool valid() const;

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

struct ScoredBox {
  Box2D box;
  double score = 0.0;
  int slice_index = 0;

  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

/// Throws Error(invalid_argument) for a degenerate or non-finite box.
void require_valid(const Box2D& box);

/// Intersection area over union area. Throws on invalid input.
double iou(const Box2D& a, const Box2D& b);

/// Unchecked variant for hot loops where validity is already established.
double iou_unchecked(const Box2D& a, const Box2D& b) noexcept;

/// Greedy score-descending NMS. Equal scores keep input order. Output is
/// sorted by descending score and no retained pair overlaps above the threshold.
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold);

/// Indices (into `boxes`) kept by nms(), in output order.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold);

inline constexpr double kDefaultGtNmsIou = 0.7;

/// Keeps the predictions whose IoU with every ground-truth box is below the
/// threshold. Scores are ignored; survivor order is preserved.
std::vector<ScoredBox> gt_nms(std::span<const ScoredBox> predictions,
                              std::span<const Box2D> ground_truth,
                              double iou_threshold = kDefaultGtNmsIou);

/// Perturbs each x coordinate by U(-m, m) * width and each y coordinate by
/// U(-m, m) * height, then clamps to the unit square. The magnitude is capped
/// at 0.45 so opposite corners can never cross. Zero magnitude is the identity
/// and consumes no randomness.
Box2D jitter(const Box2D& box, double magnitude, Rng& rng);

}  // namespace explora
