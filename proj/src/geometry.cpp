#include "explora/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "explora/error.hpp"

namespace explora {

bool Box2D::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

void require_valid(const Box2D& box) {
  if (!box.valid()) {
    std::ostringstream os;
    os << "invalid box [" << box.x_min << ", " << box.y_min << ", " << box.x_max << ", "
       << box.y_max << "]";
    throw Error(ErrorCode::invalid_argument, os.str());
  }
}

double iou_unchecked(const Box2D& a, const Box2D& b) noexcept {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const Box2D& a, const Box2D& b) {
  require_valid(a);
  require_valid(b);
  return iou_unchecked(a, b);
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw Error(ErrorCode::invalid_argument, "nms iou_threshold must lie in (0, 1]");
  for (const auto& b : boxes) require_valid(b.box);

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });

  std::vector<std::size_t> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t later = pos + 1; later < order.size(); ++later) {
      const std::size_t j = order[later];
      if (!suppressed[j] && iou_unchecked(boxes[i].box, boxes[j].box) > iou_threshold)
        suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold) {
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_indices(boxes, iou_threshold)) out.push_back(boxes[i]);
  return out;
}

std::vector<ScoredBox> gt_nms(std::span<const ScoredBox> predictions,
                              std::span<const Box2D> ground_truth, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw Error(ErrorCode::invalid_argument, "gt_nms iou_threshold must lie in (0, 1]");
  for (const auto& g : ground_truth) require_valid(g);

  std::vector<ScoredBox> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    require_valid(p.box);
    const bool overlaps = std::any_of(ground_truth.begin(), ground_truth.end(), [&](const Box2D& g) {
      return iou_unchecked(p.box, g) >= iou_threshold;
    });
    if (!overlaps) out.push_back(p);
  }
  return out;
}

Box2D jitter(const Box2D& box, double magnitude, Rng& rng) {
  require_valid(box);
  if (magnitude < 0.0 || !std::isfinite(magnitude))
    throw Error(ErrorCode::invalid_argument, "jitter magnitude must be finite and >= 0");
  if (magnitude == 0.0) return box;

  const double m = std::min(magnitude, 0.45);
  std::uniform_real_distribution<double> u(-m, m);
  const double w = box.width();
  const double h = box.height();
  Box2D out;
  out.x_min = box.x_min + u(rng) * w;
  out.y_min = box.y_min + u(rng) * h;
  out.x_max = box.x_max + u(rng) * w;
  out.y_max = box.y_max + u(rng) * h;
  out.x_min = std::clamp(out.x_min, 0.0, 1.0);
  out.y_min = std::clamp(out.y_min, 0.0, 1.0);
  out.x_max = std::clamp(out.x_max, 0.0, 1.0);
  out.y_max = std::clamp(out.y_max, 0.0, 1.0);
  return out;
}

}  // namespace explora
