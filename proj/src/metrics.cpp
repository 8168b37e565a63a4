#include "explora/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "explora/error.hpp"

namespace explora::metrics {

namespace {

double volume(const Track3D& t) {
  double v = 0.0;
  for (const auto& b : t.boxes) v += b.area();
  return v;
}

void require_track(const Track3D& t) {
  if (t.z_end < t.z_start || t.boxes.size() != static_cast<std::size_t>(t.z_end - t.z_start + 1))
    throw Error(ErrorCode::invalid_argument, "track must carry one box per slice");
}

}  // namespace

double volumetric_iou(const Track3D& a, const Track3D& b) {
  require_track(a);
  require_track(b);
  const int lo = std::max(a.z_start, b.z_start);
  const int hi = std::min(a.z_end, b.z_end);
  double inter = 0.0;
  for (int z = lo; z <= hi; ++z) {
    const Box2D& p = a.box_at(z);
    const Box2D& q = b.box_at(z);
    const double iw = std::min(p.x_max, q.x_max) - std::max(p.x_min, q.x_min);
    const double ih = std::min(p.y_max, q.y_max) - std::max(p.y_min, q.y_min);
    if (iw > 0.0 && ih > 0.0) inter += iw * ih;
  }
  const double uni = volume(a) + volume(b) - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

MatchLedger match_3d(const std::string& case_id, std::span<const Track3D> predictions,
                     std::span<const Track3D> ground_truth, double overlap_threshold) {
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0))
    throw Error(ErrorCode::invalid_argument, "overlap threshold must lie in (0, 1]");
  MatchLedger ledger{case_id, ground_truth.size(), {}};

  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });

  std::vector<char> taken(ground_truth.size(), 0);
  for (std::size_t p : order) {
    MatchRecord rec{p, predictions[p].score, MatchKind::false_positive, -1};
    double best_free = -1.0, best_taken = -1.0;
    std::ptrdiff_t free_idx = -1, taken_idx = -1;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double v = volumetric_iou(predictions[p], ground_truth[g]);
      if (v < overlap_threshold) continue;
      if (!taken[g] && v > best_free) {
        best_free = v;
        free_idx = static_cast<std::ptrdiff_t>(g);
      } else if (taken[g] && v > best_taken) {
        best_taken = v;
        taken_idx = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (free_idx >= 0) {
      rec.kind = MatchKind::true_positive;
      rec.ground_truth = free_idx;
      taken[static_cast<std::size_t>(free_idx)] = 1;
    } else if (taken_idx >= 0) {
      rec.kind = MatchKind::duplicate;
      rec.ground_truth = taken_idx;
    }
    ledger.records.push_back(rec);
  }
  return ledger;
}

EvalResult froc(std::span<const MatchLedger> ledgers) {
  if (ledgers.empty()) throw Error(ErrorCode::invalid_argument, "FROC needs at least one case");
  EvalResult result;
  result.cases = ledgers.size();
  std::vector<MatchRecord> all;
  for (const auto& l : ledgers) {
    result.ground_truth += l.ground_truth_count;
    all.insert(all.end(), l.records.begin(), l.records.end());
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const MatchRecord& a, const MatchRecord& b) { return a.score > b.score; });

  // Operating points after each group of equal scores.
  struct Point {
    double tp, fp, ap_fp;
  };
  std::vector<Point> points{{0.0, 0.0, 0.0}};
  Point cur{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < all.size(); ++i) {
    switch (all[i].kind) {
      case MatchKind::true_positive: cur.tp += 1.0; break;
      case MatchKind::false_positive: cur.fp += 1.0; cur.ap_fp += 1.0; break;
      case MatchKind::duplicate: cur.ap_fp += 1.0; break;
    }
    if (i + 1 == all.size() || all[i + 1].score != all[i].score) points.push_back(cur);
  }

  const double gt = static_cast<double>(result.ground_truth);
  const double cases = static_cast<double>(result.cases);
  for (std::size_t k = 0; k < kFpRates.size(); ++k) {
    double tp = 0.0;
    for (const auto& pt : points)
      if (pt.fp <= kFpRates[k] * cases) tp = std::max(tp, pt.tp);
    result.sensitivity[k] = gt > 0.0 ? tp / gt : 0.0;
  }
  result.average_sensitivity =
      std::accumulate(result.sensitivity.begin(), result.sensitivity.end(), 0.0) /
      static_cast<double>(kFpRates.size());

  if (gt > 0.0) {
    // precision envelope from the right, then sum over recall steps
    std::vector<double> precision(points.size(), 0.0);
    for (std::size_t i = 1; i < points.size(); ++i) {
      const double denom = points[i].tp + points[i].ap_fp;
      precision[i] = denom > 0.0 ? points[i].tp / denom : 0.0;
    }
    for (std::size_t i = points.size(); i-- > 1;)
      if (i + 1 < points.size()) precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
      ap += (points[i].tp - points[i - 1].tp) / gt * precision[i];
    result.ap = ap;
  }
  return result;
}

std::string csv_header() { return "fp0.125,fp0.25,fp0.5,fp1,fp2,fp4,fp8,avg,ap"; }

std::string csv_row(const EvalResult& r) {
  std::string out;
  char buf[32];
  for (double s : r.sensitivity) {
    std::snprintf(buf, sizeof buf, "%.2f,", 100.0 * s);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%.2f,%.2f", 100.0 * r.average_sensitivity, 100.0 * r.ap);
  out += buf;
  return out;
}

}  // namespace explora::metrics
