#include "explora/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "explora/error.hpp"

namespace explora::tracking {

Eigen::Vector4d to_measurement(const Box2D& box) {
  return {box.center_x(), box.center_y(), box.width(), box.height()};
}

Box2D to_box(const Eigen::Vector4d& s) {
  return {s[0] - 0.5 * s[2], s[1] - 0.5 * s[3], s[0] + 0.5 * s[2], s[1] + 0.5 * s[3]};
}

bool is_symmetric_psd(const Eigen::Matrix4d& m, double tol) {
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(m);
  return eig.eigenvalues().minCoeff() >= -tol * scale;
}

namespace {

void require_psd(const KalmanState& s) {
  if (!s.mean.allFinite() || !is_symmetric_psd(s.covariance))
    throw Error(ErrorCode::invalid_argument, "Kalman covariance must be symmetric PSD");
}

}  // namespace

KalmanState kalman_init(const Box2D& first, const KalmanConfig& config) {
  require_valid(first);
  KalmanState s;
  s.mean = to_measurement(first);
  s.covariance = Eigen::Matrix4d::Identity() * (config.initial_std * config.initial_std);
  return s;
}

KalmanState kalman_predict(const KalmanState& state, const KalmanConfig& config) {
  require_psd(state);
  KalmanState out = state;
  out.covariance += Eigen::Matrix4d::Identity() * (config.process_noise * config.process_noise);
  return out;
}

KalmanState kalman_correct(const KalmanState& state, const Box2D& measurement,
                           const KalmanConfig& config) {
  require_psd(state);
  require_valid(measurement);
  const Eigen::Matrix4d r =
      Eigen::Matrix4d::Identity() * (config.measurement_noise * config.measurement_noise);
  const Eigen::Matrix4d& p = state.covariance;
  const Eigen::Matrix4d innovation_cov = p + r;
  // K = P S^-1; S is symmetric PSD, so solve with a pseudo-inverse-safe LDLT.
  const Eigen::Matrix4d gain = innovation_cov.ldlt().solve(p).transpose();
  const Eigen::Matrix4d i_k = Eigen::Matrix4d::Identity() - gain;

  KalmanState out;
  out.mean = state.mean + gain * (to_measurement(measurement) - state.mean);
  out.covariance = i_k * p * i_k.transpose() + gain * r * gain.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

namespace {

struct LiveTrack {
  Track3D track;
  KalmanState filter;
  int misses = 0;
  double score_sum = 0.0;
  int last_hit = 0;
};

Track3D finish(LiveTrack&& live) {
  Track3D t = std::move(live.track);
  // Drop bridged slices after the last real detection.
  t.boxes.resize(static_cast<std::size_t>(live.last_hit - t.z_start + 1));
  t.z_end = live.last_hit;
  t.score = live.score_sum / static_cast<double>(t.members.size());
  return t;
}

}  // namespace

std::vector<Track3D> link_tracks(const std::string& case_id,
                                 const std::map<int, std::vector<ScoredBox>>& per_slice,
                                 const LinkConfig& config) {
  if (!(config.link_iou > 0.0 && config.link_iou <= 1.0))
    throw Error(ErrorCode::invalid_argument, "link_iou must lie in (0, 1]");
  if (config.max_gap < 0) throw Error(ErrorCode::invalid_argument, "max_gap must be >= 0");

  std::vector<Track3D> done;
  std::vector<LiveTrack> live;
  if (per_slice.empty()) return done;

  const int z_first = per_slice.begin()->first;
  const int z_last = per_slice.rbegin()->first;
  static const std::vector<ScoredBox> kNone;

  for (int z = z_first; z <= z_last; ++z) {
    auto it = per_slice.find(z);
    const std::vector<ScoredBox>& dets = it == per_slice.end() ? kNone : it->second;
    for (const auto& d : dets) require_valid(d.box);

    std::vector<Box2D> predicted;
    for (auto& lt : live) {
      lt.filter = kalman_predict(lt.filter, config.kalman);
      predicted.push_back(to_box(lt.filter.mean));
    }

    // (iou, det score, track, det)
    std::vector<std::tuple<double, double, std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < live.size(); ++t)
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const double v = predicted[t].valid() ? iou_unchecked(predicted[t], dets[d].box) : 0.0;
        if (v >= config.link_iou) pairs.emplace_back(v, dets[d].score, t, d);
      }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
      if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) < std::get<2>(b);
      return std::get<3>(a) < std::get<3>(b);
    });

    std::vector<std::ptrdiff_t> track_det(live.size(), -1);
    std::vector<char> claimed(dets.size(), 0);
    for (const auto& [v, s, t, d] : pairs) {
      if (track_det[t] >= 0 || claimed[d]) continue;
      track_det[t] = static_cast<std::ptrdiff_t>(d);
      claimed[d] = 1;
    }

    std::vector<LiveTrack> still_live;
    for (std::size_t t = 0; t < live.size(); ++t) {
      LiveTrack& lt = live[t];
      if (track_det[t] >= 0) {
        const auto d = static_cast<std::size_t>(track_det[t]);
        lt.filter = kalman_correct(lt.filter, dets[d].box, config.kalman);
        lt.track.boxes.push_back(dets[d].box);
        lt.track.members.emplace_back(z, d);
        lt.score_sum += dets[d].score;
        lt.misses = 0;
        lt.last_hit = z;
        lt.track.z_end = z;
        still_live.push_back(std::move(lt));
      } else if (++lt.misses > config.max_gap) {
        done.push_back(finish(std::move(lt)));
      } else {
        lt.track.boxes.push_back(predicted[t]);
        lt.track.z_end = z;
        still_live.push_back(std::move(lt));
      }
    }
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (claimed[d]) continue;
      LiveTrack lt;
      lt.track.case_id = case_id;
      lt.track.z_start = z;
      lt.track.z_end = z;
      lt.track.boxes.push_back(dets[d].box);
      lt.track.members.emplace_back(z, d);
      lt.filter = kalman_init(dets[d].box, config.kalman);
      lt.score_sum = dets[d].score;
      lt.last_hit = z;
      still_live.push_back(std::move(lt));
    }
    live = std::move(still_live);
  }
  for (auto& lt : live) done.push_back(finish(std::move(lt)));

  std::stable_sort(done.begin(), done.end(), [](const Track3D& a, const Track3D& b) {
    if (a.z_start != b.z_start) return a.z_start < b.z_start;
    return a.members.front().second < b.members.front().second;
  });
  return done;
}

Box3D track_to_box3d(const Track3D& track) {
  if (track.boxes.empty() || track.z_end < track.z_start)
    throw Error(ErrorCode::invalid_argument, "empty track");
  Box3D out{track.z_start, track.z_end, track.boxes.front()};
  for (const auto& b : track.boxes) {
    out.box.x_min = std::min(out.box.x_min, b.x_min);
    out.box.y_min = std::min(out.box.y_min, b.y_min);
    out.box.x_max = std::max(out.box.x_max, b.x_max);
    out.box.y_max = std::max(out.box.y_max, b.y_max);
  }
  return out;
}

}  // namespace explora::tracking
