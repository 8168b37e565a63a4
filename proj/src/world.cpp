#include "explora/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "explora/error.hpp"

namespace explora::sim {

const char* to_string(LabelBias b) { return b == LabelBias::scar ? "scar" : "size_biased"; }
const char* to_string(LesionMode m) { return m == LesionMode::easy ? "easy" : "hard"; }
const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

LabelBias label_bias_from_string(const std::string& s) {
  if (s == "scar") return LabelBias::scar;
  if (s == "size_biased") return LabelBias::size_biased;
  throw Error(ErrorCode::invalid_argument, "label_bias: unknown value '" + s + "'");
}
LesionMode lesion_mode_from_string(const std::string& s) {
  if (s == "easy") return LesionMode::easy;
  if (s == "hard") return LesionMode::hard;
  throw Error(ErrorCode::invalid_argument, "mode: unknown value '" + s + "'");
}
Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::invalid_argument, "split: unknown value '" + s + "'");
}

void validate(const WorldConfig& c) {
  auto fail = [](const char* field, const char* why) {
    throw Error(ErrorCode::invalid_argument, std::string(field) + ": " + why);
  };
  if (c.train_cases < 1) fail("train_cases", "must be >= 1");
  if (c.validation_cases < 1) fail("validation_cases", "must be >= 1");
  if (c.test_cases < 1) fail("test_cases", "must be >= 1");
  if (c.slices < 1) fail("slices", "must be >= 1");
  if (!(c.lesions_per_case >= 0.0)) fail("lesions_per_case", "must be >= 0");
  if (!(c.easy_fraction >= 0.0 && c.easy_fraction <= 1.0)) fail("easy_fraction", "must lie in [0, 1]");
  if (!(c.label_rate >= 0.0 && c.label_rate <= 1.0)) fail("label_rate", "must lie in [0, 1]");
  if (!(c.bias_exponent >= 1.0)) fail("bias_exponent", "must be >= 1");
  if (c.feature_dim < 2) fail("feature_dim", "must be >= 2");
  if (c.context_dim < 0 || c.context_dim > c.feature_dim)
    fail("context_dim", "must lie in [0, feature_dim]");
  if (c.anchor_grid < 1) fail("anchor_grid", "must be >= 1");
  if (c.jitter_copies < 1) fail("jitter_copies", "must be >= 1");
  if (!(c.jitter_magnitude >= 0.0 && c.jitter_magnitude < 0.2))
    fail("jitter_magnitude", "must lie in [0, 0.2)");
  if (!(c.lesion_spread >= 0.0)) fail("lesion_spread", "must be >= 0");
  if (!(c.background_spread >= 0.0)) fail("background_spread", "must be >= 0");
  if (!(c.hard_negative_rate >= 0.0 && c.hard_negative_rate <= 1.0))
    fail("hard_negative_rate", "must lie in [0, 1]");
  if (!(c.hard_negative_spread >= 0.0)) fail("hard_negative_spread", "must be >= 0");
  if (!(c.observation_noise >= 0.0)) fail("observation_noise", "must be >= 0");
}

std::vector<std::size_t> SimWorld::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < studies.size(); ++i)
    if (studies[i].split == split) out.push_back(i);
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<double> mode_center(const WorldConfig& c, double first, double second) {
  std::vector<double> v(static_cast<std::size_t>(c.feature_dim), 0.0);
  v[0] = first;
  v[1] = second;
  return v;
}

// Cheap-to-seed engine for per-anchor background draws.
struct SplitMix64 {
  using result_type = std::uint64_t;
  std::uint64_t state;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

template <class Engine>
void add_gaussian(std::vector<double>& v, double sigma, Engine& rng) {
  if (sigma == 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& x : v) x += n(rng);
}

bool overlaps_existing(const std::vector<Lesion>& lesions, const Lesion& l) {
  for (const auto& o : lesions) {
    if (o.z_hi < l.z_lo || l.z_hi < o.z_lo) continue;
    if (iou_unchecked(o.box, l.box) > 0.0) return true;
  }
  return false;
}

}  // namespace

SimWorld generate_world(const WorldConfig& config, std::uint64_t seed) {
  validate(config);
  SimWorld world{config, seed, {}};
  Rng rng(mix_seed(seed, 0x574f524cULL));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::poisson_distribution<int> count(config.lesions_per_case);

  const double q = config.label_rate;
  const double p_hard = std::pow(q, config.bias_exponent);
  const double f = config.easy_fraction;
  const double p_easy = f > 0.0 ? std::min(1.0, (q - (1.0 - f) * p_hard) / f) : q;

  auto make_studies = [&](int n, Split split, const char* prefix) {
    for (int i = 0; i < n; ++i) {
      Study s;
      char id[32];
      std::snprintf(id, sizeof id, "%s%04d", prefix, i);
      s.case_id = id;
      s.split = split;
      s.slice_count = config.slices;
      const int n_lesions = count(rng);
      for (int k = 0; k < n_lesions; ++k) {
        for (int attempt = 0; attempt < 20; ++attempt) {
          Lesion l;
          l.mode = u01(rng) < f ? LesionMode::easy : LesionMode::hard;
          const bool easy = l.mode == LesionMode::easy;
          const double side = easy ? 0.12 + 0.10 * u01(rng) : 0.05 + 0.05 * u01(rng);
          const double aspect = 0.8 + 0.4 * u01(rng);
          const double w = std::min(0.3, side * aspect);
          const double h = side;
          const double cx = 0.5 * w + (1.0 - w) * u01(rng);
          const double cy = 0.5 * h + (1.0 - h) * u01(rng);
          l.box = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
          const int max_len = easy ? 5 : 3;
          const int min_len = easy ? 2 : 1;
          int len = min_len + static_cast<int>(u01(rng) * (max_len - min_len + 1));
          len = std::clamp(len, 1, config.slices);
          l.z_lo = static_cast<int>(u01(rng) * (config.slices - len + 1));
          l.z_lo = std::clamp(l.z_lo, 0, config.slices - len);
          l.z_hi = l.z_lo + len - 1;
          l.appearance = easy ? mode_center(config, config.easy_center, 0.0)
                              : mode_center(config, config.hard_center, config.hard_offset);
          add_gaussian(l.appearance, config.lesion_spread, rng);
          const double p_label = config.label_bias == LabelBias::scar ? q : (easy ? p_easy : p_hard);
          const bool labeled = u01(rng) < p_label;
          l.observed = split == Split::train ? labeled : true;
          if (overlaps_existing(s.lesions, l)) continue;
          s.lesions.push_back(std::move(l));
          break;
        }
      }
      world.studies.push_back(std::move(s));
    }
  };
  make_studies(config.train_cases, Split::train, "tr");
  make_studies(config.validation_cases, Split::validation, "va");
  make_studies(config.test_cases, Split::test, "te");
  return world;
}

std::vector<Box2D> annotations(const Study& study, int slice) {
  std::vector<Box2D> out;
  for (const auto& l : study.lesions)
    if (l.observed && l.spans(slice)) out.push_back(l.box);
  return out;
}

std::vector<Box2D> lesion_boxes(const Study& study, int slice) {
  std::vector<Box2D> out;
  for (const auto& l : study.lesions)
    if (l.spans(slice)) out.push_back(l.box);
  return out;
}

namespace {

constexpr double kAppearanceIou = 0.5;

Box2D anchor_box(int grid, int a) {
  const double step = 1.0 / grid;
  const int gx = a % grid;
  const int gy = a / grid;
  return {gx * step, gy * step, (gx + 1) * step, (gy + 1) * step};
}

SplitMix64 anchor_rng(const SimWorld& w, std::size_t study, int slice, int a) {
  return SplitMix64{mix_seed(mix_seed(mix_seed(w.seed, 0xB6ULL + study), static_cast<std::uint64_t>(slice)),
                             static_cast<std::uint64_t>(a))};
}

// Deterministic background appearance of anchor `a` on a slice.
std::vector<double> anchor_background(const SimWorld& w, std::size_t study, int slice, int a) {
  const auto& c = w.config;
  SplitMix64 rng = anchor_rng(w, study, slice, a);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<double> v;
  if (u01(rng) < c.hard_negative_rate) {
    v = mode_center(c, c.hard_negative_center, c.hard_offset);
    add_gaussian(v, c.hard_negative_spread, rng);
  } else {
    v = mode_center(c, 0.0, 0.0);
    add_gaussian(v, c.background_spread, rng);
  }
  return v;
}

std::ptrdiff_t lesion_at(const Study& s, int slice, const Box2D& box) {
  std::ptrdiff_t best = -1;
  double best_iou = kAppearanceIou;
  for (std::size_t i = 0; i < s.lesions.size(); ++i) {
    if (!s.lesions[i].spans(slice)) continue;
    const double v = iou_unchecked(s.lesions[i].box, box);
    if (v >= best_iou) {
      best_iou = v;
      best = static_cast<std::ptrdiff_t>(i);
    }
  }
  return best;
}

}  // namespace

std::vector<Candidate> propose(const SimWorld& world, std::size_t study_index, int slice, Rng& rng) {
  const auto& c = world.config;
  const Study& s = world.studies.at(study_index);
  if (slice < 0 || slice >= s.slice_count)
    throw Error(ErrorCode::invalid_argument, "slice index out of range");
  const auto d = static_cast<std::size_t>(c.feature_dim);
  const auto cd = static_cast<std::size_t>(c.context_dim);
  std::normal_distribution<double> noise(0.0, 1.0);

  // Appearance found at `box` on slice z: the anchor's background (or generic
  // background), blended with a lesion's appearance by their overlap.
  auto content = [&](const Box2D& box, int z, int anchor) -> std::vector<double> {
    std::vector<double> v;
    if (anchor >= 0) {
      v = anchor_background(world, study_index, z, anchor);
    } else {
      v.assign(d, 0.0);
      for (double& x : v) x = c.background_spread * noise(rng);
    }
    const std::ptrdiff_t l = lesion_at(s, z, box);
    if (l >= 0) {
      const Lesion& les = s.lesions[static_cast<std::size_t>(l)];
      const double w = iou_unchecked(les.box, box);
      for (std::size_t k = 0; k < d; ++k) v[k] = w * les.appearance[k] + (1.0 - w) * v[k];
    }
    return v;
  };

  auto build = [&](const Box2D& box, int anchor) {
    Candidate cand;
    cand.box = box;
    cand.anchor = anchor >= 0;
    cand.lesion = lesion_at(s, slice, box);
    cand.features.assign(world.feature_width(), 0.0);
    const std::vector<double> app = content(box, slice, anchor);
    for (std::size_t k = 0; k < d; ++k) cand.features[k] = app[k] + c.observation_noise * noise(rng);
    for (int side = 0; side < 2; ++side) {
      const int z = side == 0 ? slice - 1 : slice + 1;
      if (z < 0 || z >= s.slice_count) continue;
      const std::vector<double> nb = content(box, z, anchor);
      for (std::size_t k = 0; k < cd; ++k)
        cand.features[d + side * cd + k] = c.context_gain * nb[k] + c.observation_noise * noise(rng);
    }
    return cand;
  };

  std::vector<Candidate> out;
  const int grid = c.anchor_grid;
  out.reserve(static_cast<std::size_t>(grid * grid) + s.lesions.size() * c.jitter_copies);
  for (int a = 0; a < grid * grid; ++a) out.push_back(build(anchor_box(grid, a), a));
  for (const auto& l : s.lesions) {
    if (!l.spans(slice)) continue;
    for (int j = 0; j < c.jitter_copies; ++j) out.push_back(build(jitter(l.box, c.jitter_magnitude, rng), -1));
  }
  return out;
}

Box2D anchor_box(const SimWorld& world, int anchor) {
  const int grid = world.config.anchor_grid;
  if (anchor < 0 || anchor >= grid * grid) throw Error(ErrorCode::invalid_argument, "anchor index out of range");
  return anchor_box(grid, anchor);
}

bool is_hard_negative_anchor(const SimWorld& world, std::size_t study_index, int slice, int anchor) {
  SplitMix64 rng = anchor_rng(world, study_index, slice, anchor);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  return u01(rng) < world.config.hard_negative_rate;
}

bool slice_dropout(std::span<double> features, std::size_t appearance_dim, std::size_t context_dim,
                   double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0))
    throw Error(ErrorCode::invalid_argument, "slice dropout probability must lie in [0, 1]");
  if (features.size() < appearance_dim + 2 * context_dim)
    throw Error(ErrorCode::invalid_argument, "feature vector too short for the context layout");
  if (prob == 0.0) return false;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) >= prob) return false;
  const std::size_t side = u01(rng) < 0.5 ? 0 : 1;
  std::fill_n(features.begin() + static_cast<std::ptrdiff_t>(appearance_dim + side * context_dim),
              context_dim, 0.0);
  return true;
}

}  // namespace explora::sim
