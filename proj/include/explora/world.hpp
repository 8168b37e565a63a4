#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "explora/geometry.hpp"

namespace explora::sim {

enum class LabelBias { scar, size_biased };
enum class LesionMode { easy, hard };
enum class Split { train, validation, test };

const char* to_string(LabelBias);
const char* to_string(LesionMode);
const char* to_string(Split);
LabelBias label_bias_from_string(const std::string&);
LesionMode lesion_mode_from_string(const std::string&);
Split split_from_string(const std::string&);

struct Lesion {
  Box2D box;  // constant over the z-span
  int z_lo = 0;
  int z_hi = 0;
  LesionMode mode = LesionMode::easy;
  std::vector<double> appearance;
  bool observed = false;  // annotated in the released labels

  bool spans(int z) const { return z >= z_lo && z <= z_hi; }
  friend bool operator==(const Lesion&, const Lesion&) = default;
};

struct Study {
  std::string case_id;
  Split split = Split::train;
  int slice_count = 0;
  std::vector<Lesion> lesions;

  friend bool operator==(const Study&, const Study&) = default;
};

/// Generator parameters. Appearance modes live in the first two feature
/// dimensions (background at the origin); remaining dimensions are nuisance.
/// Easy lesions are large, far from background and span several slices. Hard
/// lesions are small and sit between the easy mode and a hard-negative
/// background cluster that shares their second coordinate.
struct WorldConfig {
  int train_cases = 160;
  int validation_cases = 48;
  int test_cases = 48;
  int slices = 8;
  double lesions_per_case = 2.5;
  double easy_fraction = 0.3;

  double label_rate = 0.5;  // q
  LabelBias label_bias = LabelBias::size_biased;
  double bias_exponent = 1.32;  // hard lesions are labeled with probability q^exponent

  int feature_dim = 6;
  int context_dim = 2;

  int anchor_grid = 6;
  int jitter_copies = 3;
  double jitter_magnitude = 0.08;

  double easy_center = 3.0;
  double hard_center = 1.8;
  double hard_offset = 1.5;
  double lesion_spread = 0.6;
  double background_spread = 1.0;
  double hard_negative_rate = 0.06;
  double hard_negative_center = 0.8;
  double hard_negative_spread = 0.5;
  double observation_noise = 0.3;
  double context_gain = 0.8;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

/// Throws Error(invalid_argument) naming the offending field.
void validate(const WorldConfig& config);

struct SimWorld {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<Study> studies;

  /// appearance + previous-slice context + next-slice context
  std::size_t feature_width() const {
    return static_cast<std::size_t>(config.feature_dim + 2 * config.context_dim);
  }
  std::vector<std::size_t> split_indices(Split split) const;

  friend bool operator==(const SimWorld&, const SimWorld&) = default;
};

SimWorld generate_world(const WorldConfig& config, std::uint64_t seed);

/// Well-mixed 64-bit hash used to derive independent deterministic streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct Candidate {
  Box2D box;
  std::vector<double> features;
  std::ptrdiff_t lesion = -1;  // latent: lesion whose appearance the candidate carries
  bool anchor = false;
};

/// Anchor grid (k*k boxes) followed by jittered copies of every lesion present
/// on the slice. A candidate overlapping a lesion at IoU >= 0.5 carries that
/// lesion's appearance; others carry deterministic per-anchor background.
/// Context blocks summarize the neighbouring slices at the same location and
/// are zero where the neighbour lies outside the volume. `rng` drives the
/// per-visit jitter and observation noise.
std::vector<Candidate> propose(const SimWorld& world, std::size_t study_index, int slice, Rng& rng);

/// Boxes of observed lesions on a slice (training labels).
std::vector<Box2D> annotations(const Study& study, int slice);
/// Boxes of every lesion on a slice (latent truth).
std::vector<Box2D> lesion_boxes(const Study& study, int slice);

/// With probability `prob`, zeroes the context block of one side picked
/// uniformly. Returns true when a side was dropped.
/// Box of grid anchor `anchor` (row-major).
Box2D anchor_box(const SimWorld& world, int anchor);
/// Whether the anchor's background on that slice is drawn from the
/// hard-negative cluster.
bool is_hard_negative_anchor(const SimWorld& world, std::size_t study_index, int slice, int anchor);

bool slice_dropout(std::span<double> features, std::size_t appearance_dim, std::size_t context_dim,
                   double prob, Rng& rng);

}  // namespace explora::sim
