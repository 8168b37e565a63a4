#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "explora/train.hpp"

namespace explora::exp {

namespace fs = std::filesystem;

/// Everything a run needs: world parameters, training parameters, the
/// comparison arm, the epsilon sweep and the training seeds.
struct ExperimentConfig {
  sim::WorldConfig world;
  std::uint64_t world_seed = 1;
  sim::TrainConfig train;
  sim::Strategy strategy = sim::Strategy::adding;
  std::vector<std::size_t> epsilons;  // empty: {train.epsilon}
  std::vector<std::uint64_t> seeds{1};
  sim::StopMode stop_mode = sim::StopMode::validation_ap;

  std::vector<std::size_t> epsilon_sweep() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Flat JSON object, one key per field. Missing keys keep their defaults;
/// unknown keys and ill-typed values throw Error(invalid_argument) naming
/// the key.
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(std::string_view text);
void validate(const ExperimentConfig& config);

std::string sha256_hex(std::string_view bytes);
/// Hash of the canonical JSON form.
std::string config_hash(const ExperimentConfig& config);

std::string read_file(const fs::path& path);
/// Writes via a temporary file and rename.
void write_file(const fs::path& path, std::string_view bytes);

// ---- world files ------------------------------------------------------------
//   world.json         generator parameters and seed
//   annotations.jsonl  observed labels {case_id, slice, box, origin}
//   latent.jsonl       sealed truth, one record per case (evaluation only)
//   manifest.json      config hash, seed, sha256 of every file

void save_world(const sim::SimWorld& world, const fs::path& dir);
/// Verifies the manifest, regenerates the scene from world.json and takes
/// the observed labels from annotations.jsonl.
sim::SimWorld load_world(const fs::path& dir);

std::string annotations_jsonl(const sim::SimWorld& world);
std::string latent_jsonl(const sim::SimWorld& world);

/// Cases of one split as evaluation truth.
struct TruthCase {
  std::string case_id;
  sim::Split split = sim::Split::test;
  std::vector<tracking::Track3D> lesions;
};
std::vector<TruthCase> parse_latent(std::string_view text);

// ---- predictions ------------------------------------------------------------

/// {case_id, z_start, z_end, box, boxes, score} per track.
std::string tracks_jsonl(const std::vector<tracking::Track3D>& tracks);

/// Accepts track records (z_start present) or per-slice detections
/// {case_id, slice, box, score}; detections are linked into tracks.
std::vector<tracking::Track3D> parse_predictions(std::string_view text, const tracking::LinkConfig& link);

/// Matches predictions against the truth cases of `split`. Predictions for
/// cases outside that set throw Error(not_found) listing them.
metrics::EvalResult evaluate_predictions(const std::vector<tracking::Track3D>& predictions,
                                         const std::vector<TruthCase>& truth, sim::Split split,
                                         double overlap = metrics::kDefaultOverlap);

// ---- runs -------------------------------------------------------------------

/// One line of eval.csv.
struct ResultRow {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t epsilon = 0;  // 0: not applicable
  std::size_t stop_round = 0;
  metrics::EvalResult result;
};

std::string eval_csv_header();
std::string eval_csv_row(const ResultRow& row);

/// Runs the configured arm for every seed on `world`, writing
/// <out>/seed_<s>/{dynamics.csv, bank.snapshot, predictions*.jsonl, eval.csv,
/// manifest.json} and <out>/{eval.csv, manifest.json}.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config, const sim::SimWorld& world,
                                      const fs::path& out_dir);

/// Checks every checksum listed in <dir>/manifest.json (recursively into
/// per-seed manifests). Throws Error(state) naming the first mismatch.
void verify_manifest(const fs::path& dir);

/// Mean of each metric over seeds, grouped by (strategy, epsilon), across
/// the eval.csv files of the given run directories (manifests verified).
std::string report(const std::vector<fs::path>& run_dirs);

// ---- bank tooling -----------------------------------------------------------

std::string bank_inspect(const PredictionBank& bank);
/// JSONL {case_id, slice, box, origin:"mined", hits} of bank_select(epsilon).
std::string bank_select_jsonl(const PredictionBank& bank, std::size_t epsilon);
/// Histogram of hit counts over mined entries, plus visit counts.
std::string bank_stats(const PredictionBank& bank);

}  // namespace explora::exp
