#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "explora/geometry.hpp"

namespace explora {

enum class EntryOrigin { ground_truth, mined };

const char* to_string(EntryOrigin origin);

struct BankEntry {
  Box2D box;
  /// One bit per visit of the case since the entry was created. Empty for
  /// ground-truth entries.
  std::vector<bool> hit_history;
  EntryOrigin origin = EntryOrigin::mined;

  std::size_t match_count() const;
  bool hit_latest() const { return !hit_history.empty() && hit_history.back(); }

  friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

struct BankCase {
  std::vector<BankEntry> entries;
  std::size_t visit_count = 0;

  friend bool operator==(const BankCase&, const BankCase&) = default;
};

struct BankConfig {
  double record_threshold = 0.85;  // theta: minimum score to be recorded
  double match_iou = 0.7;          // gamma_match: IoU to count as the same object
  double gt_nms_iou = kDefaultGtNmsIou;

  friend bool operator==(const BankConfig&, const BankConfig&) = default;
};

struct UpdateReport {
  std::size_t matched = 0;         // existing mined entries hit this visit
  std::size_t created = 0;         // new mined entries
  std::size_t missed = 0;          // existing mined entries not hit
  std::size_t below_threshold = 0; // predictions dropped by the score filter
  std::size_t gt_suppressed = 0;   // predictions dropped by GT NMS
  std::size_t absorbed = 0;        // survivors overlapping an entry already claimed this visit
  std::size_t merged = 0;          // entry pairs merged after the running-mean update
};

/// Per-case store of mined boxes with binary hit histories.
///
/// Each update filters predictions by score, removes those covered by an
/// annotation (GT NMS), matches the rest one-to-one to mined entries by
/// highest IoU, and appends one hit bit to every mined entry of the case.
/// Matched boxes follow the running mean of all matched observations.
/// Mined entries never overlap each other at or above match_iou: a survivor
/// that collides with an entry already claimed this visit is absorbed, and
/// entries that drift into each other are merged (hit histories OR-ed,
/// aligned on the most recent visit).
///
/// Not internally synchronized; serialize updates to the same case.
class PredictionBank {
 public:
  PredictionBank() = default;
  explicit PredictionBank(BankConfig config);

  const BankConfig& config() const { return config_; }

  /// Registers a case with its annotations as ground-truth entries.
  void init_case(const std::string& case_id, std::span<const Box2D> annotations);

  UpdateReport update(const std::string& case_id, std::span<const ScoredBox> predictions,
                      std::span<const Box2D> annotations);

  /// Mined entries with at least `min_hits` hits, per case. Cases without any
  /// selected entry are omitted.
  std::map<std::string, std::vector<Box2D>> select(std::size_t min_hits) const;

  /// Entries whose most recent hit bit is 1, over all cases.
  std::size_t mined_count_latest() const;
  /// Number of mined entries, over all cases.
  std::size_t mined_total() const;

  bool contains(const std::string& case_id) const { return cases_.count(case_id) != 0; }
  const BankCase& at(const std::string& case_id) const;
  const std::map<std::string, BankCase>& cases() const { return cases_; }

  std::string serialize() const;
  /// Parses a snapshot; throws ParseError with the byte offset of the first
  /// malformed record. Nothing is returned on failure.
  static PredictionBank deserialize(std::string_view text);

  friend bool operator==(const PredictionBank&, const PredictionBank&) = default;

 private:
  BankConfig config_;
  std::map<std::string, BankCase> cases_;
};

inline constexpr std::string_view kBankSnapshotHeader = "explorabank-snapshot v1";

}  // namespace explora
