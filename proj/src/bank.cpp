#include "explora/bank.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <tuple>

#include "explora/error.hpp"

namespace explora {

const char* to_string(EntryOrigin origin) {
  return origin == EntryOrigin::ground_truth ? "ground_truth" : "mined";
}

std::size_t BankEntry::match_count() const {
  return static_cast<std::size_t>(std::count(hit_history.begin(), hit_history.end(), true));
}

PredictionBank::PredictionBank(BankConfig config) : config_(config) {
  if (!(config.record_threshold >= 0.0 && config.record_threshold <= 1.0))
    throw Error(ErrorCode::invalid_argument, "record_threshold must lie in [0, 1]");
  if (!(config.match_iou > 0.0 && config.match_iou <= 1.0))
    throw Error(ErrorCode::invalid_argument, "match_iou must lie in (0, 1]");
  if (!(config.gt_nms_iou > 0.0 && config.gt_nms_iou <= 1.0))
    throw Error(ErrorCode::invalid_argument, "gt_nms_iou must lie in (0, 1]");
}

void PredictionBank::init_case(const std::string& case_id, std::span<const Box2D> annotations) {
  if (case_id.empty() || case_id.find_first_of("\t\n\r ") != std::string::npos)
    throw Error(ErrorCode::invalid_argument, "case id must be non-empty without whitespace");
  if (cases_.count(case_id)) throw Error(ErrorCode::invalid_argument, "duplicate case id " + case_id);
  BankCase c;
  for (const auto& a : annotations) {
    require_valid(a);
    c.entries.push_back(BankEntry{a, {}, EntryOrigin::ground_truth});
  }
  cases_.emplace(case_id, std::move(c));
}

const BankCase& PredictionBank::at(const std::string& case_id) const {
  auto it = cases_.find(case_id);
  if (it == cases_.end()) throw Error(ErrorCode::not_found, "unknown case id " + case_id);
  return it->second;
}

namespace {

Box2D weighted_mean(const Box2D& a, double wa, const Box2D& b, double wb) {
  const double s = wa + wb;
  return {(a.x_min * wa + b.x_min * wb) / s, (a.y_min * wa + b.y_min * wb) / s,
          (a.x_max * wa + b.x_max * wb) / s, (a.y_max * wa + b.y_max * wb) / s};
}

// Running mean over k previous observations plus one new one.
Box2D running_mean(const Box2D& mean, std::size_t k, const Box2D& obs) {
  const double inv = 1.0 / static_cast<double>(k + 1);
  return {mean.x_min + (obs.x_min - mean.x_min) * inv, mean.y_min + (obs.y_min - mean.y_min) * inv,
          mean.x_max + (obs.x_max - mean.x_max) * inv, mean.y_max + (obs.y_max - mean.y_max) * inv};
}

std::vector<bool> or_aligned_on_latest(const std::vector<bool>& a, const std::vector<bool>& b) {
  const auto& longer = a.size() >= b.size() ? a : b;
  const auto& shorter = a.size() >= b.size() ? b : a;
  std::vector<bool> out = longer;
  const std::size_t offset = longer.size() - shorter.size();
  for (std::size_t i = 0; i < shorter.size(); ++i)
    out[offset + i] = out[offset + i] || shorter[i];
  return out;
}

}  // namespace

UpdateReport PredictionBank::update(const std::string& case_id,
                                    std::span<const ScoredBox> predictions,
                                    std::span<const Box2D> annotations) {
  auto it = cases_.find(case_id);
  if (it == cases_.end()) throw Error(ErrorCode::not_found, "unknown case id " + case_id);
  BankCase& c = it->second;
  UpdateReport report;

  std::vector<ScoredBox> confident;
  for (const auto& p : predictions) {
    if (p.score >= config_.record_threshold)
      confident.push_back(p);
    else
      ++report.below_threshold;
  }
  const std::vector<ScoredBox> survivors = gt_nms(confident, annotations, config_.gt_nms_iou);
  report.gt_suppressed = confident.size() - survivors.size();

  std::vector<std::size_t> mined;
  for (std::size_t e = 0; e < c.entries.size(); ++e)
    if (c.entries[e].origin == EntryOrigin::mined) mined.push_back(e);

  // Greedy one-to-one matching by descending IoU; ties go to the earlier
  // entry, then the earlier prediction.
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t e : mined)
    for (std::size_t p = 0; p < survivors.size(); ++p) {
      const double v = iou_unchecked(c.entries[e].box, survivors[p].box);
      if (v >= config_.match_iou) pairs.emplace_back(v, e, p);
    }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<std::ptrdiff_t> entry_match(c.entries.size(), -1);
  std::vector<char> pred_used(survivors.size(), 0);
  for (const auto& [v, e, p] : pairs) {
    if (entry_match[e] >= 0 || pred_used[p]) continue;
    entry_match[e] = static_cast<std::ptrdiff_t>(p);
    pred_used[p] = 1;
  }
  for (std::size_t e : mined) {
    BankEntry& entry = c.entries[e];
    if (entry_match[e] >= 0) {
      entry.box = running_mean(entry.box, entry.match_count(),
                               survivors[static_cast<std::size_t>(entry_match[e])].box);
      entry.hit_history.push_back(true);
      ++report.matched;
    } else {
      entry.hit_history.push_back(false);
      ++report.missed;
    }
  }

  // New entries, highest score first; equal scores keep input order.
  std::vector<std::size_t> fresh;
  for (std::size_t p = 0; p < survivors.size(); ++p)
    if (!pred_used[p]) fresh.push_back(p);
  std::stable_sort(fresh.begin(), fresh.end(), [&](std::size_t a, std::size_t b) {
    return survivors[a].score > survivors[b].score;
  });
  for (std::size_t p : fresh) {
    const bool collides = std::any_of(c.entries.begin(), c.entries.end(), [&](const BankEntry& e) {
      return e.origin == EntryOrigin::mined &&
             iou_unchecked(e.box, survivors[p].box) >= config_.match_iou;
    });
    if (collides) {
      ++report.absorbed;
      continue;
    }
    c.entries.push_back(BankEntry{survivors[p].box, {true}, EntryOrigin::mined});
    ++report.created;
  }

  // Merge entries that drifted into each other; keep the older entry.
  for (;;) {
    double best = -1.0;
    std::size_t keep = 0, drop = 0;
    for (std::size_t a = 0; a < c.entries.size(); ++a) {
      if (c.entries[a].origin != EntryOrigin::mined) continue;
      for (std::size_t b = a + 1; b < c.entries.size(); ++b) {
        if (c.entries[b].origin != EntryOrigin::mined) continue;
        const double v = iou_unchecked(c.entries[a].box, c.entries[b].box);
        if (v >= config_.match_iou && v > best) {
          best = v;
          keep = a;
          drop = b;
        }
      }
    }
    if (best < 0.0) break;
    BankEntry& k = c.entries[keep];
    const BankEntry& d = c.entries[drop];
    k.box = weighted_mean(k.box, static_cast<double>(std::max<std::size_t>(k.match_count(), 1)),
                          d.box, static_cast<double>(std::max<std::size_t>(d.match_count(), 1)));
    k.hit_history = or_aligned_on_latest(k.hit_history, d.hit_history);
    c.entries.erase(c.entries.begin() + static_cast<std::ptrdiff_t>(drop));
    ++report.merged;
  }

  ++c.visit_count;
  return report;
}

std::map<std::string, std::vector<Box2D>> PredictionBank::select(std::size_t min_hits) const {
  if (min_hits < 1) throw Error(ErrorCode::invalid_argument, "selection threshold must be >= 1");
  std::map<std::string, std::vector<Box2D>> out;
  for (const auto& [id, c] : cases_) {
    std::vector<Box2D> boxes;
    for (const auto& e : c.entries)
      if (e.origin == EntryOrigin::mined && e.match_count() >= min_hits) boxes.push_back(e.box);
    if (!boxes.empty()) out.emplace(id, std::move(boxes));
  }
  return out;
}

std::size_t PredictionBank::mined_count_latest() const {
  std::size_t n = 0;
  for (const auto& [id, c] : cases_)
    for (const auto& e : c.entries)
      if (e.origin == EntryOrigin::mined && e.hit_latest()) ++n;
  return n;
}

std::size_t PredictionBank::mined_total() const {
  std::size_t n = 0;
  for (const auto& [id, c] : cases_)
    for (const auto& e : c.entries)
      if (e.origin == EntryOrigin::mined) ++n;
  return n;
}

// Snapshot layout, tab separated, one record per line:
//   explorabank-snapshot v1
//   config <theta> <match_iou> <gt_nms_iou>
//   case <case_id> <visit_count> <entry_count>
//   entry <case_id> <origin> <x_min> <y_min> <x_max> <y_max> <hits|->
std::string PredictionBank::serialize() const {
  std::string out;
  char buf[256];
  out += kBankSnapshotHeader;
  out += '\n';
  std::snprintf(buf, sizeof buf, "config\t%.6f\t%.6f\t%.6f\n", config_.record_threshold,
                config_.match_iou, config_.gt_nms_iou);
  out += buf;
  for (const auto& [id, c] : cases_) {
    out += "case\t" + id + '\t' + std::to_string(c.visit_count) + '\t' +
           std::to_string(c.entries.size()) + '\n';
    for (const auto& e : c.entries) {
      std::snprintf(buf, sizeof buf, "\t%s\t%.6f\t%.6f\t%.6f\t%.6f\t", to_string(e.origin),
                    e.box.x_min, e.box.y_min, e.box.x_max, e.box.y_max);
      out += "entry\t" + id + buf;
      if (e.hit_history.empty()) {
        out += '-';
      } else {
        for (bool bit : e.hit_history) out += bit ? '1' : '0';
      }
      out += '\n';
    }
  }
  return out;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

double parse_double(std::string_view s, std::size_t offset) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(offset, "expected a number, got '" + std::string(s) + "'");
  return v;
}

std::size_t parse_count(std::string_view s, std::size_t offset) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(offset, "expected a count, got '" + std::string(s) + "'");
  return v;
}

}  // namespace

PredictionBank PredictionBank::deserialize(std::string_view text) {
  std::size_t pos = 0;
  auto next_line = [&](std::size_t& line_start) -> std::string_view {
    line_start = pos;
    if (pos >= text.size()) throw ParseError(pos, "unexpected end of snapshot");
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw ParseError(pos, "truncated record (missing newline)");
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  std::size_t at = 0;
  if (next_line(at) != kBankSnapshotHeader) throw ParseError(at, "missing snapshot header");

  auto cfg = split_tabs(next_line(at));
  if (cfg.size() != 4 || cfg[0] != "config") throw ParseError(at, "expected config record");
  BankConfig config{parse_double(cfg[1], at), parse_double(cfg[2], at), parse_double(cfg[3], at)};
  PredictionBank bank = [&] {
    try {
      return PredictionBank(config);
    } catch (const Error& e) {
      throw ParseError(at, e.what());
    }
  }();

  while (pos < text.size()) {
    auto rec = split_tabs(next_line(at));
    if (rec.size() != 4 || rec[0] != "case") throw ParseError(at, "expected case record");
    const std::string id(rec[1]);
    if (id.empty() || bank.cases_.count(id)) throw ParseError(at, "empty or duplicate case id");
    BankCase c;
    c.visit_count = parse_count(rec[2], at);
    const std::size_t n = parse_count(rec[3], at);
    for (std::size_t i = 0; i < n; ++i) {
      auto f = split_tabs(next_line(at));
      if (f.size() != 8 || f[0] != "entry") throw ParseError(at, "expected entry record");
      if (f[1] != rec[1]) throw ParseError(at, "entry case id does not match enclosing case");
      BankEntry e;
      if (f[2] == "ground_truth")
        e.origin = EntryOrigin::ground_truth;
      else if (f[2] == "mined")
        e.origin = EntryOrigin::mined;
      else
        throw ParseError(at, "unknown origin '" + std::string(f[2]) + "'");
      e.box = {parse_double(f[3], at), parse_double(f[4], at), parse_double(f[5], at),
               parse_double(f[6], at)};
      if (!e.box.valid()) throw ParseError(at, "invalid box");
      if (f[7] != "-") {
        for (char ch : f[7]) {
          if (ch != '0' && ch != '1') throw ParseError(at, "hit history must be a 0/1 string");
          e.hit_history.push_back(ch == '1');
        }
      }
      if (e.origin == EntryOrigin::ground_truth && !e.hit_history.empty())
        throw ParseError(at, "ground-truth entry carries a hit history");
      if (e.origin == EntryOrigin::mined &&
          (e.hit_history.empty() || e.hit_history.size() > c.visit_count))
        throw ParseError(at, "hit history length inconsistent with visit count");
      c.entries.push_back(std::move(e));
    }
    bank.cases_.emplace(id, std::move(c));
  }
  return bank;
}

}  // namespace explora
