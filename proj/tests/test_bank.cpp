#include <doctest.h>

#include <random>

#include "explora/bank.hpp"
#include "explora/error.hpp"
#include "oracles.hpp"

using namespace explora;

namespace {

bool same_case(const BankCase& got, const oracle::Case& want) {
  if (got.visit_count != want.visits || got.entries.size() != want.entries.size()) return false;
  for (std::size_t i = 0; i < got.entries.size(); ++i) {
    const auto& g = got.entries[i];
    const auto& w = want.entries[i];
    if ((g.origin == EntryOrigin::ground_truth) != w.gt || g.hit_history != w.hits) return false;
    if (std::abs(g.box.x_min - w.box.x_min) > 1e-12 || std::abs(g.box.x_max - w.box.x_max) > 1e-12 ||
        std::abs(g.box.y_min - w.box.y_min) > 1e-12 || std::abs(g.box.y_max - w.box.y_max) > 1e-12)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("bank agrees with the straight-line replay") {
  std::mt19937_64 rng(21);
  const BankConfig cfg;
  for (int trial = 0; trial < 300; ++trial) {
    const auto sc = oracle::random_bank_scenario(rng, 10, 20);
    PredictionBank bank(cfg);
    bank.init_case("c", sc.annotations);
    oracle::Case ref;
    for (const auto& a : sc.annotations) ref.entries.push_back({a, {}, true});
    for (const auto& v : sc.visits) {
      bank.update("c", v, sc.annotations);
      oracle::bank_update(ref, v, sc.annotations, cfg.record_threshold, cfg.match_iou, cfg.gt_nms_iou);
    }
    REQUIRE(same_case(bank.at("c"), ref));
  }
}

TEST_CASE("a box seen every visit accumulates one hit per visit") {
  PredictionBank bank;
  bank.init_case("a", {});
  const std::vector<ScoredBox> p{{{0.1, 0.1, 0.3, 0.3}, 0.95, 0}};
  for (int i = 0; i < 5; ++i) bank.update("a", p, {});
  const auto& c = bank.at("a");
  REQUIRE(c.entries.size() == 1);
  CHECK(c.entries[0].match_count() == 5);
  CHECK(c.visit_count == 5);
  CHECK(bank.mined_count_latest() == 1);
  bank.update("a", {}, {});
  CHECK(bank.at("a").entries[0].hit_history == std::vector<bool>{true, true, true, true, true, false});
  CHECK(bank.mined_count_latest() == 0);
  CHECK(bank.mined_total() == 1);
}

TEST_CASE("low scores and annotated objects are never recorded") {
  PredictionBank bank;
  const std::vector<Box2D> gt{{0.5, 0.5, 0.7, 0.7}};
  bank.init_case("a", gt);
  const std::vector<ScoredBox> p{{{0.5, 0.5, 0.7, 0.7}, 0.99, 0}, {{0.1, 0.1, 0.2, 0.2}, 0.5, 0}};
  const auto r = bank.update("a", p, gt);
  CHECK(r.gt_suppressed == 1);
  CHECK(r.below_threshold == 1);
  CHECK(bank.mined_total() == 0);
  CHECK(bank.at("a").entries.size() == 1);
}

TEST_CASE("matched boxes follow the running mean") {
  PredictionBank bank;
  bank.init_case("a", {});
  bank.update("a", std::vector<ScoredBox>{{{0.10, 0.10, 0.30, 0.30}, 0.9, 0}}, {});
  bank.update("a", std::vector<ScoredBox>{{{0.12, 0.10, 0.32, 0.30}, 0.9, 0}}, {});
  bank.update("a", std::vector<ScoredBox>{{{0.14, 0.10, 0.34, 0.30}, 0.9, 0}}, {});
  const Box2D b = bank.at("a").entries[0].box;
  CHECK(b.x_min == doctest::Approx(0.12));
  CHECK(b.x_max == doctest::Approx(0.32));
}

TEST_CASE("select keeps mined entries with enough hits") {
  PredictionBank bank;
  bank.init_case("a", std::vector<Box2D>{{0.6, 0.6, 0.8, 0.8}});
  bank.init_case("b", {});
  const std::vector<ScoredBox> steady{{{0.1, 0.1, 0.3, 0.3}, 0.9, 0}};
  for (int i = 0; i < 3; ++i) bank.update("a", steady, {});
  bank.update("b", steady, {});
  auto sel = bank.select(3);
  REQUIRE(sel.size() == 1);
  CHECK(sel.at("a").size() == 1);
  CHECK(bank.select(1).size() == 2);
  CHECK_THROWS_AS(bank.select(0), Error);
}

TEST_CASE("unknown and malformed case ids are rejected") {
  PredictionBank bank;
  CHECK_THROWS_AS(bank.update("nope", {}, {}), Error);
  CHECK_THROWS_AS(bank.init_case("", {}), Error);
  CHECK_THROWS_AS(bank.init_case("a b", {}), Error);
  bank.init_case("a", {});
  CHECK_THROWS_AS(bank.init_case("a", {}), Error);
  CHECK_THROWS_AS(PredictionBank(BankConfig{1.5, 0.7, 0.7}), Error);
}

TEST_CASE("snapshots round-trip byte for byte") {
  std::mt19937_64 rng(8);
  PredictionBank bank;
  for (int k = 0; k < 20; ++k) {
    const auto sc = oracle::random_bank_scenario(rng, 8, 12);
    const std::string id = "case" + std::to_string(k) + "/z0" + std::to_string(k % 8);
    bank.init_case(id, sc.annotations);
    for (const auto& v : sc.visits) bank.update(id, v, sc.annotations);
  }
  const std::string text = bank.serialize();
  const PredictionBank back = PredictionBank::deserialize(text);
  CHECK(back.serialize() == text);
  CHECK(back.mined_total() == bank.mined_total());
  CHECK(back.mined_count_latest() == bank.mined_count_latest());
  CHECK(back.select(2).size() == bank.select(2).size());
}

TEST_CASE("truncated or corrupt snapshots report the offending byte") {
  PredictionBank bank;
  bank.init_case("a", std::vector<Box2D>{{0.6, 0.6, 0.8, 0.8}});
  bank.update("a", std::vector<ScoredBox>{{{0.1, 0.1, 0.3, 0.3}, 0.9, 0}}, {});
  const std::string text = bank.serialize();

  const std::string cut = text.substr(0, text.size() - 5);
  try {
    (void)PredictionBank::deserialize(cut);
    FAIL("truncated snapshot accepted");
  } catch (const ParseError& e) {
    CHECK(e.offset() == cut.rfind('\n') + 1);
    CHECK(e.code() == ErrorCode::parse);
  }

  std::string bad = text;
  bad.replace(bad.rfind("\t1\n"), 3, "\t2\n");
  CHECK_THROWS_AS(PredictionBank::deserialize(bad), ParseError);
  CHECK_THROWS_AS(PredictionBank::deserialize("not a snapshot\n"), ParseError);
  CHECK_THROWS_AS(PredictionBank::deserialize(""), ParseError);
}
