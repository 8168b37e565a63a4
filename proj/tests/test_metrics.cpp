#include <doctest.h>

#include <random>

#include "explora/error.hpp"
#include "explora/metrics.hpp"
#include "oracles.hpp"

using namespace explora;
using namespace explora::metrics;

namespace {

Track3D track(const Box2D& b, int z0, int z1, double score = 1.0) {
  Track3D t;
  t.case_id = "c";
  t.z_start = z0;
  t.z_end = z1;
  t.boxes.assign(static_cast<std::size_t>(z1 - z0 + 1), b);
  t.score = score;
  return t;
}

const Box2D X{0.1, 0.1, 0.3, 0.3};
const Box2D Y{0.6, 0.6, 0.8, 0.8};
const Box2D FAR{0.4, 0.85, 0.5, 0.95};

}  // namespace

TEST_CASE("volumetric iou by hand") {
  CHECK(volumetric_iou(track(X, 0, 3), track(X, 0, 3)) == doctest::Approx(1.0));
  // same box, half the slices shared
  CHECK(volumetric_iou(track(X, 0, 3), track(X, 2, 5)) == doctest::Approx(2.0 / 6.0));
  CHECK(volumetric_iou(track(X, 0, 1), track(Y, 0, 1)) == 0.0);
  CHECK(volumetric_iou(track(X, 0, 1), track(X, 5, 6)) == 0.0);
  Track3D broken = track(X, 0, 3);
  broken.boxes.pop_back();
  CHECK_THROWS_AS(volumetric_iou(broken, track(X, 0, 3)), Error);
}

TEST_CASE("hand-computed FROC and AP") {
  // case A: TP .9, FP .8, TP .5; case B: FP .7, TP .6, duplicate .4
  const std::vector<Track3D> gt_a{track(X, 0, 1), track(Y, 0, 1)};
  const std::vector<Track3D> gt_b{track(X, 2, 4)};
  const std::vector<Track3D> pa{track(X, 0, 1, 0.9), track(FAR, 0, 1, 0.8), track(Y, 0, 1, 0.5)};
  const std::vector<Track3D> pb{track(FAR, 0, 0, 0.7), track(X, 2, 4, 0.6), track(X, 2, 4, 0.4)};
  const std::vector<MatchLedger> ledgers{match_3d("a", pa, gt_a), match_3d("b", pb, gt_b)};
  CHECK(ledgers[1].records[2].kind == MatchKind::duplicate);

  const EvalResult r = froc(ledgers);
  const double third = 1.0 / 3.0;
  const std::array<double, 7> want{third, third, third, 1, 1, 1, 1};
  for (std::size_t k = 0; k < 7; ++k) CHECK(r.sensitivity[k] == doctest::Approx(want[k]));
  CHECK(r.average_sensitivity == doctest::Approx(5.0 / 7.0));
  CHECK(r.ap == doctest::Approx(2.2 / 3.0));
  CHECK(r.ground_truth == 3);
  CHECK(r.cases == 2);
  CHECK(csv_row(r) == "33.33,33.33,33.33,100.00,100.00,100.00,100.00,71.43,73.33");
}

TEST_CASE("perfect predictions score one everywhere, empty ones zero") {
  const std::vector<Track3D> gt{track(X, 0, 1), track(Y, 3, 4)};
  const EvalResult perfect = froc(std::vector<MatchLedger>{match_3d("a", gt, gt)});
  for (double s : perfect.sensitivity) CHECK(s == 1.0);
  CHECK(perfect.ap == doctest::Approx(1.0));
  const EvalResult none = froc(std::vector<MatchLedger>{match_3d("a", {}, gt)});
  for (double s : none.sensitivity) CHECK(s == 0.0);
  CHECK(none.ap == 0.0);
  CHECK_THROWS_AS(froc({}), Error);
}

TEST_CASE("tied scores share one operating point") {
  const std::vector<Track3D> gt{track(X, 0, 1)};
  // FP and TP at the same score: the TP is not counted before its FP
  const std::vector<Track3D> p{track(FAR, 0, 1, 0.5), track(X, 0, 1, 0.5)};
  const EvalResult r = froc(std::vector<MatchLedger>{match_3d("a", p, gt)});
  CHECK(r.sensitivity[0] == 0.0);
  CHECK(r.sensitivity[3] == 1.0);
  CHECK(r.ap == doctest::Approx(0.5));
}

TEST_CASE("a lower-scored duplicate never lowers sensitivity") {
  const std::vector<Track3D> gt{track(X, 0, 1), track(Y, 0, 1)};
  std::vector<Track3D> p{track(X, 0, 1, 0.9), track(FAR, 0, 1, 0.7), track(Y, 0, 1, 0.6)};
  const EvalResult before = froc(std::vector<MatchLedger>{match_3d("a", p, gt)});
  p.push_back(track(X, 0, 1, 0.65));
  const EvalResult after = froc(std::vector<MatchLedger>{match_3d("a", p, gt)});
  for (std::size_t k = 0; k < 7; ++k) CHECK(after.sensitivity[k] >= before.sensitivity[k]);
}

TEST_CASE("match_3d follows the logged greedy contract") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(0, 6), z(0, 5), len(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Track3D> gts, preds;
    const int ng = count(rng), np = count(rng);
    for (int i = 0; i < ng; ++i) {
      const int z0 = z(rng);
      gts.push_back(track(oracle::random_box(rng, 0.1, 0.3), z0, z0 + len(rng)));
    }
    for (int i = 0; i < np; ++i) {
      if (ng > 0 && u(rng) < 0.7) {
        Track3D t = gts[static_cast<std::size_t>(i % ng)];
        t.z_end += len(rng) % 2;
        t.boxes.resize(static_cast<std::size_t>(t.z_end - t.z_start + 1), t.boxes.front());
        for (auto& b : t.boxes) b.x_max += 0.05 * u(rng);
        t.score = std::round(u(rng) * 4) / 4;
        preds.push_back(t);
      } else {
        const int z0 = z(rng);
        preds.push_back(track(oracle::random_box(rng), z0, z0 + len(rng), u(rng)));
      }
    }
    const auto ledger = match_3d("c", preds, gts, 0.3);
    const auto want = oracle::match_3d(preds, gts, 0.3);
    REQUIRE(ledger.records.size() == want.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(ledger.records[i].prediction == want[i].prediction);
      CHECK(static_cast<int>(ledger.records[i].kind) == want[i].kind);
      CHECK(ledger.records[i].ground_truth == want[i].gt);
      tp += want[i].kind == 0;
    }
    // greedy never exceeds the best possible one-to-one matching
    std::vector<std::vector<char>> ok(preds.size(), std::vector<char>(gts.size(), 0));
    for (std::size_t p = 0; p < preds.size(); ++p)
      for (std::size_t g = 0; g < gts.size(); ++g) ok[p][g] = oracle::volumetric_iou(preds[p], gts[g]) >= 0.3;
    std::vector<char> used(gts.size(), 0);
    CHECK(tp <= oracle::max_matching(ok, 0, used));
  }
}

TEST_CASE("csv header lists the seven operating points") {
  CHECK(csv_header() == "fp0.125,fp0.25,fp0.5,fp1,fp2,fp4,fp8,avg,ap");
}
