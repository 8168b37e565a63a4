#include <doctest.h>

#include <cmath>
#include <random>

#include "explora/error.hpp"
#include "explora/train.hpp"
#include "explora/world.hpp"
#include "fd.hpp"

using namespace explora;
using namespace explora::sim;

namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.train_cases = 12;
  c.validation_cases = 4;
  c.test_cases = 4;
  return c;
}

TrainConfig short_training() {
  TrainConfig t;
  t.max_rounds = 300;
  t.eval_interval = 100;
  return t;
}

}  // namespace

TEST_CASE("detector score is the sigmoid of its logit") {
  Rng rng(1);
  const auto m = DetectorParams::random(3, 4, rng, -2.0);
  CHECK(m.values.size() == DetectorParams::parameter_count(3, 4));
  CHECK(m.values.back() == -2.0);
  const std::vector<double> x{0.3, -0.2, 1.0};
  CHECK(m.score(x) == doctest::Approx(1.0 / (1.0 + std::exp(-m.logit(x)))));
  // hidden biases start at zero, so the zero input only sees the output bias
  CHECK(m.logit(std::vector<double>{0, 0, 0}) == doctest::Approx(-2.0));
}

TEST_CASE("ema update: momentum 1 keeps the teacher, 0 copies the student") {
  Rng rng(2);
  const auto t = DetectorParams::random(3, 4, rng);
  const auto s = DetectorParams::random(3, 4, rng);
  CHECK(ema_update(t, s, 1.0) == t);
  CHECK(ema_update(t, s, 0.0) == s);
  const auto half = ema_update(t, s, 0.5);
  for (std::size_t k = 0; k < t.values.size(); ++k)
    CHECK(half.values[k] == doctest::Approx(0.5 * (t.values[k] + s.values[k])));
  CHECK_THROWS_AS(ema_update(t, DetectorParams::random(2, 4, rng), 0.5), Error);
  CHECK_THROWS_AS(ema_update(t, s, 1.5), Error);
}

TEST_CASE("ema toward a fixed student closes the gap geometrically") {
  Rng rng(3);
  auto t = DetectorParams::random(2, 3, rng);
  const auto s = DetectorParams::random(2, 3, rng);
  const double gap0 = t.values[0] - s.values[0];
  for (int i = 0; i < 1000; ++i) t = ema_update(t, s, 0.999);
  CHECK(t.values[0] - s.values[0] == doctest::Approx(gap0 * std::pow(0.999, 1000)).epsilon(1e-9));
}

TEST_CASE("teacher stays inside the student's parameter range") {
  Rng rng(4);
  auto t = DetectorParams::random(2, 3, rng);
  std::vector<double> lo = t.values, hi = t.values;
  for (int i = 0; i < 200; ++i) {
    const auto s = DetectorParams::random(2, 3, rng);
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      lo[k] = std::min(lo[k], s.values[k]);
      hi[k] = std::max(hi[k], s.values[k]);
    }
    t = ema_update(t, s, 0.9);
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      CHECK(t.values[k] >= lo[k] - 1e-12);
      CHECK(t.values[k] <= hi[k] + 1e-12);
    }
  }
}

TEST_CASE("detector gradient matches central differences") {
  Rng rng(5);
  const auto m = DetectorParams::random(4, 6, rng, 0.3);
  std::vector<risk::Sample> b;
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 8; ++i) b.push_back({{n(rng), n(rng), n(rng), n(rng)}, risk::LabelStatus::unlabeled, i % 2 ? 1 : -1});
  const auto obj = risk::pn_objective(b, risk::RiskConfig{});
  CHECK(fd::relative_error(fd::analytic(obj, m, b), fd::central(obj, m, b)) < 1e-6);
}

TEST_CASE("world generation is deterministic and validated") {
  const auto a = generate_world(small_world(), 7);
  const auto b = generate_world(small_world(), 7);
  CHECK(a == b);
  CHECK_FALSE(a == generate_world(small_world(), 8));
  WorldConfig bad = small_world();
  bad.label_rate = 1.5;
  try {
    generate_world(bad, 1);
    FAIL("accepted q > 1");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("label_rate") != std::string::npos);
  }
}

TEST_CASE("every lesion spans a slice and sits in the unit square") {
  const auto w = generate_world(WorldConfig{}, 3);
  for (const auto& s : w.studies)
    for (const auto& l : s.lesions) {
      CHECK(l.z_lo <= l.z_hi);
      CHECK(l.z_lo >= 0);
      CHECK(l.z_hi < s.slice_count);
      CHECK(l.box.valid());
      CHECK(l.box.x_min >= 0.0);
      CHECK(l.box.y_max <= 1.0);
      if (s.split != Split::train) CHECK(l.observed);
    }
}

TEST_CASE("q = 1 labels everything") {
  WorldConfig c = small_world();
  c.label_rate = 1.0;
  for (const auto& s : generate_world(c, 2).studies)
    for (const auto& l : s.lesions) CHECK(l.observed);
}

TEST_CASE("SCAR labeling hits q within the binomial 99% interval") {
  WorldConfig c;
  c.label_bias = LabelBias::scar;
  c.train_cases = 420;
  c.validation_cases = 1;
  c.test_cases = 1;
  const auto w = generate_world(c, 11);
  std::size_t n = 0, k = 0;
  for (std::size_t i : w.split_indices(Split::train))
    for (const auto& l : w.studies[i].lesions) {
      ++n;
      k += l.observed;
    }
  REQUIRE(n >= 1000);
  const double sd = std::sqrt(n * 0.25);
  CHECK(std::abs(static_cast<double>(k) - 0.5 * n) <= 2.576 * sd);
}

TEST_CASE("size-biased labeling keeps the mean rate but starves hard lesions") {
  WorldConfig c;
  c.train_cases = 600;
  c.validation_cases = 1;
  c.test_cases = 1;
  const auto w = generate_world(c, 12);
  double n[2] = {0, 0}, k[2] = {0, 0};
  for (std::size_t i : w.split_indices(Split::train))
    for (const auto& l : w.studies[i].lesions) {
      const int h = l.mode == LesionMode::hard;
      n[h] += 1;
      k[h] += l.observed;
    }
  const double overall = (k[0] + k[1]) / (n[0] + n[1]);
  CHECK(overall == doctest::Approx(c.label_rate).epsilon(0.1));
  CHECK(k[1] / n[1] == doctest::Approx(std::pow(c.label_rate, c.bias_exponent)).epsilon(0.1));
  CHECK(k[1] / n[1] < k[0] / n[0]);
}

TEST_CASE("propose returns the anchor grid plus jittered lesion copies") {
  const auto w = generate_world(small_world(), 5);
  Rng rng(1);
  for (std::size_t i = 0; i < w.studies.size(); ++i)
    for (int z = 0; z < w.studies[i].slice_count; ++z) {
      std::size_t present = 0;
      for (const auto& l : w.studies[i].lesions) present += l.spans(z);
      const auto cs = propose(w, i, z, rng);
      const auto g = static_cast<std::size_t>(w.config.anchor_grid);
      CHECK(cs.size() == g * g + present * static_cast<std::size_t>(w.config.jitter_copies));
      for (const auto& c : cs) CHECK(c.features.size() == w.feature_width());
    }
  CHECK_THROWS_AS(propose(w, 0, -1, rng), Error);
  CHECK_THROWS_AS(propose(w, 0, w.config.slices, rng), Error);
}

TEST_CASE("a candidate on a lesion carries its appearance") {
  WorldConfig c = small_world();
  c.observation_noise = 0.0;
  c.jitter_magnitude = 0.0;
  const auto w = generate_world(c, 6);
  Rng rng(2);
  bool seen = false;
  for (std::size_t i = 0; i < w.studies.size() && !seen; ++i)
    for (const auto& l : w.studies[i].lesions) {
      for (const auto& cand : propose(w, i, l.z_lo, rng)) {
        if (cand.anchor || !(cand.box == l.box)) continue;
        for (int k = 0; k < c.feature_dim; ++k) CHECK(cand.features[static_cast<std::size_t>(k)] == doctest::Approx(l.appearance[static_cast<std::size_t>(k)]));
        seen = true;
      }
      if (seen) break;
    }
  CHECK(seen);
}

TEST_CASE("boundary slices have zero context on the missing side") {
  const auto w = generate_world(small_world(), 9);
  Rng rng(3);
  const auto d = static_cast<std::size_t>(w.config.feature_dim);
  const auto cd = static_cast<std::size_t>(w.config.context_dim);
  for (const auto& cand : propose(w, 0, 0, rng))
    for (std::size_t k = 0; k < cd; ++k) CHECK(cand.features[d + k] == 0.0);
  for (const auto& cand : propose(w, 0, w.config.slices - 1, rng))
    for (std::size_t k = 0; k < cd; ++k) CHECK(cand.features[d + cd + k] == 0.0);
}

TEST_CASE("slice dropout probabilities") {
  Rng rng(4);
  std::vector<double> f{1, 1, 2, 2, 3, 3};
  auto g = f;
  CHECK_FALSE(slice_dropout(g, 2, 2, 0.0, rng));
  CHECK(g == f);
  for (int i = 0; i < 20; ++i) {
    g = f;
    CHECK(slice_dropout(g, 2, 2, 1.0, rng));
    const bool left = g[2] == 0 && g[3] == 0 && g[4] == 3;
    const bool right = g[4] == 0 && g[5] == 0 && g[2] == 2;
    CHECK((left || right));
    CHECK(g[0] == 1);
  }
  int dropped = 0;
  for (int i = 0; i < 10000; ++i) {
    g = f;
    dropped += slice_dropout(g, 2, 2, 0.5, rng);
  }
  CHECK(dropped == doctest::Approx(5000).epsilon(0.04));
  CHECK_THROWS_AS(slice_dropout(g, 2, 2, 1.5, rng), Error);
}

TEST_CASE("stopping round") {
  DynamicsLog mono;
  for (std::size_t r = 1; r <= 5; ++r) mono.rows.push_back({r * 50, r, r, 0.1 * r, 0.0});
  CHECK(stopping_round(mono, StopMode::validation_ap) == 250);

  DynamicsLog peak;
  const double ap[] = {0.2, 0.4, 0.6, 0.5, 0.45};
  for (std::size_t r = 0; r < 5; ++r) peak.rows.push_back({(r + 1) * 50, 0, 0, ap[r], 0.0});
  CHECK(stopping_round(peak, StopMode::validation_ap) == 150);

  DynamicsLog flat;
  for (std::size_t r = 1; r <= 10; ++r) flat.rows.push_back({r * 10, 40, 20, 0.5, 0.0});
  CHECK(stopping_round(flat, StopMode::mined_surge) == 100);

  DynamicsLog surge = flat;
  surge.rows[8].mined_total = 70;
  CHECK(stopping_round(surge, StopMode::mined_surge) == 90);

  CHECK_THROWS_AS(stopping_round(DynamicsLog{}, StopMode::validation_ap), Error);
}

TEST_CASE("training config validation names the field") {
  TrainConfig t;
  t.ema_momentum = 1.5;
  try {
    validate(t);
    FAIL("accepted momentum > 1");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("ema_momentum") != std::string::npos);
  }
  CHECK(strategy_from_string(to_string(Strategy::multistage)) == Strategy::multistage);
  CHECK_THROWS_AS(strategy_from_string("bogus"), Error);
}

TEST_CASE("exploratory training is deterministic and logs every interval") {
  const auto w = generate_world(small_world(), 4);
  const auto a = run_exploratory(w, short_training());
  const auto b = run_exploratory(w, short_training());
  CHECK(a.teacher == b.teacher);
  CHECK(a.bank.serialize() == b.bank.serialize());
  CHECK(a.log.to_csv() == b.log.to_csv());
  REQUIRE(a.log.rows.size() == 3);
  CHECK(a.log.rows.back().round == 300);
  CHECK(a.log.to_csv().rfind("round,mined_total,mined_latest,val_ap,loss\n", 0) == 0);
  // every training image was registered with the bank
  std::size_t images = 0;
  for (std::size_t i : w.split_indices(Split::train)) images += static_cast<std::size_t>(w.studies[i].slice_count);
  CHECK(a.bank.cases().size() == images);
}

TEST_CASE("retraining on an empty selection equals the baseline") {
  const auto w = generate_world(small_world(), 4);
  const auto base = train(w, short_training(), TrainingPlan{Strategy::baseline, nullptr, nullptr, false});
  const auto re = run_retrain(w, short_training(), {}, risk::RetrainMode::adding);
  CHECK(base.teacher == re.teacher);
}

TEST_CASE("mined entries never duplicate an annotation") {
  WorldConfig c = small_world();
  c.label_rate = 1.0;
  const auto w = generate_world(c, 5);
  const auto out = run_exploratory(w, short_training());
  for (const auto& [key, bc] : out.bank.cases()) {
    std::vector<Box2D> gt;
    for (const auto& e : bc.entries)
      if (e.origin == EntryOrigin::ground_truth) gt.push_back(e.box);
    for (const auto& e : bc.entries) {
      if (e.origin != EntryOrigin::mined) continue;
      // every observation passed GT NMS, so no entry can coincide with a label
      for (const auto& g : gt) CHECK(iou(e.box, g) < 0.99);
    }
  }
}

TEST_CASE("divergence is reported with the round") {
  // features overflow to infinity, so the very first loss is not finite
  WorldConfig c = small_world();
  c.background_spread = 1e308;
  c.observation_noise = 1e308;
  const auto w = generate_world(c, 4);
  const TrainConfig t = short_training();
  try {
    run_exploratory(w, t);
    FAIL("no divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::divergence);
    CHECK(std::string(e.what()).find("round") != std::string::npos);
  }
}
