#include <doctest.h>

#include <filesystem>
#include <random>

#include "explora/error.hpp"
#include "explora/experiment.hpp"

using namespace explora;
using namespace explora::exp;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.world.train_cases = 8;
  c.world.validation_cases = 3;
  c.world.test_cases = 3;
  c.train.max_rounds = 200;
  c.train.eval_interval = 100;
  c.epsilons = {1, 2};
  c.seeds = {1, 2};
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("explora_test_" + name);
  fs::remove_all(p);
  return p;
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

}  // namespace

TEST_CASE("config json round-trips and rejects unknown keys") {
  ExperimentConfig c = tiny();
  c.strategy = sim::Strategy::ignoring;
  c.train.tau = 0.8;
  c.stop_mode = sim::StopMode::mined_surge;
  const auto back = config_from_json(config_to_json(c));
  CHECK(back == c);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(tiny()) != config_hash(c));

  CHECK(code_of([] { config_from_json(R"({"tua": 0.9})"); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { config_from_json(R"({"tau": "high"})"); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { config_from_json(R"({"seeds": []})"); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { config_from_json("not json"); }) == ErrorCode::parse);
  try {
    config_from_json(R"({"tua": 0.9})");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("tua") != std::string::npos);
  }
  CHECK(config_from_json("{}") == ExperimentConfig{});
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("a saved world loads back equal, and tampering is caught") {
  const auto c = tiny();
  const auto w = sim::generate_world(c.world, 3);
  const fs::path dir = scratch("world");
  save_world(w, dir);
  CHECK(load_world(dir) == w);
  for (const char* f : {"world.json", "annotations.jsonl", "latent.jsonl", "manifest.json"})
    CHECK(fs::exists(dir / f));

  std::string ann = read_file(dir / "annotations.jsonl");
  ann += "\n";
  write_file(dir / "annotations.jsonl", ann);
  CHECK(code_of([&] { load_world(dir); }) == ErrorCode::state);
  fs::remove_all(dir);
}

TEST_CASE("truth evaluated against itself is perfect, nothing scores zero") {
  const auto w = sim::generate_world(tiny().world, 5);
  const auto truth = parse_latent(latent_jsonl(w));
  std::vector<tracking::Track3D> preds;
  for (const auto& t : truth)
    if (t.split == sim::Split::test)
      for (auto tr : t.lesions) preds.push_back(tr);
  REQUIRE_FALSE(preds.empty());
  const auto round_trip = parse_predictions(tracks_jsonl(preds), tracking::LinkConfig{});
  const auto r = evaluate_predictions(round_trip, truth, sim::Split::test);
  for (double s : r.sensitivity) CHECK(s == doctest::Approx(1.0));
  CHECK(r.ap == doctest::Approx(1.0));

  const auto none = evaluate_predictions({}, truth, sim::Split::test);
  for (double s : none.sensitivity) CHECK(s == 0.0);

  std::vector<tracking::Track3D> stray{preds.front()};
  stray.front().case_id = "nowhere";
  CHECK(code_of([&] { evaluate_predictions(stray, truth, sim::Split::test); }) == ErrorCode::not_found);
}

TEST_CASE("per-slice detections are linked into tracks") {
  const std::string det =
      R"({"case_id":"c","slice":0,"box":[0.1,0.1,0.3,0.3],"score":0.9})"
      "\n"
      R"({"case_id":"c","slice":1,"box":[0.1,0.1,0.3,0.3],"score":0.7})"
      "\n";
  const auto tracks = parse_predictions(det, tracking::LinkConfig{});
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].z_start == 0);
  CHECK(tracks[0].z_end == 1);
  CHECK(code_of([] { parse_predictions("{\"case_id\":", tracking::LinkConfig{}); }) == ErrorCode::parse);
}

TEST_CASE("runs are byte-deterministic, manifests verify and report aggregates") {
  const auto c = tiny();
  const auto w = sim::generate_world(c.world, c.world_seed);
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  const auto rows = run_experiment(c, w, a);
  run_experiment(c, w, b);
  CHECK(rows.size() == c.seeds.size() * c.epsilons.size());
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK_MESSAGE(read_file(entry.path()) == read_file(b / rel), rel.string());
  }
  CHECK_NOTHROW(verify_manifest(a));

  const std::string rep = report({a});
  CHECK(rep.rfind("strategy,epsilon,runs,", 0) == 0);
  CHECK(rep.find("adding,1,2,") != std::string::npos);
  CHECK(rep.find("adding,2,2,") != std::string::npos);

  // bank tooling on the produced snapshot
  const auto bank = PredictionBank::deserialize(read_file(a / "seed_1" / "bank.snapshot"));
  const std::string stats = bank_stats(bank);
  CHECK(stats.find("cases,") == 0);
  std::size_t inspected = 0;
  const std::string ins = bank_inspect(bank);
  for (char ch : ins) inspected += ch == '\n';
  std::size_t entries = 0;
  for (const auto& [id, cs] : bank.cases()) entries += cs.entries.size();
  CHECK(inspected == entries + 1);
  std::size_t selected = 0;
  for (char ch : bank_select_jsonl(bank, 1)) selected += ch == '\n';
  std::size_t want = 0;
  for (const auto& [id, boxes] : bank.select(1)) want += boxes.size();
  CHECK(selected == want);

  std::string snap = read_file(a / "seed_2" / "bank.snapshot");
  snap.back() = snap.back() == '\n' ? ' ' : '\n';
  write_file(a / "seed_2" / "bank.snapshot", snap);
  CHECK(code_of([&] { verify_manifest(a); }) == ErrorCode::state);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("every arm runs end to end") {
  for (auto s : {sim::Strategy::baseline, sim::Strategy::exploratory, sim::Strategy::ignoring,
                 sim::Strategy::recalibration, sim::Strategy::multistage, sim::Strategy::scar,
                 sim::Strategy::sampling}) {
    ExperimentConfig c = tiny();
    c.strategy = s;
    c.seeds = {1};
    c.train.max_rounds = 100;
    c.train.multistage_stages = 1;
    const auto w = sim::generate_world(c.world, 2);
    const fs::path dir = scratch("arm");
    const auto rows = run_experiment(c, w, dir);
    CHECK_FALSE(rows.empty());
    CHECK(rows.front().strategy == sim::to_string(s));
    CHECK_NOTHROW(verify_manifest(dir));
    fs::remove_all(dir);
  }
}
