#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "explora/explora.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  explora_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny = R"({"train_cases": 6, "validation_cases": 2, "test_cases": 2, "max_rounds": 100,
                        "eval_interval": 50, "epsilons": [1], "seeds": [1]})";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("explora_capi_" + name);
  fs::remove_all(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(EXPLORA_BIN) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string capture(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "explora_cli_stdout";
  const std::string cmd = std::string(EXPLORA_BIN) + " " + args + " >" + out.string() + " 2>/dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  return slurp(out);
}

}  // namespace

TEST_CASE("c api: config resolution and errors") {
  char* cfg = nullptr;
  REQUIRE(explora_config_resolve(nullptr, &cfg) == EXPLORA_OK);
  const std::string defaults = take(cfg);
  CHECK(defaults.find("\"tau\"") != std::string::npos);
  REQUIRE(explora_config_resolve(R"({"tau": 0.8})", &cfg) == EXPLORA_OK);
  const std::string patched = take(cfg);
  char* h1 = nullptr;
  char* h2 = nullptr;
  REQUIRE(explora_config_hash(defaults.c_str(), &h1) == EXPLORA_OK);
  REQUIRE(explora_config_hash(patched.c_str(), &h2) == EXPLORA_OK);
  CHECK(take(h1) != take(h2));

  CHECK(explora_config_resolve(R"({"nope": 1})", &cfg) == EXPLORA_INVALID_ARGUMENT);
  CHECK(std::string(explora_last_error()).find("nope") != std::string::npos);
  CHECK(explora_config_resolve("{", &cfg) == EXPLORA_PARSE);
  CHECK(explora_config_resolve(nullptr, nullptr) == EXPLORA_INVALID_ARGUMENT);
  CHECK(explora_bank_load("/nonexistent/snapshot", nullptr) == EXPLORA_INVALID_ARGUMENT);
  explora_bank* b = nullptr;
  CHECK(explora_bank_load("/nonexistent/snapshot", &b) == EXPLORA_IO);
  CHECK(b == nullptr);
  CHECK(explora_bank_parse("garbage", 7, &b) == EXPLORA_PARSE);
}

TEST_CASE("c api: world, run, bank and eval round trip") {
  const fs::path wdir = scratch("world"), rdir = scratch("run");
  explora_world* w = nullptr;
  REQUIRE(explora_world_generate(kTiny, &w) == EXPLORA_OK);
  REQUIRE(explora_world_save(w, wdir.c_str()) == EXPLORA_OK);
  explora_world* loaded = nullptr;
  REQUIRE(explora_world_load(wdir.c_str(), &loaded) == EXPLORA_OK);
  CHECK(explora_world_equal(w, loaded) == 1);
  char* summary = nullptr;
  REQUIRE(explora_world_summary(w, &summary) == EXPLORA_OK);
  CHECK(take(summary).find("train") != std::string::npos);

  char* csv = nullptr;
  REQUIRE(explora_run(kTiny, loaded, rdir.c_str(), &csv) == EXPLORA_OK);
  const std::string eval = take(csv);
  CHECK(eval == slurp(rdir / "eval.csv"));
  CHECK(explora_verify(rdir.c_str()) == EXPLORA_OK);

  explora_bank* bank = nullptr;
  const std::string snap_path = (rdir / "seed_1" / "bank.snapshot").string();
  REQUIRE(explora_bank_load(snap_path.c_str(), &bank) == EXPLORA_OK);
  char* bytes = nullptr;
  REQUIRE(explora_bank_serialize(bank, &bytes) == EXPLORA_OK);
  CHECK(take(bytes) == slurp(snap_path));
  size_t total = 0, latest = 0;
  REQUIRE(explora_bank_counts(bank, &total, &latest) == EXPLORA_OK);
  CHECK(latest <= total);
  explora_bank_free(bank);

  const std::string preds = (rdir / "seed_1" / "predictions_eps1.jsonl").string();
  const std::string latent = (wdir / "latent.jsonl").string();
  REQUIRE(explora_eval(preds.c_str(), latent.c_str(), "test", &csv) == EXPLORA_OK);
  CHECK(take(csv).rfind("fp0.125,", 0) == 0);
  CHECK(explora_eval(preds.c_str(), latent.c_str(), "validation", &csv) == EXPLORA_NOT_FOUND);
  CHECK(explora_eval(preds.c_str(), latent.c_str(), "elsewhere", &csv) == EXPLORA_INVALID_ARGUMENT);

  const char* dirs[] = {rdir.c_str()};
  REQUIRE(explora_report(dirs, 1, &csv) == EXPLORA_OK);
  CHECK(take(csv).find("adding,1,1,") != std::string::npos);

  explora_world_free(w);
  explora_world_free(loaded);
  fs::remove_all(wdir);
  fs::remove_all(rdir);
}

TEST_CASE("cli: gen, run, bank, eval and report") {
  const fs::path wdir = scratch("cli_world"), rdir = scratch("cli_run");
  const std::string tiny = "--train_cases 6 --validation_cases 2 --test_cases 2";
  CHECK(run("gen " + tiny + " --out " + wdir.string()) == 0);
  CHECK(fs::exists(wdir / "manifest.json"));
  CHECK(run("run --world " + wdir.string() + " --out " + rdir.string() +
            " --max_rounds 100 --eval_interval 50 --epsilons 1,2 --seeds 1") == 0);
  const std::string snap = (rdir / "seed_1" / "bank.snapshot").string();
  CHECK(capture("bank inspect " + snap).rfind("case_id\tentry\t", 0) == 0);
  CHECK(capture("bank stats " + snap).rfind("cases,", 0) == 0);
  CHECK(run("bank select " + snap + " --epsilon 1") == 0);
  CHECK(capture("eval --predictions " + (rdir / "seed_1" / "predictions_eps1.jsonl").string() + " --truth " +
                (wdir / "latent.jsonl").string())
            .rfind("fp0.125,", 0) == 0);
  const std::string rep = capture("report " + rdir.string());
  CHECK(rep.find("adding,2,1,") != std::string::npos);

  // failures map to the status codes
  CHECK(run("run --world /nonexistent") == EXPLORA_IO);
  CHECK(run("gen --tau 2 --out " + scratch("bad").string()) == EXPLORA_INVALID_ARGUMENT);
  CHECK(run("gen --tau abc") == EXPLORA_INVALID_ARGUMENT);
  CHECK(run("frobnicate") == EXPLORA_INVALID_ARGUMENT);
  CHECK(run("--help") == 0);
  fs::remove_all(wdir);
  fs::remove_all(rdir);
}
