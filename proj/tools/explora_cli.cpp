// explora — command-line front end over the C API.
//
//   explora gen    --out DIR [--config FILE] [--<key> VALUE ...]
//   explora run    --world DIR --out DIR [--config FILE] [--<key> VALUE ...]
//   explora bank   inspect|select|stats SNAPSHOT [--epsilon N] [--out FILE]
//   explora eval   --predictions FILE --truth LATENT [--split test] [--out FILE]
//   explora report DIR... [--out FILE]
//
// Exit status is 0 on success, otherwise the error category (see explora.h).
// EXPLORA_OUT_DIR, when set, replaces the output directory of gen and run.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "explora/explora.h"

namespace {

using nlohmann::json;

struct Failure {
  explora_status status;
  std::string message;
};

void check(explora_status s) {
  if (s != EXPLORA_OK) throw Failure{s, explora_last_error()};
}

// Owns a string returned by the library.
std::string take(char* p) {
  std::string s = p ? p : "";
  explora_string_free(p);
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{EXPLORA_IO, "cannot open " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size())))
    throw Failure{EXPLORA_IO, "cannot write " + out_path};
}

std::string out_dir_or_env(const std::string& flag) {
  if (const char* env = std::getenv("EXPLORA_OUT_DIR"); env && *env) return env;
  return flag;
}

// One --<key> option per configuration field, typed after the default value.
struct ConfigFlags {
  json defaults;
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App* cmd) {
    defaults = json::parse(take([] {
      char* s = nullptr;
      check(explora_config_resolve(nullptr, &s));
      return s;
    }()));
    cmd->add_option("--config", config_file, "JSON configuration file (flags override it)");
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
      // both --train-cases and --train_cases (the JSON key) are accepted
      std::string flag = "--" + it.key();
      for (char& ch : flag)
        if (ch == '_') ch = '-';
      if (it.key().find('_') != std::string::npos) flag += ",--" + it.key();
      std::string help = "default: " + (it->is_array() ? std::string("comma-separated list") : it->dump());
      cmd->add_option(flag, values[it.key()], help);
    }
  }

  std::string resolve() const {
    json patch = config_file.empty() ? json::object() : json::parse(slurp(config_file), nullptr, false);
    if (patch.is_discarded() || !patch.is_object()) throw Failure{EXPLORA_PARSE, config_file + ": not a JSON object"};
    for (const auto& [key, text] : values) {
      if (text.empty()) continue;
      const json& d = defaults.at(key);
      try {
        if (d.is_string()) {
          patch[key] = text;
        } else if (d.is_array()) {
          json arr = json::array();
          std::stringstream ss(text);
          for (std::string item; std::getline(ss, item, ',');) arr.push_back(std::stoull(item));
          patch[key] = arr;
        } else if (d.is_number_float()) {
          patch[key] = std::stod(text);
        } else if (d.is_number_unsigned()) {
          if (text.find('-') != std::string::npos) throw std::invalid_argument("negative");
          patch[key] = std::stoull(text);
        } else {
          patch[key] = std::stoll(text);
        }
      } catch (const std::exception&) {
        throw Failure{EXPLORA_INVALID_ARGUMENT, "--" + key + ": cannot parse '" + text + "'"};
      }
    }
    char* out = nullptr;
    check(explora_config_resolve(patch.dump().c_str(), &out));
    return take(out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"explora: exploratory pseudo-label mining on a synthetic lesion world"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(explora_version()));

  std::string out_flag = "out";
  std::string world_dir, predictions, truth, split = "test", out_file, snapshot;
  std::size_t epsilon = 20;
  std::vector<std::string> run_dirs;

  ConfigFlags gen_flags, run_flags;
  int rc = 0;
  try {
    auto* gen = app.add_subcommand("gen", "Generate a world: annotations, sealed latent truth, manifest");
    gen->add_option("--out", out_flag, "Output directory");
    gen_flags.attach(gen);

    auto* run = app.add_subcommand("run", "Exploratory training, selection and retraining for a comparison arm");
    run->add_option("--world", world_dir, "World directory written by gen")->required();
    run->add_option("--out", out_flag, "Output directory");
    run_flags.attach(run);

    auto* bank = app.add_subcommand("bank", "Inspect a bank snapshot");
    bank->require_subcommand(1);
    auto* inspect = bank->add_subcommand("inspect", "Every entry with its hit history");
    auto* select = bank->add_subcommand("select", "Mined boxes with at least epsilon hits, as JSONL labels");
    auto* stats = bank->add_subcommand("stats", "Hit-count and visit histograms");
    for (auto* sub : {inspect, select, stats}) {
      sub->add_option("snapshot", snapshot, "Snapshot file")->required();
      sub->add_option("--out", out_file, "Write to a file instead of stdout");
    }
    select->add_option("--epsilon", epsilon, "Minimum hit count");

    auto* eval = app.add_subcommand("eval", "FROC and AP of predictions against latent truth");
    eval->add_option("--predictions", predictions, "Predictions JSONL (tracks or per-slice detections)")->required();
    eval->add_option("--truth", truth, "latent.jsonl of the world")->required();
    eval->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "validation", "test"}));
    eval->add_option("--out", out_file, "Write to a file instead of stdout");

    auto* rep = app.add_subcommand("report", "Mean results over run directories");
    rep->add_option("dirs", run_dirs, "Run output directories")->required();
    rep->add_option("--out", out_file, "Write to a file instead of stdout");

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : EXPLORA_INVALID_ARGUMENT;
    }

    if (gen->parsed()) {
      const std::string dir = out_dir_or_env(out_flag);
      const std::string cfg = gen_flags.resolve();
      explora_world* w = nullptr;
      check(explora_world_generate(cfg.c_str(), &w));
      const explora_status s = explora_world_save(w, dir.c_str());
      char* summary = nullptr;
      if (s == EXPLORA_OK) explora_world_summary(w, &summary);
      explora_world_free(w);
      check(s);
      std::cout << take(summary);
    } else if (run->parsed()) {
      const std::string dir = out_dir_or_env(out_flag);
      const std::string cfg = run_flags.resolve();
      explora_world* w = nullptr;
      check(explora_world_load(world_dir.c_str(), &w));
      char* csv = nullptr;
      const explora_status s = explora_run(cfg.c_str(), w, dir.c_str(), &csv);
      explora_world_free(w);
      check(s);
      std::cout << take(csv);
    } else if (bank->parsed()) {
      explora_bank* b = nullptr;
      check(explora_bank_load(snapshot.c_str(), &b));
      char* text = nullptr;
      explora_status s;
      if (inspect->parsed())
        s = explora_bank_inspect(b, &text);
      else if (select->parsed())
        s = explora_bank_select(b, epsilon, &text);
      else
        s = explora_bank_stats(b, &text);
      explora_bank_free(b);
      check(s);
      emit(take(text), out_file);
    } else if (eval->parsed()) {
      char* csv = nullptr;
      check(explora_eval(predictions.c_str(), truth.c_str(), split.c_str(), &csv));
      emit(take(csv), out_file);
    } else if (rep->parsed()) {
      std::vector<const char*> ptrs;
      for (const auto& d : run_dirs) ptrs.push_back(d.c_str());
      char* csv = nullptr;
      check(explora_report(ptrs.data(), ptrs.size(), &csv));
      emit(take(csv), out_file);
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    rc = static_cast<int>(f.status);
  }
  return rc;
}
