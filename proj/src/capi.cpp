#include "explora/explora.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include <json.hpp>

#include "explora/error.hpp"
#include "explora/experiment.hpp"

struct explora_world {
  explora::sim::SimWorld world;
};

struct explora_bank {
  explora::PredictionBank bank;
};

namespace {

thread_local std::string g_last_error;

explora_status fail(explora_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `f`, translating exceptions to status codes.
template <class F>
explora_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return EXPLORA_OK;
  } catch (const explora::Error& e) {
    return fail(static_cast<explora_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return fail(EXPLORA_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(EXPLORA_INTERNAL, e.what());
  } catch (...) {
    return fail(EXPLORA_INTERNAL, "unknown error");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void require(const void* p, const char* name) {
  if (!p) throw explora::Error(explora::ErrorCode::invalid_argument, std::string(name) + " must not be null");
}

}  // namespace

extern "C" {

const char* explora_last_error(void) { return g_last_error.c_str(); }

const char* explora_version(void) { return "0.1.0"; }

void explora_string_free(char* s) { std::free(s); }

explora_status explora_config_resolve(const char* patch_json, char** config_json) {
  return guarded([&] {
    require(config_json, "config_json");
    const auto c = explora::exp::config_from_json(patch_json ? patch_json : "{}");
    *config_json = dup(explora::exp::config_to_json(c));
  });
}

explora_status explora_config_hash(const char* config_json, char** hex) {
  return guarded([&] {
    require(config_json, "config_json");
    require(hex, "hex");
    *hex = dup(explora::exp::config_hash(explora::exp::config_from_json(config_json)));
  });
}

explora_status explora_world_generate(const char* config_json, explora_world** out) {
  return guarded([&] {
    require(out, "out");
    const auto c = explora::exp::config_from_json(config_json ? config_json : "{}");
    *out = new explora_world{explora::sim::generate_world(c.world, c.world_seed)};
  });
}

explora_status explora_world_save(const explora_world* world, const char* dir) {
  return guarded([&] {
    require(world, "world");
    require(dir, "dir");
    explora::exp::save_world(world->world, dir);
  });
}

explora_status explora_world_load(const char* dir, explora_world** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new explora_world{explora::exp::load_world(dir)};
  });
}

void explora_world_free(explora_world* world) { delete world; }

explora_status explora_world_summary(const explora_world* world, char** json) {
  return guarded([&] {
    require(world, "world");
    require(json, "json");
    nlohmann::json j;
    j["seed"] = world->world.seed;
    for (auto split : {explora::sim::Split::train, explora::sim::Split::validation, explora::sim::Split::test}) {
      std::size_t cases = 0, lesions = 0, observed = 0, easy = 0;
      for (const auto& s : world->world.studies) {
        if (s.split != split) continue;
        ++cases;
        for (const auto& l : s.lesions) {
          ++lesions;
          observed += l.observed;
          easy += l.mode == explora::sim::LesionMode::easy;
        }
      }
      j[explora::sim::to_string(split)] = {{"cases", cases}, {"lesions", lesions}, {"observed", observed}, {"easy", easy}};
    }
    *json = dup(j.dump(2) + "\n");
  });
}

int explora_world_equal(const explora_world* a, const explora_world* b) {
  if (!a || !b) return 0;
  return a->world == b->world ? 1 : 0;
}

explora_status explora_run(const char* config_json, const explora_world* world, const char* out_dir, char** eval_csv) {
  return guarded([&] {
    require(config_json, "config_json");
    require(world, "world");
    require(out_dir, "out_dir");
    const auto c = explora::exp::config_from_json(config_json);
    const auto rows = explora::exp::run_experiment(c, world->world, out_dir);
    if (eval_csv) {
      std::string csv = explora::exp::eval_csv_header() + "\n";
      for (const auto& r : rows) csv += explora::exp::eval_csv_row(r) + "\n";
      *eval_csv = dup(csv);
    }
  });
}

explora_status explora_bank_load(const char* path, explora_bank** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new explora_bank{explora::PredictionBank::deserialize(explora::exp::read_file(path))};
  });
}

explora_status explora_bank_parse(const char* bytes, size_t len, explora_bank** out) {
  return guarded([&] {
    require(bytes, "bytes");
    require(out, "out");
    *out = new explora_bank{explora::PredictionBank::deserialize(std::string_view(bytes, len))};
  });
}

void explora_bank_free(explora_bank* bank) { delete bank; }

explora_status explora_bank_serialize(const explora_bank* bank, char** bytes) {
  return guarded([&] {
    require(bank, "bank");
    require(bytes, "bytes");
    *bytes = dup(bank->bank.serialize());
  });
}

explora_status explora_bank_inspect(const explora_bank* bank, char** text) {
  return guarded([&] {
    require(bank, "bank");
    require(text, "text");
    *text = dup(explora::exp::bank_inspect(bank->bank));
  });
}

explora_status explora_bank_select(const explora_bank* bank, size_t epsilon, char** jsonl) {
  return guarded([&] {
    require(bank, "bank");
    require(jsonl, "jsonl");
    *jsonl = dup(explora::exp::bank_select_jsonl(bank->bank, epsilon));
  });
}

explora_status explora_bank_stats(const explora_bank* bank, char** text) {
  return guarded([&] {
    require(bank, "bank");
    require(text, "text");
    *text = dup(explora::exp::bank_stats(bank->bank));
  });
}

explora_status explora_bank_counts(const explora_bank* bank, size_t* mined_total, size_t* mined_latest) {
  return guarded([&] {
    require(bank, "bank");
    if (mined_total) *mined_total = bank->bank.mined_total();
    if (mined_latest) *mined_latest = bank->bank.mined_count_latest();
  });
}

explora_status explora_eval(const char* predictions_path, const char* latent_path, const char* split, char** csv) {
  return guarded([&] {
    require(predictions_path, "predictions_path");
    require(latent_path, "latent_path");
    require(csv, "csv");
    const auto sp = explora::sim::split_from_string(split ? split : "test");
    const auto truth = explora::exp::parse_latent(explora::exp::read_file(latent_path));
    const auto preds =
        explora::exp::parse_predictions(explora::exp::read_file(predictions_path), explora::tracking::LinkConfig{});
    const auto r = explora::exp::evaluate_predictions(preds, truth, sp);
    *csv = dup(explora::metrics::csv_header() + "\n" + explora::metrics::csv_row(r) + "\n");
  });
}

explora_status explora_report(const char* const* run_dirs, size_t count, char** csv) {
  return guarded([&] {
    require(csv, "csv");
    if (count > 0) require(run_dirs, "run_dirs");
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < count; ++i) {
      require(run_dirs[i], "run_dirs[i]");
      dirs.emplace_back(run_dirs[i]);
    }
    *csv = dup(explora::exp::report(dirs));
  });
}

explora_status explora_verify(const char* dir) {
  return guarded([&] {
    require(dir, "dir");
    explora::exp::verify_manifest(dir);
  });
}

}  // extern "C"
