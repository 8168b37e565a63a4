#include "explora/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "explora/error.hpp"

namespace explora::exp {

using nlohmann::json;

namespace {

// Visits every scalar field with its JSON key. Works for const and mutable
// configs alike.
template <class Config, class F>
void visit_scalars(Config& c, F&& f) {
  auto& w = c.world;
  f("train_cases", w.train_cases);
  f("validation_cases", w.validation_cases);
  f("test_cases", w.test_cases);
  f("slices", w.slices);
  f("lesions_per_case", w.lesions_per_case);
  f("easy_fraction", w.easy_fraction);
  f("label_rate", w.label_rate);
  f("bias_exponent", w.bias_exponent);
  f("feature_dim", w.feature_dim);
  f("context_dim", w.context_dim);
  f("anchor_grid", w.anchor_grid);
  f("jitter_copies", w.jitter_copies);
  f("jitter_magnitude", w.jitter_magnitude);
  f("easy_center", w.easy_center);
  f("hard_center", w.hard_center);
  f("hard_offset", w.hard_offset);
  f("lesion_spread", w.lesion_spread);
  f("background_spread", w.background_spread);
  f("hard_negative_rate", w.hard_negative_rate);
  f("hard_negative_center", w.hard_negative_center);
  f("hard_negative_spread", w.hard_negative_spread);
  f("observation_noise", w.observation_noise);
  f("context_gain", w.context_gain);
  f("world_seed", c.world_seed);

  auto& t = c.train;
  f("tau", t.tau);
  f("theta", t.theta);
  f("gamma_match", t.gamma_match);
  f("epsilon", t.epsilon);
  f("ema_momentum", t.ema_momentum);
  f("learning_rate", t.learning_rate);
  f("batch_size", t.batch_size);
  f("max_rounds", t.max_rounds);
  f("slice_dropout_prob", t.slice_dropout_prob);
  f("hidden", t.hidden);
  f("eval_interval", t.eval_interval);
  f("resize_lo", t.resize_lo);
  f("resize_hi", t.resize_hi);
  f("positive_iou", t.positive_iou);
  f("detection_nms_iou", t.detection_nms_iou);
  f("negatives_per_positive", t.negatives_per_positive);
  f("min_negatives", t.min_negatives);
  f("flip_threshold", t.flip_threshold);
  f("multistage_stages", t.multistage_stages);
  f("scar_prior", t.scar_prior);
  f("sampling_radius", t.sampling_radius);
  f("eval_nms_iou", t.eval.nms_iou);
  f("max_detections_per_slice", t.eval.max_detections_per_slice);
  f("link_iou", t.eval.link.link_iou);
  f("max_gap", t.eval.link.max_gap);
  f("overlap", t.eval.overlap);
}

const char* to_string(sim::StopMode m) { return m == sim::StopMode::validation_ap ? "validation_ap" : "mined_surge"; }

sim::StopMode stop_mode_from_string(const std::string& s) {
  if (s == "validation_ap") return sim::StopMode::validation_ap;
  if (s == "mined_surge") return sim::StopMode::mined_surge;
  throw Error(ErrorCode::invalid_argument, "stop_mode: unknown value '" + s + "'");
}

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::invalid_argument, key + ": " + why);
}

template <class T>
void read_number(const json& v, const std::string& key, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad_key(key, "expected a number");
    out = v.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) bad_key(key, "expected a non-negative integer");
    out = v.get<T>();
  } else {
    if (!v.is_number_integer()) bad_key(key, "expected an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) bad_key(key, "out of range");
    out = static_cast<T>(x);
  }
}

json box_json(const Box2D& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box2D box_from_json(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) throw Error(ErrorCode::parse, where + ": box must be [x0, y0, x1, y1]");
  Box2D b;
  try {
    b = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  } catch (const json::exception&) {
    throw Error(ErrorCode::parse, where + ": box coordinates must be numbers");
  }
  if (!b.valid()) throw Error(ErrorCode::parse, where + ": invalid box");
  return b;
}

// Splits JSONL text into parsed records; errors carry the line number.
std::vector<json> parse_jsonl(std::string_view text, const std::string& name) {
  std::vector<json> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::parse, name + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!out.back().is_object())
      throw Error(ErrorCode::parse, name + " line " + std::to_string(line_no) + ": expected an object");
  }
  return out;
}

template <class T>
T field(const json& rec, const char* key, const std::string& where) {
  auto it = rec.find(key);
  if (it == rec.end()) throw Error(ErrorCode::parse, where + ": missing '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::parse, where + ": ill-typed '" + key + "'");
  }
}

std::string jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::epsilon_sweep() const {
  return epsilons.empty() ? std::vector<std::size_t>{train.epsilon} : epsilons;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j = json::object();
  visit_scalars(c, [&](const char* key, const auto& v) { j[key] = v; });
  j["label_bias"] = sim::to_string(c.world.label_bias);
  j["strategy"] = sim::to_string(c.strategy);
  j["stop_mode"] = to_string(c.stop_mode);
  j["epsilons"] = c.epsilons;
  j["seeds"] = c.seeds;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::parse, "config: expected a JSON object");
  ExperimentConfig c;
  std::set<std::string> known;
  visit_scalars(c, [&](const char* key, auto& v) {
    known.insert(key);
    if (auto it = j.find(key); it != j.end()) read_number(*it, key, v);
  });
  for (const char* key : {"label_bias", "strategy", "stop_mode", "epsilons", "seeds"}) known.insert(key);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) bad_key(it.key(), "unknown configuration key");

  auto str = [&](const char* key) {
    if (!j[key].is_string()) bad_key(key, "expected a string");
    return j[key].get<std::string>();
  };
  if (j.contains("label_bias")) c.world.label_bias = sim::label_bias_from_string(str("label_bias"));
  if (j.contains("strategy")) c.strategy = sim::strategy_from_string(str("strategy"));
  if (j.contains("stop_mode")) c.stop_mode = stop_mode_from_string(str("stop_mode"));
  auto list = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) bad_key(key, "expected an array");
    out.clear();
    for (const auto& v : j[key]) {
      typename std::decay_t<decltype(out)>::value_type x{};
      read_number(v, key, x);
      out.push_back(x);
    }
  };
  list("epsilons", c.epsilons);
  list("seeds", c.seeds);
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  sim::validate(c.world);
  sim::validate(c.train);
  if (c.seeds.empty()) bad_key("seeds", "at least one seed is required");
  for (std::size_t e : c.epsilons)
    if (e < 1) bad_key("epsilons", "every epsilon must be >= 1");
  if (c.strategy == sim::Strategy::multistage && c.train.multistage_stages < 1)
    bad_key("multistage_stages", "must be >= 1 for the multistage arm");
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::internal, "sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(config_to_json(c)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::io, "read failed: " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot rename to " + path.string() + ": " + ec.message());
}

// ---- world files ------------------------------------------------------------

namespace {

ExperimentConfig world_only(const sim::WorldConfig& w, std::uint64_t seed) {
  ExperimentConfig c;
  c.world = w;
  c.world_seed = seed;
  return c;
}

std::string world_json(const sim::SimWorld& world) {
  json j;
  j["format"] = "explora-world v1";
  j["seed"] = world.seed;
  j["config"] = json::parse(config_to_json(world_only(world.config, world.seed)));
  return j.dump(2) + "\n";
}

void write_manifest(const fs::path& dir, const std::string& hash, std::uint64_t seed,
                    const std::map<std::string, std::string>& files) {
  json j;
  j["config_hash"] = hash;
  j["seed"] = seed;
  j["files"] = json::object();
  for (const auto& [name, bytes] : files) j["files"][name] = sha256_hex(bytes);
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace

std::string annotations_jsonl(const sim::SimWorld& world) {
  std::vector<json> recs;
  for (const auto& s : world.studies)
    for (int z = 0; z < s.slice_count; ++z)
      for (const auto& b : sim::annotations(s, z))
        recs.push_back({{"case_id", s.case_id}, {"slice", z}, {"box", box_json(b)}, {"origin", "annotated"}});
  return jsonl(recs);
}

std::string latent_jsonl(const sim::SimWorld& world) {
  std::vector<json> recs;
  for (const auto& s : world.studies) {
    json lesions = json::array();
    for (std::size_t i = 0; i < s.lesions.size(); ++i) {
      const auto& l = s.lesions[i];
      lesions.push_back({{"lesion_id", i},
                         {"z_start", l.z_lo},
                         {"z_end", l.z_hi},
                         {"box", box_json(l.box)},
                         {"mode", sim::to_string(l.mode)},
                         {"labeled", l.observed}});
    }
    recs.push_back({{"case_id", s.case_id},
                    {"split", sim::to_string(s.split)},
                    {"slices", s.slice_count},
                    {"lesions", lesions}});
  }
  return jsonl(recs);
}

void save_world(const sim::SimWorld& world, const fs::path& dir) {
  const std::map<std::string, std::string> files{{"world.json", world_json(world)},
                                                 {"annotations.jsonl", annotations_jsonl(world)},
                                                 {"latent.jsonl", latent_jsonl(world)}};
  for (const auto& [name, bytes] : files) write_file(dir / name, bytes);
  write_manifest(dir, config_hash(world_only(world.config, world.seed)), world.seed, files);
}

void verify_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_file(mpath));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, mpath.string() + ": " + e.what());
  }
  if (!m.contains("files") || !m["files"].is_object())
    throw Error(ErrorCode::parse, mpath.string() + ": missing 'files'");
  for (auto it = m["files"].begin(); it != m["files"].end(); ++it) {
    const fs::path p = dir / it.key();
    if (!it.value().is_string()) throw Error(ErrorCode::parse, mpath.string() + ": checksum must be a string");
    if (sha256_hex(read_file(p)) != it.value().get<std::string>())
      throw Error(ErrorCode::state, "checksum mismatch: " + p.string());
  }
  if (m.contains("runs") && m["runs"].is_array())
    for (const auto& sub : m["runs"]) verify_manifest(dir / sub.get<std::string>());
}

sim::SimWorld load_world(const fs::path& dir) {
  verify_manifest(dir);
  json wj;
  try {
    wj = json::parse(read_file(dir / "world.json"));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, (dir / "world.json").string() + ": " + e.what());
  }
  if (wj.value("format", "") != "explora-world v1")
    throw Error(ErrorCode::parse, (dir / "world.json").string() + ": unknown format");
  const ExperimentConfig c = config_from_json(wj.at("config").dump());
  sim::SimWorld world = sim::generate_world(c.world, c.world_seed);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < world.studies.size(); ++i) {
    index.emplace(world.studies[i].case_id, i);
    for (auto& l : world.studies[i].lesions) l.observed = false;
  }
  const auto recs = parse_jsonl(read_file(dir / "annotations.jsonl"), "annotations.jsonl");
  for (std::size_t n = 0; n < recs.size(); ++n) {
    const std::string where = "annotations.jsonl record " + std::to_string(n + 1);
    const auto id = field<std::string>(recs[n], "case_id", where);
    const int z = field<int>(recs[n], "slice", where);
    const Box2D box = box_from_json(recs[n].at("box"), where);
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::parse, where + ": unknown case " + id);
    bool found = false;
    for (auto& l : world.studies[it->second].lesions)
      if (l.spans(z) && l.box == box) {
        l.observed = true;
        found = true;
      }
    if (!found) throw Error(ErrorCode::parse, where + ": box does not correspond to an object of the scene");
  }
  return world;
}

std::vector<TruthCase> parse_latent(std::string_view text) {
  std::vector<TruthCase> out;
  const auto recs = parse_jsonl(text, "latent.jsonl");
  for (std::size_t n = 0; n < recs.size(); ++n) {
    const std::string where = "latent.jsonl record " + std::to_string(n + 1);
    TruthCase tc;
    tc.case_id = field<std::string>(recs[n], "case_id", where);
    tc.split = sim::split_from_string(field<std::string>(recs[n], "split", where));
    const auto lesions = recs[n].find("lesions");
    if (lesions == recs[n].end() || !lesions->is_array()) throw Error(ErrorCode::parse, where + ": missing 'lesions'");
    for (const auto& l : *lesions) {
      tracking::Track3D t;
      t.case_id = tc.case_id;
      t.z_start = field<int>(l, "z_start", where);
      t.z_end = field<int>(l, "z_end", where);
      if (t.z_end < t.z_start) throw Error(ErrorCode::parse, where + ": z_end < z_start");
      t.boxes.assign(static_cast<std::size_t>(t.z_end - t.z_start + 1), box_from_json(l.at("box"), where));
      t.score = 1.0;
      tc.lesions.push_back(std::move(t));
    }
    out.push_back(std::move(tc));
  }
  return out;
}

// ---- predictions ------------------------------------------------------------

std::string tracks_jsonl(const std::vector<tracking::Track3D>& tracks) {
  std::vector<json> recs;
  for (const auto& t : tracks) {
    const auto b3 = tracking::track_to_box3d(t);
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back(box_json(b));
    recs.push_back({{"case_id", t.case_id},
                    {"z_start", t.z_start},
                    {"z_end", t.z_end},
                    {"box", box_json(b3.box)},
                    {"boxes", boxes},
                    {"score", t.score}});
  }
  return jsonl(recs);
}

std::vector<tracking::Track3D> parse_predictions(std::string_view text, const tracking::LinkConfig& link) {
  const auto recs = parse_jsonl(text, "predictions");
  std::vector<tracking::Track3D> tracks;
  std::map<std::string, std::map<int, std::vector<ScoredBox>>> detections;
  for (std::size_t n = 0; n < recs.size(); ++n) {
    const std::string where = "predictions record " + std::to_string(n + 1);
    const json& r = recs[n];
    const auto id = field<std::string>(r, "case_id", where);
    if (r.contains("z_start")) {
      tracking::Track3D t;
      t.case_id = id;
      t.z_start = field<int>(r, "z_start", where);
      t.z_end = field<int>(r, "z_end", where);
      if (t.z_end < t.z_start) throw Error(ErrorCode::parse, where + ": z_end < z_start");
      const auto span = static_cast<std::size_t>(t.z_end - t.z_start + 1);
      t.score = r.contains("score") ? field<double>(r, "score", where) : 1.0;
      if (r.contains("boxes")) {
        if (!r["boxes"].is_array() || r["boxes"].size() != span)
          throw Error(ErrorCode::parse, where + ": 'boxes' must hold one box per slice");
        for (const auto& b : r["boxes"]) t.boxes.push_back(box_from_json(b, where));
      } else {
        t.boxes.assign(span, box_from_json(r.at("box"), where));
      }
      tracks.push_back(std::move(t));
    } else {
      const int z = field<int>(r, "slice", where);
      const double score = field<double>(r, "score", where);
      if (!r.contains("box")) throw Error(ErrorCode::parse, where + ": missing 'box'");
      detections[id][z].push_back({box_from_json(r["box"], where), score, z});
    }
  }
  for (const auto& [id, per_slice] : detections) {
    auto linked = tracking::link_tracks(id, per_slice, link);
    tracks.insert(tracks.end(), std::make_move_iterator(linked.begin()), std::make_move_iterator(linked.end()));
  }
  return tracks;
}

metrics::EvalResult evaluate_predictions(const std::vector<tracking::Track3D>& predictions,
                                         const std::vector<TruthCase>& truth, sim::Split split,
                                         double overlap) {
  std::map<std::string, std::vector<tracking::Track3D>> by_case;
  for (const auto& tc : truth)
    if (tc.split == split) by_case[tc.case_id];
  std::set<std::string> unknown;
  for (const auto& p : predictions) {
    auto it = by_case.find(p.case_id);
    if (it == by_case.end())
      unknown.insert(p.case_id);
    else
      it->second.push_back(p);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::not_found, "predictions reference cases outside the " +
                                          std::string(sim::to_string(split)) + " truth: " + list);
  }
  std::vector<metrics::MatchLedger> ledgers;
  for (const auto& tc : truth) {
    if (tc.split != split) continue;
    ledgers.push_back(metrics::match_3d(tc.case_id, by_case[tc.case_id], tc.lesions, overlap));
  }
  return metrics::froc(ledgers);
}

// ---- runs -------------------------------------------------------------------

std::string eval_csv_header() { return "strategy,seed,epsilon,stop_round," + metrics::csv_header(); }

std::string eval_csv_row(const ResultRow& r) {
  return r.strategy + "," + std::to_string(r.seed) + "," + (r.epsilon ? std::to_string(r.epsilon) : "-") + "," +
         std::to_string(r.stop_round) + "," + metrics::csv_row(r.result);
}

namespace {

struct SeedArtifacts {
  std::map<std::string, std::string> files;
  std::vector<ResultRow> rows;
};

SeedArtifacts run_seed(const ExperimentConfig& c, const sim::SimWorld& world, std::uint64_t seed) {
  using sim::Strategy;
  sim::TrainConfig tc = c.train;
  tc.seed = seed;
  SeedArtifacts art;
  const std::string name = sim::to_string(c.strategy);

  auto finish = [&](const sim::DetectorParams& model, std::size_t eps, std::size_t stop, const std::string& file) {
    const auto ev = sim::evaluate(world, model, sim::Split::test, tc.eval);
    art.files[file] = tracks_jsonl(ev.tracks);
    art.rows.push_back({name, seed, eps, stop, ev.result});
  };

  switch (c.strategy) {
    case Strategy::adding:
    case Strategy::ignoring:
    case Strategy::exploratory: {
      sim::TrainingOutcome ex = sim::run_exploratory(world, tc);
      art.files["dynamics.csv"] = ex.log.to_csv();
      std::size_t stop = sim::stopping_round(ex.log, c.stop_mode);
      PredictionBank bank;
      if (c.stop_mode == sim::StopMode::validation_ap) {
        bank = ex.best_bank;
      } else if (stop == tc.max_rounds) {
        bank = ex.bank;
      } else {
        sim::TrainConfig shorter = tc;
        shorter.max_rounds = stop;
        bank = sim::run_exploratory(world, shorter).bank;
      }
      art.files["bank.snapshot"] = bank.serialize();
      if (c.strategy == Strategy::exploratory) {
        finish(ex.teacher, 0, stop, "predictions.jsonl");
        break;
      }
      const auto mode = c.strategy == Strategy::adding ? risk::RetrainMode::adding : risk::RetrainMode::ignoring;
      for (std::size_t eps : c.epsilon_sweep()) {
        const auto selected = bank.select(eps);
        const auto out = sim::run_retrain(world, tc, selected, mode);
        finish(out.teacher, eps, stop, "predictions_eps" + std::to_string(eps) + ".jsonl");
      }
      break;
    }
    case Strategy::multistage:
      finish(sim::run_multistage(world, tc).teacher, 0, 0, "predictions.jsonl");
      break;
    default: {
      const auto out = sim::train(world, tc, sim::TrainingPlan{c.strategy, nullptr, nullptr, false});
      finish(out.teacher, 0, 0, "predictions.jsonl");
      break;
    }
  }
  std::string csv = eval_csv_header() + "\n";
  for (const auto& r : art.rows) csv += eval_csv_row(r) + "\n";
  art.files["eval.csv"] = csv;
  return art;
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& config, const sim::SimWorld& world,
                                      const fs::path& out_dir) {
  // The world on disk is authoritative for scene parameters.
  ExperimentConfig c = config;
  c.world = world.config;
  c.world_seed = world.seed;
  validate(c);
  const std::string hash = config_hash(c);
  std::vector<ResultRow> rows;
  std::map<std::string, std::string> top;
  json runs = json::array();
  for (std::uint64_t seed : c.seeds) {
    const SeedArtifacts art = run_seed(c, world, seed);
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    for (const auto& [name, bytes] : art.files) write_file(dir / name, bytes);
    write_manifest(dir, hash, seed, art.files);
    runs.push_back("seed_" + std::to_string(seed));
    rows.insert(rows.end(), art.rows.begin(), art.rows.end());
  }
  std::string csv = eval_csv_header() + "\n";
  for (const auto& r : rows) csv += eval_csv_row(r) + "\n";
  top["eval.csv"] = csv;
  top["config.json"] = config_to_json(c);
  for (const auto& [name, bytes] : top) write_file(out_dir / name, bytes);

  json m;
  m["config_hash"] = hash;
  m["seeds"] = c.seeds;
  m["files"] = json::object();
  for (const auto& [name, bytes] : top) m["files"][name] = sha256_hex(bytes);
  m["runs"] = runs;
  write_file(out_dir / "manifest.json", m.dump(2) + "\n");
  return rows;
}

std::string report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw Error(ErrorCode::invalid_argument, "report needs at least one run directory");
  struct Acc {
    std::size_t n = 0;
    std::vector<double> sums;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& dir : run_dirs) {
    verify_manifest(dir);
    const std::string text = read_file(dir / "eval.csv");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != eval_csv_header()) throw Error(ErrorCode::parse, (dir / "eval.csv").string() + ": unexpected header");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      if (cells.size() != 13)
        throw Error(ErrorCode::parse, (dir / "eval.csv").string() + " line " + std::to_string(line_no) + ": expected 13 columns");
      const auto key = std::make_pair(cells[0], cells[2]);
      auto [it, inserted] = groups.try_emplace(key);
      if (inserted) order.push_back(key);
      Acc& acc = it->second;
      acc.sums.resize(9, 0.0);
      for (std::size_t k = 0; k < 9; ++k) {
        try {
          acc.sums[k] += std::stod(cells[4 + k]);
        } catch (const std::exception&) {
          throw Error(ErrorCode::parse, (dir / "eval.csv").string() + " line " + std::to_string(line_no) + ": bad number");
        }
      }
      ++acc.n;
    }
  }
  std::string out = "strategy,epsilon,runs," + metrics::csv_header() + "\n";
  for (const auto& key : order) {
    const Acc& acc = groups[key];
    out += key.first + "," + key.second + "," + std::to_string(acc.n);
    for (double s : acc.sums) out += "," + fmt_pct(s / static_cast<double>(acc.n));
    out += "\n";
  }
  return out;
}

// ---- bank tooling -----------------------------------------------------------

std::string bank_inspect(const PredictionBank& bank) {
  std::string out = "case_id\tentry\torigin\tx_min\ty_min\tx_max\ty_max\thits\tvisits\thistory\n";
  char buf[160];
  for (const auto& [id, c] : bank.cases()) {
    for (std::size_t i = 0; i < c.entries.size(); ++i) {
      const auto& e = c.entries[i];
      std::string bits;
      for (bool b : e.hit_history) bits += b ? '1' : '0';
      std::snprintf(buf, sizeof buf, "\t%zu\t%s\t%.6f\t%.6f\t%.6f\t%.6f\t%zu\t%zu\t", i, to_string(e.origin),
                    e.box.x_min, e.box.y_min, e.box.x_max, e.box.y_max, e.match_count(), e.hit_history.size());
      out += id + buf + (bits.empty() ? "-" : bits) + "\n";
    }
  }
  return out;
}

std::string bank_select_jsonl(const PredictionBank& bank, std::size_t epsilon) {
  std::vector<json> recs;
  for (const auto& [id, boxes] : bank.select(epsilon)) {
    // Image keys are "<case>/zNN"; anything else is reported as slice -1.
    int slice = -1;
    std::string case_id = id;
    if (const auto p = id.rfind("/z"); p != std::string::npos) {
      try {
        slice = std::stoi(id.substr(p + 2));
        case_id = id.substr(0, p);
      } catch (const std::exception&) {
      }
    }
    const auto& entries = bank.at(id).entries;
    for (const auto& b : boxes) {
      std::size_t hits = 0;
      for (const auto& e : entries)
        if (e.origin == EntryOrigin::mined && e.box == b) hits = e.match_count();
      recs.push_back({{"case_id", case_id}, {"slice", slice}, {"box", box_json(b)}, {"origin", "mined"}, {"hits", hits}});
    }
  }
  return jsonl(recs);
}

std::string bank_stats(const PredictionBank& bank) {
  std::map<std::size_t, std::size_t> hits, visits;
  std::size_t mined = 0, gt = 0;
  for (const auto& [id, c] : bank.cases()) {
    ++visits[c.visit_count];
    for (const auto& e : c.entries) {
      if (e.origin == EntryOrigin::ground_truth) {
        ++gt;
        continue;
      }
      ++mined;
      ++hits[e.match_count()];
    }
  }
  std::string out = "cases," + std::to_string(bank.cases().size()) + "\n";
  out += "ground_truth_entries," + std::to_string(gt) + "\n";
  out += "mined_entries," + std::to_string(mined) + "\n";
  out += "mined_latest," + std::to_string(bank.mined_count_latest()) + "\n";
  out += "hits,entries\n";
  for (const auto& [h, n] : hits) out += std::to_string(h) + "," + std::to_string(n) + "\n";
  out += "visits,cases\n";
  for (const auto& [v, n] : visits) out += std::to_string(v) + "," + std::to_string(n) + "\n";
  return out;
}

}  // namespace explora::exp
