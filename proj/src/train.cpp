#include "explora/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "explora/error.hpp"

namespace explora::sim {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::baseline: return "baseline";
    case Strategy::exploratory: return "exploratory";
    case Strategy::adding: return "adding";
    case Strategy::ignoring: return "ignoring";
    case Strategy::recalibration: return "recalibration";
    case Strategy::multistage: return "multistage";
    case Strategy::scar: return "scar";
    case Strategy::sampling: return "sampling";
  }
  return "baseline";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::baseline, Strategy::exploratory, Strategy::adding, Strategy::ignoring,
                     Strategy::recalibration, Strategy::multistage, Strategy::scar, Strategy::sampling})
    if (s == to_string(v)) return v;
  throw Error(ErrorCode::invalid_argument, "strategy: unknown value '" + s + "'");
}

void validate(const TrainConfig& c) {
  auto fail = [](const char* field, const char* why) {
    throw Error(ErrorCode::invalid_argument, std::string(field) + ": " + why);
  };
  if (!(c.tau > 0.0 && c.tau <= 1.0)) fail("tau", "must lie in (0, 1]");
  if (!(c.theta >= 0.0 && c.theta <= 1.0)) fail("theta", "must lie in [0, 1]");
  if (!(c.gamma_match > 0.0 && c.gamma_match <= 1.0)) fail("gamma_match", "must lie in (0, 1]");
  if (c.epsilon < 1) fail("epsilon", "must be >= 1");
  if (!(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0)) fail("ema_momentum", "must lie in [0, 1]");
  if (!(c.learning_rate > 0.0 && std::isfinite(c.learning_rate))) fail("learning_rate", "must be > 0");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.max_rounds < 1) fail("max_rounds", "must be >= 1");
  if (!(c.slice_dropout_prob >= 0.0 && c.slice_dropout_prob <= 1.0))
    fail("slice_dropout_prob", "must lie in [0, 1]");
  if (c.hidden < 1) fail("hidden", "must be >= 1");
  if (c.eval_interval < 1) fail("eval_interval", "must be >= 1");
  if (!(c.resize_lo > 0.0 && c.resize_lo <= c.resize_hi)) fail("resize_lo", "must satisfy 0 < lo <= hi");
  if (!(c.positive_iou > 0.0 && c.positive_iou <= 1.0)) fail("positive_iou", "must lie in (0, 1]");
  if (!(c.flip_threshold > 0.0 && c.flip_threshold < 1.0)) fail("flip_threshold", "must lie in (0, 1)");
  if (!(c.scar_prior > 0.0 && c.scar_prior < 1.0)) fail("scar_prior", "must lie in (0, 1)");
  if (!(c.sampling_radius >= 0.0)) fail("sampling_radius", "must be >= 0");
}

std::string DynamicsLog::to_csv() const {
  std::string out = "round,mined_total,mined_latest,val_ap,loss\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.6f,%.6f\n", r.round, r.mined_total, r.mined_latest,
                  r.val_ap, r.loss);
    out += buf;
  }
  return out;
}

const LogRow& DynamicsLog::at_round(std::size_t round) const {
  for (const auto& r : rows)
    if (r.round == round) return r;
  throw Error(ErrorCode::not_found, "no log row for round " + std::to_string(round));
}

std::string image_key(const std::string& case_id, int slice) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "/z%02d", slice);
  return case_id + buf;
}

std::vector<tracking::Track3D> lesion_tracks(const Study& study) {
  std::vector<tracking::Track3D> out;
  for (const auto& l : study.lesions) {
    tracking::Track3D t;
    t.case_id = study.case_id;
    t.z_start = l.z_lo;
    t.z_end = l.z_hi;
    t.boxes.assign(static_cast<std::size_t>(l.z_hi - l.z_lo + 1), l.box);
    t.score = 1.0;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

struct EvalSet {
  // [study][slice] -> candidates
  std::vector<std::size_t> studies;
  std::vector<std::vector<std::vector<Candidate>>> candidates;
};

EvalSet build_eval_set(const SimWorld& world, Split split) {
  EvalSet set;
  set.studies = world.split_indices(split);
  for (std::size_t idx : set.studies) {
    std::vector<std::vector<Candidate>> per_slice;
    for (int z = 0; z < world.studies[idx].slice_count; ++z) {
      Rng rng(mix_seed(mix_seed(world.seed, 0xE7A1000ULL + idx), static_cast<std::uint64_t>(z)));
      per_slice.push_back(propose(world, idx, z, rng));
    }
    set.candidates.push_back(std::move(per_slice));
  }
  return set;
}

SplitEvaluation evaluate_set(const SimWorld& world, const EvalSet& set, const DetectorParams& model,
                             const EvalConfig& config) {
  SplitEvaluation out;
  std::vector<metrics::MatchLedger> ledgers;
  for (std::size_t i = 0; i < set.studies.size(); ++i) {
    const Study& study = world.studies[set.studies[i]];
    std::map<int, std::vector<ScoredBox>> per_slice;
    for (int z = 0; z < study.slice_count; ++z) {
      std::vector<ScoredBox> scored;
      for (const auto& c : set.candidates[i][static_cast<std::size_t>(z)])
        scored.push_back({c.box, model.score(c.features), z});
      std::vector<ScoredBox> dets = nms(scored, config.nms_iou);
      if (dets.size() > config.max_detections_per_slice) dets.resize(config.max_detections_per_slice);
      per_slice.emplace(z, std::move(dets));
    }
    auto tracks = tracking::link_tracks(study.case_id, per_slice, config.link);
    const auto truth = lesion_tracks(study);
    ledgers.push_back(metrics::match_3d(study.case_id, tracks, truth, config.overlap));
    out.tracks.insert(out.tracks.end(), std::make_move_iterator(tracks.begin()),
                      std::make_move_iterator(tracks.end()));
  }
  out.result = metrics::froc(ledgers);
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double max_iou(const Box2D& box, const std::vector<Box2D>& others) {
  double best = 0.0;
  for (const auto& o : others) best = std::max(best, iou_unchecked(box, o));
  return best;
}

}  // namespace

SplitEvaluation evaluate(const SimWorld& world, const DetectorParams& model, Split split,
                         const EvalConfig& config) {
  return evaluate_set(world, build_eval_set(world, split), model, config);
}

TrainingOutcome train(const SimWorld& world, const TrainConfig& cfg, const TrainingPlan& plan) {
  validate(cfg);
  const Strategy strategy = plan.strategy;
  if (strategy == Strategy::multistage && plan.pseudo_source == nullptr)
    throw Error(ErrorCode::invalid_argument, "multistage training needs a pseudo-label source model");
  if ((strategy == Strategy::adding || strategy == Strategy::ignoring) && plan.selected == nullptr)
    throw Error(ErrorCode::invalid_argument, "retraining needs a selection");

  const auto& wc = world.config;
  const auto app_dim = static_cast<std::size_t>(wc.feature_dim);
  const auto ctx_dim = static_cast<std::size_t>(wc.context_dim);

  std::vector<std::pair<std::size_t, int>> images;
  for (std::size_t idx : world.split_indices(Split::train))
    for (int z = 0; z < world.studies[idx].slice_count; ++z) images.emplace_back(idx, z);
  if (images.empty()) throw Error(ErrorCode::invalid_argument, "world has no training images");

  Rng rng(mix_seed(cfg.seed, 0x7472616E6ULL));
  Rng init_rng(mix_seed(cfg.seed, 0x696E6974ULL));
  TrainingOutcome out;
  // Foreground prior of 1% on the output bias.
  out.student = DetectorParams::random(world.feature_width(), cfg.hidden, init_rng, -std::log(99.0));
  out.teacher = out.student;
  out.bank = PredictionBank(BankConfig{cfg.theta, cfg.gamma_match, kDefaultGtNmsIou});
  if (plan.record_bank) {
    for (const auto& [idx, z] : images) {
      const auto ann = annotations(world.studies[idx], z);
      out.bank.init_case(image_key(world.studies[idx].case_id, z), ann);
    }
  }
  const EvalSet validation = build_eval_set(world, Split::validation);

  const bool pseudo_from_teacher = strategy == Strategy::exploratory && cfg.tau < 1.0;
  const bool pseudo_from_frozen = strategy == Strategy::multistage && cfg.tau < 1.0;
  const bool need_teacher_pass = plan.record_bank || pseudo_from_teacher || pseudo_from_frozen;

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<double> grad(out.student.values.size());
  double loss_sum = 0.0;
  std::size_t loss_rounds = 0;
  double best_ap = 0.0;
  std::uniform_real_distribution<double> resize(cfg.resize_lo, cfg.resize_hi);

  for (std::size_t round = 1; round <= cfg.max_rounds; ++round) {
    std::vector<risk::Sample> samples;
    std::vector<double> pseudo_score;
    std::vector<char> selected;
    std::vector<double> distance;

    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto [idx, z] = images[order[cursor++]];
      const Study& study = world.studies[idx];
      const std::string key = image_key(study.case_id, z);
      const std::vector<Candidate> cands = propose(world, idx, z, rng);
      const std::vector<Box2D> ann = annotations(study, z);
      const std::size_t n = cands.size();

      std::vector<char> labeled(n, 0);
      for (std::size_t i = 0; i < n; ++i) labeled[i] = max_iou(cands[i].box, ann) >= cfg.positive_iou;

      std::vector<double> pseudo(n, 0.0);
      if (need_teacher_pass) {
        const DetectorParams& source = pseudo_from_frozen ? *plan.pseudo_source : out.teacher;
        std::vector<ScoredBox> scored;
        scored.reserve(n);
        for (const auto& c : cands) scored.push_back({c.box, source.score(c.features), z});
        const std::vector<ScoredBox> dets = nms(scored, cfg.detection_nms_iou);
        if (plan.record_bank) out.bank.update(key, dets, ann);
        if (pseudo_from_teacher || pseudo_from_frozen) {
          std::vector<ScoredBox> confident;
          for (const auto& d : dets)
            if (d.score >= cfg.tau) confident.push_back(d);
          const auto boxes = gt_nms(confident, ann, kDefaultGtNmsIou);
          for (std::size_t i = 0; i < n; ++i) {
            if (labeled[i]) continue;
            for (const auto& p : boxes)
              if (iou_unchecked(cands[i].box, p.box) >= cfg.positive_iou)
                pseudo[i] = std::max(pseudo[i], p.score);
          }
        }
      }

      std::vector<char> sel(n, 0);
      if (strategy == Strategy::adding || strategy == Strategy::ignoring) {
        auto it = plan.selected->find(key);
        if (it != plan.selected->end())
          for (std::size_t i = 0; i < n; ++i)
            sel[i] = !labeled[i] && max_iou(cands[i].box, it->second) >= cfg.positive_iou;
      }

      // Detector-style sampling: every positive target, plus a bounded
      // random subset of background.
      std::vector<std::size_t> pos, neg;
      for (std::size_t i = 0; i < n; ++i) {
        const bool positive = labeled[i] || pseudo[i] >= cfg.tau ||
                              (strategy == Strategy::adding && sel[i]);
        if (positive)
          pos.push_back(i);
        else if (!(strategy == Strategy::ignoring && sel[i]))
          neg.push_back(i);
      }
      const std::size_t n_neg =
          std::min(neg.size(), std::max(cfg.negatives_per_positive * pos.size(), cfg.min_negatives));
      for (std::size_t k = 0; k < n_neg; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, neg.size() - 1);
        std::swap(neg[k], neg[pick(rng)]);
      }
      neg.resize(n_neg);
      std::vector<std::size_t> kept = pos;
      kept.insert(kept.end(), neg.begin(), neg.end());
      std::sort(kept.begin(), kept.end());

      const double scale = resize(rng);
      const Rng dropout_state(rng());
      for (std::size_t i : kept) {
        risk::Sample s;
        s.features = cands[i].features;
        for (std::size_t k = 0; k < app_dim; ++k) s.features[k] *= scale;
        Rng r = dropout_state;
        slice_dropout(s.features, app_dim, ctx_dim, cfg.slice_dropout_prob, r);
        s.status = labeled[i] ? risk::LabelStatus::labeled_positive : risk::LabelStatus::unlabeled;
        s.latent_label = cands[i].lesion >= 0 ? 1 : -1;
        samples.push_back(std::move(s));
        pseudo_score.push_back(pseudo[i]);
        selected.push_back(sel[i]);
        double dist = std::numeric_limits<double>::infinity();
        for (const auto& a : ann)
          dist = std::min(dist, std::hypot(cands[i].box.center_x() - a.center_x(),
                                           cands[i].box.center_y() - a.center_y()));
        distance.push_back(dist);
      }
    }

    std::vector<double> logits(samples.size()), scores(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      logits[i] = out.student.logit(samples[i].features);
      scores[i] = sigmoid(logits[i]);
    }

    const risk::RiskConfig rc;
    risk::Objective objective;
    const bool any_labeled = std::any_of(samples.begin(), samples.end(), [](const risk::Sample& s) {
      return s.status == risk::LabelStatus::labeled_positive;
    });
    switch (strategy) {
      case Strategy::baseline:
        objective = risk::retrain_objective(samples, std::vector<char>(samples.size(), 0),
                                            risk::RetrainMode::adding, rc);
        break;
      case Strategy::exploratory:
      case Strategy::multistage:
        objective = risk::exploratory_objective(samples, pseudo_score, cfg.tau, rc);
        break;
      case Strategy::adding:
        objective = risk::retrain_objective(samples, selected, risk::RetrainMode::adding, rc);
        break;
      case Strategy::ignoring:
        objective = risk::retrain_objective(samples, selected, risk::RetrainMode::ignoring, rc);
        break;
      case Strategy::recalibration:
        objective = risk::recalibrated_objective(samples, scores, cfg.flip_threshold, rc);
        break;
      case Strategy::scar:
        objective = any_labeled ? risk::scar_objective(samples, cfg.scar_prior)
                                : risk::retrain_objective(samples, std::vector<char>(samples.size(), 0),
                                                          risk::RetrainMode::adding, rc);
        break;
      case Strategy::sampling:
        objective = risk::sampling_objective(samples, distance, cfg.sampling_radius, rc);
        break;
    }

    const double loss = objective.value(scores);
    if (!std::isfinite(loss))
      throw Error(ErrorCode::divergence, "non-finite loss at round " + std::to_string(round));
    loss_sum += loss;
    ++loss_rounds;

    const std::vector<double> g = objective.score_gradient(scores);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (g[i] == 0.0) continue;
      const double dlogit = g[i] * scores[i] * (1.0 - scores[i]);
      out.student.accumulate_gradient(samples[i].features, dlogit, grad);
    }
    for (std::size_t k = 0; k < grad.size(); ++k) out.student.values[k] -= cfg.learning_rate * grad[k];
    if (!out.student.finite())
      throw Error(ErrorCode::divergence, "non-finite student parameters at round " + std::to_string(round));

    const double m = cfg.ema_momentum;
    for (std::size_t k = 0; k < grad.size(); ++k)
      out.teacher.values[k] = m * out.teacher.values[k] + (1.0 - m) * out.student.values[k];

    if (round % cfg.eval_interval == 0 || round == cfg.max_rounds) {
      LogRow row;
      row.round = round;
      row.mined_total = out.bank.mined_total();
      row.mined_latest = out.bank.mined_count_latest();
      row.val_ap = evaluate_set(world, validation, out.teacher, cfg.eval).result.ap;
      row.loss = loss_sum / static_cast<double>(loss_rounds);
      out.log.rows.push_back(row);
      if (out.best_round == 0 || row.val_ap > best_ap) {
        best_ap = row.val_ap;
        out.best_round = round;
        if (plan.record_bank) out.best_bank = out.bank;
      }
      loss_sum = 0.0;
      loss_rounds = 0;
    }
  }
  return out;
}

TrainingOutcome run_exploratory(const SimWorld& world, const TrainConfig& config) {
  return train(world, config, TrainingPlan{Strategy::exploratory, nullptr, nullptr, true});
}

TrainingOutcome run_retrain(const SimWorld& world, const TrainConfig& config,
                            const std::map<std::string, std::vector<Box2D>>& selected,
                            risk::RetrainMode mode) {
  const Strategy s = mode == risk::RetrainMode::adding ? Strategy::adding : Strategy::ignoring;
  return train(world, config, TrainingPlan{s, nullptr, &selected, false});
}

TrainingOutcome run_multistage(const SimWorld& world, const TrainConfig& config) {
  TrainingOutcome stage = train(world, config, TrainingPlan{Strategy::baseline, nullptr, nullptr, false});
  for (std::size_t k = 0; k < config.multistage_stages; ++k) {
    const DetectorParams source = stage.teacher;
    stage = train(world, config, TrainingPlan{Strategy::multistage, &source, nullptr, false});
  }
  return stage;
}

std::size_t stopping_round(const DynamicsLog& log, StopMode mode, const SurgeConfig& surge) {
  if (log.rows.empty()) throw Error(ErrorCode::invalid_argument, "stopping_round needs a non-empty log");
  if (mode == StopMode::validation_ap) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < log.rows.size(); ++i)
      if (log.rows[i].val_ap > log.rows[best].val_ap) best = i;
    return log.rows[best].round;
  }
  for (std::size_t i = surge.window; i < log.rows.size(); ++i) {
    std::vector<double> window;
    for (std::size_t k = i - surge.window; k < i; ++k)
      window.push_back(static_cast<double>(log.rows[k].mined_total));
    std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2),
                     window.end());
    double median = window[window.size() / 2];
    if (window.size() % 2 == 0) {
      const double lower = *std::max_element(window.begin(),
                                             window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2));
      median = 0.5 * (median + lower);
    }
    const double current = static_cast<double>(log.rows[i].mined_total);
    if (current >= static_cast<double>(surge.min_count) && current > surge.factor * median)
      return log.rows[i].round;
  }
  return log.rows.back().round;
}

MinedPrecision mined_precision(const SimWorld& world, const PredictionBank& bank, std::size_t min_hits) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < world.studies.size(); ++i) by_id.emplace(world.studies[i].case_id, i);
  MinedPrecision mp;
  for (const auto& [key, c] : bank.cases()) {
    const auto slash = key.rfind("/z");
    if (slash == std::string::npos) throw Error(ErrorCode::invalid_argument, "bad image key " + key);
    const auto it = by_id.find(key.substr(0, slash));
    if (it == by_id.end()) throw Error(ErrorCode::not_found, "image key outside the world: " + key);
    const int z = std::stoi(key.substr(slash + 2));
    const auto truth = lesion_boxes(world.studies[it->second], z);
    for (const auto& e : c.entries) {
      if (e.origin != EntryOrigin::mined || e.match_count() < min_hits) continue;
      ++mp.selected;
      if (max_iou(e.box, truth) >= 0.5) ++mp.correct;
    }
  }
  return mp;
}

}  // namespace explora::sim
