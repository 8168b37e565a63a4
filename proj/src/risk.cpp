#include "explora/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "explora/error.hpp"

namespace explora::risk {

double cross_entropy(double score, int target) {
  const double s = std::clamp(score, kScoreClamp, 1.0 - kScoreClamp);
  return target > 0 ? -std::log(s) : -std::log1p(-s);
}

double cross_entropy_grad(double score, int target) {
  if (score < kScoreClamp || score > 1.0 - kScoreClamp) return 0.0;
  return target > 0 ? -1.0 / score : 1.0 / (1.0 - score);
}

double Objective::value(std::span<const double> scores) const {
  double total = 0.0;
  for (const auto& t : terms) total += t.weight * cross_entropy(scores[t.index], t.target);
  return total;
}

std::vector<double> Objective::score_gradient(std::span<const double> scores) const {
  std::vector<double> g(scores.size(), 0.0);
  for (const auto& t : terms) g[t.index] += t.weight * cross_entropy_grad(scores[t.index], t.target);
  return g;
}

std::vector<int> Objective::targets(std::size_t n) const {
  std::vector<int> out(n, 0);
  for (const auto& t : terms) out[t.index] = t.target;
  return out;
}

std::vector<double> score_all(std::span<const Sample> batch, const Scorer& scorer) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(scorer(s.features));
  return out;
}

namespace {

struct Group {
  std::vector<std::size_t> members;
  int target;
  double explicit_prior;
  const char* name;
};

// Appends pi_g * mean-CE(group) for every group. In empirical mode pi_g is
// |g| / (total included), which makes each weight 1 / total.
Objective assemble(std::vector<Group> groups, PriorMode mode) {
  Objective obj;
  std::size_t included = 0;
  for (const auto& g : groups) included += g.members.size();
  for (const auto& g : groups) {
    if (g.members.empty()) continue;
    const double prior = mode == PriorMode::empirical
                             ? static_cast<double>(g.members.size()) / static_cast<double>(included)
                             : g.explicit_prior;
    const double w = prior / static_cast<double>(g.members.size());
    for (std::size_t i : g.members) obj.terms.push_back({i, g.target, w});
  }
  return obj;
}

void check_length(std::size_t batch, std::size_t other, const char* what) {
  if (batch != other)
    throw Error(ErrorCode::invalid_argument,
                std::string(what) + " length does not match the batch size");
}

}  // namespace

Objective pn_objective(std::span<const Sample> batch, const RiskConfig& config) {
  Group pos{{}, +1, config.pi_p, "positive"};
  Group neg{{}, -1, config.pi_n, "negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].latent_label)
      throw Error(ErrorCode::invalid_argument, "PN risk needs latent labels on every sample");
    (*batch[i].latent_label > 0 ? pos : neg).members.push_back(i);
  }
  std::vector<std::string> warnings;
  if (pos.members.empty()) warnings.push_back("PN risk: no positive samples, term contributes 0");
  if (neg.members.empty()) warnings.push_back("PN risk: no negative samples, term contributes 0");
  Objective obj = assemble({pos, neg}, config.prior_mode);
  obj.warnings = std::move(warnings);
  return obj;
}

Objective scar_objective(std::span<const Sample> batch, double pi_p) {
  if (!(pi_p >= 0.0 && pi_p <= 1.0)) throw Error(ErrorCode::invalid_argument, "pi_p must lie in [0, 1]");
  std::vector<std::size_t> labeled, unlabeled;
  for (std::size_t i = 0; i < batch.size(); ++i)
    (batch[i].status == LabelStatus::labeled_positive ? labeled : unlabeled).push_back(i);
  if (labeled.empty())
    throw Error(ErrorCode::invalid_argument, "SCAR risk is undefined without labeled samples");

  Objective obj;
  const double wl = pi_p / static_cast<double>(labeled.size());
  for (std::size_t i : labeled) obj.terms.push_back({i, +1, wl});
  if (unlabeled.empty()) {
    obj.warnings.push_back("SCAR risk: no unlabeled samples, term contributes 0");
  } else {
    const double wu = 1.0 / static_cast<double>(unlabeled.size());
    for (std::size_t i : unlabeled) obj.terms.push_back({i, -1, wu});
  }
  for (std::size_t i : labeled) obj.terms.push_back({i, -1, -wl});
  return obj;
}

Objective indicator_objective(std::span<const Sample> batch, std::span<const double> indicator,
                              const RiskConfig& config) {
  check_length(batch.size(), indicator.size(), "indicator");
  Group l{{}, +1, config.pi_l, "labeled"};
  Group up{{}, +1, config.pi_u_pos, "unlabeled positive"};
  Group un{{}, -1, config.pi_u_neg, "unlabeled negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive)
      l.members.push_back(i);
    else
      (indicator[i] >= config.gamma_sep ? up : un).members.push_back(i);
  }
  return assemble({l, up, un}, config.prior_mode);
}

Objective sampling_objective(std::span<const Sample> batch, std::span<const double> distances,
                             double gamma_dist, const RiskConfig& config) {
  check_length(batch.size(), distances.size(), "distances");
  Group l{{}, +1, config.pi_l, "labeled"};
  Group un{{}, -1, config.pi_u_neg, "unlabeled negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive)
      l.members.push_back(i);
    else if (distances[i] < gamma_dist)
      un.members.push_back(i);
  }
  return assemble({l, un}, config.prior_mode);
}

Objective exploratory_objective(std::span<const Sample> batch, std::span<const double> teacher_scores,
                                double tau, const RiskConfig& config) {
  check_length(batch.size(), teacher_scores.size(), "teacher scores");
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::invalid_argument, "tau must lie in (0, 1]");
  Group l{{}, +1, config.pi_p, "labeled"};
  Group up{{}, +1, config.pi_u_pos, "pseudo positive"};
  Group un{{}, -1, config.pi_u_neg, "unlabeled negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive)
      l.members.push_back(i);
    else
      (teacher_scores[i] >= tau ? up : un).members.push_back(i);
  }
  return assemble({l, up, un}, config.prior_mode);
}

Objective retrain_objective(std::span<const Sample> batch, std::span<const char> selected,
                            RetrainMode mode, const RiskConfig& config) {
  check_length(batch.size(), selected.size(), "selection");
  Group l{{}, +1, config.pi_p, "labeled"};
  Group up{{}, +1, config.pi_u_pos, "selected"};
  Group un{{}, -1, config.pi_u_neg, "unlabeled negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive)
      l.members.push_back(i);
    else if (!selected[i])
      un.members.push_back(i);
    else if (mode == RetrainMode::adding)
      up.members.push_back(i);
  }
  return assemble({l, up, un}, config.prior_mode);
}

Objective recalibrated_objective(std::span<const Sample> batch, std::span<const double> scores,
                                 double flip_threshold, const RiskConfig& config) {
  check_length(batch.size(), scores.size(), "scores");
  if (!(flip_threshold > 0.0 && flip_threshold < 1.0))
    throw Error(ErrorCode::invalid_argument, "flip_threshold must lie in (0, 1)");
  const double limit = -std::log1p(-flip_threshold);
  Group l{{}, +1, config.pi_p, "labeled"};
  Group flipped{{}, +1, config.pi_u_pos, "flipped"};
  Group un{{}, -1, config.pi_u_neg, "unlabeled negative"};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive)
      l.members.push_back(i);
    else
      (cross_entropy(scores[i], -1) > limit ? flipped : un).members.push_back(i);
  }
  return assemble({l, flipped, un}, config.prior_mode);
}

std::vector<double> nearest_labeled_distances(std::span<const Sample> batch) {
  std::vector<double> out(batch.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].status == LabelStatus::labeled_positive) {
      out[i] = 0.0;
      continue;
    }
    for (const auto& other : batch) {
      if (other.status != LabelStatus::labeled_positive) continue;
      if (other.features.size() != batch[i].features.size())
        throw Error(ErrorCode::invalid_argument, "feature dimensions differ within the batch");
      double d2 = 0.0;
      for (std::size_t k = 0; k < other.features.size(); ++k) {
        const double d = other.features[k] - batch[i].features[k];
        d2 += d * d;
      }
      out[i] = std::min(out[i], std::sqrt(d2));
    }
  }
  return out;
}

double risk_pn(std::span<const Sample> batch, std::span<const double> scores, const RiskConfig& config) {
  check_length(batch.size(), scores.size(), "scores");
  return pn_objective(batch, config).value(scores);
}

double risk_scar(std::span<const Sample> batch, std::span<const double> scores, double pi_p) {
  check_length(batch.size(), scores.size(), "scores");
  return scar_objective(batch, pi_p).value(scores);
}

double risk_sampling(std::span<const Sample> batch, std::span<const double> scores,
                     std::span<const double> distances, double gamma_dist, const RiskConfig& config) {
  check_length(batch.size(), scores.size(), "scores");
  return sampling_objective(batch, distances, gamma_dist, config).value(scores);
}

double loss_exploratory(std::span<const Sample> batch, std::span<const double> student_scores,
                        std::span<const double> teacher_scores, double tau, const RiskConfig& config) {
  check_length(batch.size(), student_scores.size(), "student scores");
  return exploratory_objective(batch, teacher_scores, tau, config).value(student_scores);
}

double loss_retrain(std::span<const Sample> batch, std::span<const double> scores,
                    std::span<const char> selected, RetrainMode mode, const RiskConfig& config) {
  check_length(batch.size(), scores.size(), "scores");
  return retrain_objective(batch, selected, mode, config).value(scores);
}

double loss_recalibrated(std::span<const Sample> batch, std::span<const double> scores,
                         double flip_threshold, const RiskConfig& config) {
  return recalibrated_objective(batch, scores, flip_threshold, config).value(scores);
}

}  // namespace explora::risk
