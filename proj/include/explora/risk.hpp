#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace explora::risk {

enum class LabelStatus { labeled_positive, unlabeled };

struct Sample {
  std::vector<double> features;
  LabelStatus status = LabelStatus::unlabeled;
  /// +1 / -1, known only in simulation. Estimators other than the PN oracle never read it.
  std::optional<int> latent_label;
};

enum class PriorMode { explicit_priors, empirical };

/// Class priors and thresholds. In empirical mode every prior is the
/// within-batch frequency of its group, so each objective reduces to the plain
/// mean cross-entropy over the samples it includes.
struct RiskConfig {
  PriorMode prior_mode = PriorMode::empirical;
  double pi_p = 0.5;
  double pi_n = 0.5;
  double pi_l = 0.5;
  double pi_u = 0.5;
  double pi_u_pos = 0.0;
  double pi_u_neg = 0.5;
  double tau = 0.9;        // confidence filter
  double gamma_sep = 0.5;  // indicator threshold for the separable risk
};

inline constexpr double kScoreClamp = 1e-12;

/// -log(s) for target +1, -log(1-s) for target -1, with s clamped to
/// [1e-12, 1 - 1e-12].
double cross_entropy(double score, int target);
/// d cross_entropy / d score; zero where the clamp is active.
double cross_entropy_grad(double score, int target);

/// One weighted cross-entropy contribution. A sample may appear in several
/// terms and weights may be negative (the SCAR correction term).
struct LossTerm {
  std::size_t index = 0;
  int target = 1;
  double weight = 0.0;
};

struct Objective {
  std::vector<LossTerm> terms;
  std::vector<std::string> warnings;

  double value(std::span<const double> scores) const;
  /// d value / d score_i for every sample (length = scores.size()).
  std::vector<double> score_gradient(std::span<const double> scores) const;
  /// Target assigned to each sample, 0 when the sample is excluded. Only
  /// meaningful for objectives with one term per sample.
  std::vector<int> targets(std::size_t n) const;
};

using Scorer = std::function<double(std::span<const double>)>;
std::vector<double> score_all(std::span<const Sample> batch, const Scorer& scorer);

/// Positive-negative empirical risk over latent labels.
Objective pn_objective(std::span<const Sample> batch, const RiskConfig& config);

/// Unbiased risk under selected-completely-at-random labeling. Throws when
/// the batch has no labeled sample. Can be negative on finite samples.
Objective scar_objective(std::span<const Sample> batch, double pi_p);

/// Risk with an indicator g: unlabeled samples with g >= gamma_sep are
/// positives, the rest negatives.
Objective indicator_objective(std::span<const Sample> batch, std::span<const double> indicator,
                              const RiskConfig& config);

/// Labeled positives plus unlabeled negatives restricted to samples whose
/// distance to the nearest labeled object is below gamma_dist.
Objective sampling_objective(std::span<const Sample> batch, std::span<const double> distances,
                             double gamma_dist, const RiskConfig& config);

/// Unlabeled samples whose teacher score reaches tau become positives.
Objective exploratory_objective(std::span<const Sample> batch, std::span<const double> teacher_scores,
                                double tau, const RiskConfig& config);

enum class RetrainMode { adding, ignoring };

/// Selected unlabeled samples become positives (adding) or are dropped from
/// the loss (ignoring); other unlabeled samples are negatives.
Objective retrain_objective(std::span<const Sample> batch, std::span<const char> selected,
                            RetrainMode mode, const RiskConfig& config);

inline constexpr double kDefaultFlipThreshold = 0.95;

/// Loss re-calibration baseline: an unlabeled sample whose background loss
/// exceeds -log(1 - flip_threshold) is trained as foreground.
Objective recalibrated_objective(std::span<const Sample> batch, std::span<const double> scores,
                                 double flip_threshold, const RiskConfig& config);

/// Euclidean feature-space distance from each sample to its nearest labeled
/// sample (infinity when there is none; 0 for labeled samples).
std::vector<double> nearest_labeled_distances(std::span<const Sample> batch);

// Convenience evaluations.
double risk_pn(std::span<const Sample> batch, std::span<const double> scores, const RiskConfig& config);
double risk_scar(std::span<const Sample> batch, std::span<const double> scores, double pi_p);
double risk_sampling(std::span<const Sample> batch, std::span<const double> scores,
                     std::span<const double> distances, double gamma_dist, const RiskConfig& config);
double loss_exploratory(std::span<const Sample> batch, std::span<const double> student_scores,
                        std::span<const double> teacher_scores, double tau, const RiskConfig& config);
double loss_retrain(std::span<const Sample> batch, std::span<const double> scores,
                    std::span<const char> selected, RetrainMode mode, const RiskConfig& config);
double loss_recalibrated(std::span<const Sample> batch, std::span<const double> scores,
                         double flip_threshold, const RiskConfig& config);

}  // namespace explora::risk
