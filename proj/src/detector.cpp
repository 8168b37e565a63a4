#include "explora/detector.hpp"

#include <cmath>

#include "explora/error.hpp"

namespace explora::sim {

DetectorParams DetectorParams::random(std::size_t input_dim, std::size_t hidden, Rng& rng, double output_bias) {
  if (input_dim == 0 || hidden == 0)
    throw Error(ErrorCode::invalid_argument, "detector dimensions must be positive");
  DetectorParams p{input_dim, hidden, std::vector<double>(parameter_count(input_dim, hidden), 0.0)};
  const double a1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
  std::uniform_real_distribution<double> u1(-a1, a1);
  for (std::size_t i = 0; i < hidden * input_dim; ++i) p.values[i] = u1(rng);
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  std::uniform_real_distribution<double> u2(-a2, a2);
  const std::size_t w2 = hidden * input_dim + hidden;
  for (std::size_t j = 0; j < hidden; ++j) p.values[w2 + j] = u2(rng);
  p.values[w2 + hidden] = output_bias;
  return p;
}

double DetectorParams::logit(std::span<const double> x) const {
  if (x.size() != input_dim) throw Error(ErrorCode::invalid_argument, "feature dimension mismatch");
  const double* w1 = values.data();
  const double* b1 = w1 + hidden * input_dim;
  const double* w2 = b1 + hidden;
  double z = w2[hidden];
  for (std::size_t j = 0; j < hidden; ++j) {
    double a = b1[j];
    const double* row = w1 + j * input_dim;
    for (std::size_t k = 0; k < input_dim; ++k) a += row[k] * x[k];
    z += w2[j] * std::tanh(a);
  }
  return z;
}

double DetectorParams::score(std::span<const double> x) const {
  return 1.0 / (1.0 + std::exp(-logit(x)));
}

void DetectorParams::accumulate_gradient(std::span<const double> x, double dlogit,
                                         std::span<double> grad) const {
  if (x.size() != input_dim || grad.size() != values.size())
    throw Error(ErrorCode::invalid_argument, "gradient buffer shape mismatch");
  const double* w1 = values.data();
  const double* b1 = w1 + hidden * input_dim;
  const double* w2 = b1 + hidden;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + hidden * input_dim;
  double* g_w2 = g_b1 + hidden;
  for (std::size_t j = 0; j < hidden; ++j) {
    double a = b1[j];
    const double* row = w1 + j * input_dim;
    for (std::size_t k = 0; k < input_dim; ++k) a += row[k] * x[k];
    const double h = std::tanh(a);
    g_w2[j] += dlogit * h;
    const double da = dlogit * w2[j] * (1.0 - h * h);
    g_b1[j] += da;
    double* g_row = g_w1 + j * input_dim;
    for (std::size_t k = 0; k < input_dim; ++k) g_row[k] += da * x[k];
  }
  g_w2[hidden] += dlogit;
}

bool DetectorParams::finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

DetectorParams ema_update(const DetectorParams& teacher, const DetectorParams& student, double momentum) {
  if (!teacher.same_shape(student))
    throw Error(ErrorCode::invalid_argument, "EMA update needs identically shaped parameters");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw Error(ErrorCode::invalid_argument, "EMA momentum must lie in [0, 1]");
  DetectorParams out = teacher;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = momentum * teacher.values[i] + (1.0 - momentum) * student.values[i];
  return out;
}

}  // namespace explora::sim
