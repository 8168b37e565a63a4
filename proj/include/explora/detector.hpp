#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "explora/geometry.hpp"

namespace explora::sim {

/// Two-layer perceptron scorer: score = sigmoid(w2 . tanh(W1 x + b1) + b2).
/// Parameters live in one flat vector so EMA and finite differences can treat
/// them uniformly. Layout: W1 (hidden x input, row-major), b1, w2, b2.
struct DetectorParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<double> values;

  static std::size_t parameter_count(std::size_t input_dim, std::size_t hidden) {
    return hidden * input_dim + 2 * hidden + 1;
  }
  /// Xavier-uniform layers, zero hidden biases. A negative output bias makes
  /// a fresh detector start out quiet (foreground prior).
  static DetectorParams random(std::size_t input_dim, std::size_t hidden, Rng& rng, double output_bias = 0.0);

  double logit(std::span<const double> x) const;
  double score(std::span<const double> x) const;

  /// grad += dlogit * d logit / d params
  void accumulate_gradient(std::span<const double> x, double dlogit, std::span<double> grad) const;

  bool same_shape(const DetectorParams& other) const {
    return input_dim == other.input_dim && hidden == other.hidden &&
           values.size() == other.values.size();
  }
  bool finite() const;

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

/// teacher' = m * teacher + (1 - m) * student, elementwise.
DetectorParams ema_update(const DetectorParams& teacher, const DetectorParams& student, double momentum);

}  // namespace explora::sim
