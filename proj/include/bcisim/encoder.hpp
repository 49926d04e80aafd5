#pragma once

// Synthetic linear-Gaussian neural encoder: n = A * intent + c,
// c ~ N(0, sigma^2 I).

#include "bcisim/random.hpp"
#include "bcisim/types.hpp"

#include <optional>
#include <span>

namespace bcisim {

enum class EncoderSampling { gaussian, rectified };

struct EncoderModel {
  Matrix A;  // n_neurons x d_dof
  double noise_sigma = 0.0;

  Eigen::Index n_neurons() const { return A.rows(); }
  Eigen::Index d_dof() const { return A.cols(); }
};

enum class MismatchMode { none, linear_operator, additive_noise };

/// How the user's true intent departs from the oracle.
struct IntentMismatchSpec {
  MismatchMode mode = MismatchMode::none;
  std::optional<Matrix> op;      // linear_operator: d_dof x d_dof
  double noise_fraction = 0.0;   // additive_noise: 1.0 = noise as large as the oracle

  void validate(Eigen::Index d_dof) const {
    if (noise_fraction < 0.0 || !std::isfinite(noise_fraction)) {
      throw std::invalid_argument("mismatch noise fraction must be >= 0");
    }
    if (mode == MismatchMode::linear_operator) {
      if (!op || op->rows() != d_dof || op->cols() != d_dof || !op->allFinite()) {
        throw std::invalid_argument("linear mismatch needs a finite square operator of size d_dof");
      }
    }
  }
};

/// Entries i.i.d. standard normal, drawn row-major from the stream; rectified
/// mode zeroes the negative ones.
inline EncoderModel sample_encoder(Rng& rng, Eigen::Index n_neurons, Eigen::Index d_dof,
                                   EncoderSampling mode) {
  EncoderModel model;
  model.A.resize(n_neurons, d_dof);
  for (Eigen::Index i = 0; i < n_neurons; ++i) {
    for (Eigen::Index j = 0; j < d_dof; ++j) {
      const double a = standard_normal(rng);
      model.A(i, j) = (mode == EncoderSampling::rectified && a < 0.0) ? 0.0 : a;
    }
  }
  return model;
}

/// Mean over neurons of the empirical (population) variance of row_i . o over
/// the samples. This is the per-neuron signal power used for SNR.
inline double mean_signal_variance(const Matrix& A, std::span<const Vector> samples) {
  const auto m = static_cast<Eigen::Index>(samples.size());
  Matrix signal(A.rows(), m);
  for (Eigen::Index s = 0; s < m; ++s) signal.col(s) = A * samples[static_cast<std::size_t>(s)];
  const Vector mean = signal.rowwise().mean();
  const Matrix centered = signal.colwise() - mean;
  return (centered.rowwise().squaredNorm() / static_cast<double>(m)).mean();
}

/// Sets noise_sigma so that mean per-neuron signal variance / sigma^2 equals
/// target_snr.
inline EncoderModel calibrate_snr(EncoderModel model, std::span<const Vector> intent_samples,
                                  double target_snr) {
  if (intent_samples.empty()) throw std::invalid_argument("empty calibration set");
  if (!(target_snr > 0.0)) throw std::invalid_argument("target snr must be positive");
  const double signal = mean_signal_variance(model.A, intent_samples);
  if (!(signal > 0.0)) throw Error("degenerate calibration set");
  model.noise_sigma = std::sqrt(signal / target_snr);
  return model;
}

inline Vector emit(const EncoderModel& model, const Vector& true_intent, Rng& rng) {
  Vector n = model.A * true_intent;
  if (model.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < n.size(); ++i) n[i] += model.noise_sigma * standard_normal(rng);
  }
  return n;
}

/// Maps the oracle action to the user's true intent. Additive mode always
/// consumes one direction from the stream, even at zero fraction, so runs
/// that differ only in the fraction stay aligned.
inline Vector apply_intent_mismatch(const IntentMismatchSpec& spec, const Vector& oracle_action,
                                    Rng& rng) {
  switch (spec.mode) {
    case MismatchMode::none:
      return oracle_action;
    case MismatchMode::linear_operator:
      return *spec.op * oracle_action;
    case MismatchMode::additive_noise: {
      const Vector u = random_unit_vector(rng, oracle_action.size());
      if (spec.noise_fraction == 0.0) return oracle_action;
      return oracle_action + spec.noise_fraction * oracle_action.norm() * u;
    }
  }
  return oracle_action;
}

/// Deterministic part of the mismatch (used for calibration).
inline Vector apply_intent_transform(const IntentMismatchSpec& spec, const Vector& oracle_action) {
  if (spec.mode == MismatchMode::linear_operator) return *spec.op * oracle_action;
  return oracle_action;
}

}  // namespace bcisim
