#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ppgfm {

enum class ContrastiveMode { participant, morphology };

/// Per-transform application probabilities and intensity ranges. The
/// morphology mode restricts itself to the shape-preserving set (crop and
/// Gaussian noise); validate() enforces that.
struct AugmentConfig {
  ContrastiveMode mode = ContrastiveMode::participant;

  double crop_prob = 0.0;
  double crop_keep_lo = 0.5, crop_keep_hi = 1.0;

  double noise_prob = 0.0;
  double noise_sigma_lo = 0.01, noise_sigma_hi = 0.1;

  double flip_prob = 0.0;
  double negate_prob = 0.0;

  double scale_prob = 0.0;
  double scale_lo = 0.66, scale_hi = 1.5;

  /// cropping 0.50, negation 0.20, flipping 0.20, scaling 0.40, noise off.
  static AugmentConfig participant_defaults();
  /// cropping 0.25 and Gaussian noise 0.25 only.
  static AugmentConfig morphology_defaults();

  void validate() const;
};

/// Contiguous sub-window of a uniformly drawn keep fraction at a uniform
/// offset, stretched back to the original length by windowed-sinc resampling.
std::vector<double> random_crop(const std::vector<double>& x, double keep_lo,
                                double keep_hi, std::mt19937_64& rng);

std::vector<double> gaussian_noise(const std::vector<double>& x, double sigma_lo,
                                   double sigma_hi, std::mt19937_64& rng);

std::vector<double> time_flip(const std::vector<double>& x);

std::vector<double> negate(const std::vector<double>& x);

std::vector<double> magnitude_scale(const std::vector<double>& x, double lo,
                                    double hi, std::mt19937_64& rng);

/// Apply each enabled transform independently with its probability, in fixed
/// order: crop, noise, flip, negate, scale. Output length equals input
/// length; deterministic given the RNG state.
std::vector<double> apply_pipeline(const std::vector<double>& x,
                                   const AugmentConfig& config,
                                   std::mt19937_64& rng);

}  // namespace ppgfm
