#include "ppgfm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ppgfm/waveform.hpp"

namespace ppgfm {

AugmentConfig AugmentConfig::participant_defaults() {
  AugmentConfig c;
  c.mode = ContrastiveMode::participant;
  c.crop_prob = 0.50;
  c.negate_prob = 0.20;
  c.flip_prob = 0.20;
  c.scale_prob = 0.40;
  c.noise_prob = 0.0;
  return c;
}

AugmentConfig AugmentConfig::morphology_defaults() {
  AugmentConfig c;
  c.mode = ContrastiveMode::morphology;
  c.crop_prob = 0.25;
  c.noise_prob = 0.25;
  return c;
}

void AugmentConfig::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(crop_prob) || !prob_ok(noise_prob) || !prob_ok(flip_prob) ||
      !prob_ok(negate_prob) || !prob_ok(scale_prob))
    throw std::invalid_argument("augment: probabilities must be in [0,1]");
  if (!(crop_keep_lo > 0.0 && crop_keep_lo <= crop_keep_hi && crop_keep_hi <= 1.0))
    throw std::invalid_argument("augment: crop keep range must lie in (0,1]");
  if (!(noise_sigma_lo >= 0.0 && noise_sigma_lo <= noise_sigma_hi))
    throw std::invalid_argument("augment: bad noise sigma range");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi))
    throw std::invalid_argument("augment: bad scale range");
  if (mode == ContrastiveMode::morphology &&
      (flip_prob > 0.0 || negate_prob > 0.0 || scale_prob > 0.0))
    throw std::invalid_argument(
        "augment: morphology mode allows only crop and gaussian noise");
}

std::vector<double> random_crop(const std::vector<double>& x, double keep_lo,
                                double keep_hi, std::mt19937_64& rng) {
  if (!(keep_lo > 0.0 && keep_lo <= keep_hi && keep_hi <= 1.0))
    throw std::invalid_argument("random_crop: keep range must lie in (0,1]");
  const auto n = static_cast<int64_t>(x.size());
  std::uniform_real_distribution<double> keep_dist(keep_lo, keep_hi);
  const double keep = keep_dist(rng);
  const auto keep_len =
      std::max<int64_t>(2, static_cast<int64_t>(std::llround(keep * static_cast<double>(n))));
  if (keep_len >= n) return x;
  std::uniform_int_distribution<int64_t> offset_dist(0, n - keep_len);
  const int64_t offset = offset_dist(rng);
  std::vector<double> sub(x.begin() + offset, x.begin() + offset + keep_len);
  // Interpreting lengths as rates gives an exact output length of n.
  return resample(sub, static_cast<double>(keep_len), static_cast<double>(n));
}

std::vector<double> gaussian_noise(const std::vector<double>& x, double sigma_lo,
                                   double sigma_hi, std::mt19937_64& rng) {
  if (!(sigma_lo >= 0.0 && sigma_lo <= sigma_hi))
    throw std::invalid_argument("gaussian_noise: bad sigma range");
  std::uniform_real_distribution<double> sigma_dist(sigma_lo, sigma_hi);
  const double sigma = sigma_dist(rng);
  std::vector<double> y = x;
  if (sigma == 0.0) return y;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : y) v += noise(rng);
  return y;
}

std::vector<double> time_flip(const std::vector<double>& x) {
  return std::vector<double>(x.rbegin(), x.rend());
}

std::vector<double> negate(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
  return y;
}

std::vector<double> magnitude_scale(const std::vector<double>& x, double lo,
                                    double hi, std::mt19937_64& rng) {
  if (!(lo > 0.0 && lo <= hi))
    throw std::invalid_argument("magnitude_scale: bad scale range");
  std::uniform_real_distribution<double> scale_dist(lo, hi);
  const double a = scale_dist(rng);
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = a * x[i];
  return y;
}

std::vector<double> apply_pipeline(const std::vector<double>& x,
                                   const AugmentConfig& config,
                                   std::mt19937_64& rng) {
  config.validate();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<double> y = x;
  if (coin(rng) < config.crop_prob)
    y = random_crop(y, config.crop_keep_lo, config.crop_keep_hi, rng);
  if (coin(rng) < config.noise_prob)
    y = gaussian_noise(y, config.noise_sigma_lo, config.noise_sigma_hi, rng);
  if (coin(rng) < config.flip_prob) y = time_flip(y);
  if (coin(rng) < config.negate_prob) y = negate(y);
  if (coin(rng) < config.scale_prob)
    y = magnitude_scale(y, config.scale_lo, config.scale_hi, rng);
  return y;
}

}  // namespace ppgfm
