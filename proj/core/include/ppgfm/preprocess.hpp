#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppgfm/waveform.hpp"

namespace ppgfm {

/// One preprocessed window: filtered, quality-checked, z-scored and
/// resampled to the target rate.
struct Segment {
  std::vector<float> values;
  std::string subject_id;
  int64_t index = 0;  // window index within the source record
  double fs_hz = 125.0;
};

/// Bandpass design parameters. The cutoffs are the -3 dB edges of the
/// designed response; the Chebyshev-II stopband floor sits at
/// stopband_atten_db beyond the transition bands.
struct FilterSpec {
  int order = 4;  // analog lowpass prototype order
  double low_cut_hz = 0.5;
  double high_cut_hz = 12.0;
  double stopband_atten_db = 40.0;
};

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;  // denominator, a0 normalized to 1
};

/// Chebyshev type II bandpass as second-order sections: analog prototype,
/// -3 dB rescale, lowpass-to-bandpass transform, bilinear transform with
/// prewarped edges.
std::vector<Biquad> design_cheby2_bandpass(double fs_hz, const FilterSpec& spec);

/// Zero-phase (forward-backward) SOS filtering with odd-reflection padding
/// and steady-state initial conditions. Output length equals input length.
std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x, int64_t pad_len);

/// Zero-phase bandpass per `spec`. Requires fs > 2 * high_cut and an input
/// longer than 3x the prototype order.
std::vector<double> bandpass_filter(const std::vector<double>& x, double fs_hz,
                                    const FilterSpec& spec);

/// Non-overlapping windows of window_s seconds; the trailing remainder is
/// discarded. Errors if the record is shorter than one window.
std::vector<std::vector<double>> segment_record(const PpgRecord& record,
                                                double window_s = 10.0);

/// Fraction of samples lying in runs of >= min_run samples whose consecutive
/// absolute differences stay below eps.
double flatline_fraction(const std::vector<double>& window, double eps,
                         int64_t min_run = 5);

/// Z-score with population statistics; throws on (near-)zero variance so the
/// caller can drop the segment.
std::vector<double> zscore(const std::vector<double>& window,
                           double eps_std = 1e-8);

struct PreprocessConfig {
  double window_s = 10.0;
  double flat_threshold = 0.25;
  double flat_eps_scale = 1e-6;  // eps = scale * (max - min) of the window
  int64_t flat_min_run = 5;
  double target_hz = 125.0;
  double eps_std = 1e-8;
  FilterSpec filter;
};

struct DropReport {
  std::string subject_id;
  int64_t windows_total = 0;
  int64_t dropped_flat = 0;
  int64_t dropped_zero_var = 0;
  int64_t emitted = 0;
};

struct PreprocessResult {
  std::vector<Segment> segments;
  DropReport report;
};

/// Full cleaning pipeline: bandpass -> window -> flatline rejection (judged
/// on the raw window, since zero-phase filtering rings through flat
/// stretches) -> z-score -> resample to target rate. Resampling perturbs the
/// moments slightly, so the z-score is reapplied afterwards to keep exact
/// zero-mean/unit-std output.
PreprocessResult preprocess_pipeline(const PpgRecord& record,
                                     const PreprocessConfig& config = {});

}  // namespace ppgfm
