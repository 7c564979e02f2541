#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ppgfm/preprocess.hpp"

namespace ppgfm {

/// One detected beat. Sample ranges are half-open: the pre-systolic phase is
/// [onset, sys), the post-systolic phase [sys, end).
struct BeatMarkers {
  int64_t onset = 0;
  int64_t sys = 0;
  std::optional<int64_t> notch;
  int64_t end = 0;  // exclusive
};

struct MorphologyLabels {
  double svri = 0.0;
  std::optional<double> ipa;
  double sqi = 0.0;
  int svri_bin = -1;  // unset until binned
};

/// Quantile bin edges for sVRI discretization; b-1 strictly ascending edges.
struct BinEdges {
  int b = 8;
  std::vector<double> edges;
};

/// Systolic-peak picking: local maxima above the 75th amplitude percentile,
/// greedily thinned to a minimum spacing of 60/220 s. Onsets are the minima
/// between consecutive peaks; beats truncated at the segment boundary or
/// longer than 60/30 s are discarded. An empty result means no beats.
std::vector<BeatMarkers> detect_beats(const Segment& segment);

/// First local minimum between sys + 0.1*beat_len and end - 0.1*beat_len,
/// measured at beat scale (the sample must undercut a +/- beat_len/25
/// window, so single-sample noise dips do not qualify); absence is a value,
/// not an error.
std::optional<int64_t> detect_notch(const Segment& segment, const BeatMarkers& beat);

/// Ratio of post- to pre-systolic mean over half-open ranges. The caller is
/// responsible for passing a beat whose values are positive (see
/// segment_morphology); throws on a zero pre-systolic mean.
double svri(const std::vector<double>& values, const BeatMarkers& beat);

/// Trapezoidal systolic area [onset, notch] over diastolic area [notch, end).
/// Values must be positive; throws on zero diastolic area.
double ipa(const std::vector<double>& values, const BeatMarkers& beat, int64_t notch);

/// Mean skewness over non-overlapping full 5-second windows, with biased
/// central moments normalized by the window length.
double sqi(const Segment& segment);
double sqi(const std::vector<double>& values, double fs_hz);

/// Per-beat sVRI/IPA averaged across the segment's detected beats (each beat
/// shifted positive by -min + 1e-6 * range first); IPA reported only when at
/// least half of the beats have a notch; SQI over the whole segment.
/// nullopt when no beats are found.
std::optional<MorphologyLabels> segment_morphology(const Segment& segment);

/// Quantile binning: edges at the k/b quantiles of the fitted values.
/// Requires at least b distinct values.
BinEdges fit_bins(const std::vector<double>& svri_values, int b = 8);

/// Out-of-range values clamp into the end bins; every real maps to a bin.
int assign_bin(double v, const BinEdges& edges);

enum class PermStat { mean_diff, median_diff };
enum class PermMode { sampled, exhaustive };

/// Two-sided permutation test on |stat(a) - stat(b)|. Sampled mode returns
/// (1 + #{|perm| >= |obs|}) / (n_perm + 1); exhaustive mode enumerates every
/// split of the pooled sample (small n only) and returns the exact fraction.
double permutation_test(const std::vector<double>& group_a,
                        const std::vector<double>& group_b, PermStat stat,
                        int n_perm = 1000, uint64_t seed = 0,
                        PermMode mode = PermMode::sampled);

}  // namespace ppgfm
