#include "ppgfm/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ppgfm/stats.hpp"

namespace ppgfm {

namespace {

constexpr double kMaxHeartRateBpm = 220.0;
constexpr double kMinHeartRateBpm = 30.0;

std::vector<double> to_double(const Segment& segment) {
  return std::vector<double>(segment.values.begin(), segment.values.end());
}

double trapezoid_area(const std::vector<double>& x, int64_t from, int64_t to_excl) {
  double area = 0.0;
  for (int64_t i = from; i + 1 < to_excl; ++i)
    area += 0.5 * (x[static_cast<size_t>(i)] + x[static_cast<size_t>(i + 1)]);
  return area;
}

}  // namespace

std::vector<BeatMarkers> detect_beats(const Segment& segment) {
  const auto x = to_double(segment);
  const int64_t n = static_cast<int64_t>(x.size());
  if (n < static_cast<int64_t>(2.0 * segment.fs_hz))
    throw std::invalid_argument("detect_beats: segment shorter than 2 s");

  const auto min_dist =
      static_cast<int64_t>(std::floor(60.0 / kMaxHeartRateBpm * segment.fs_hz));
  const auto max_beat_len =
      static_cast<int64_t>(std::ceil(60.0 / kMinHeartRateBpm * segment.fs_hz));
  // One standard deviation above the mean keeps systolic peaks and rejects
  // dicrotic peaks, which stay well under the mean + sigma line even for
  // deep notches.
  const double mu = mean_of(x);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  const double height = mu + std::sqrt(var / static_cast<double>(n));

  std::vector<int64_t> candidates;
  for (int64_t i = 1; i + 1 < n; ++i) {
    if (x[static_cast<size_t>(i)] <= height) continue;
    if (x[static_cast<size_t>(i)] > x[static_cast<size_t>(i - 1)] &&
        x[static_cast<size_t>(i)] >= x[static_cast<size_t>(i + 1)])
      candidates.push_back(i);
  }

  // Keep the tallest peaks first, suppressing anything within min_dist.
  std::sort(candidates.begin(), candidates.end(), [&](int64_t a, int64_t b) {
    if (x[static_cast<size_t>(a)] != x[static_cast<size_t>(b)])
      return x[static_cast<size_t>(a)] > x[static_cast<size_t>(b)];
    return a < b;
  });
  std::vector<int64_t> peaks;
  for (int64_t c : candidates) {
    bool clear = true;
    for (int64_t p : peaks)
      if (std::abs(p - c) < min_dist) {
        clear = false;
        break;
      }
    if (clear) peaks.push_back(c);
  }
  std::sort(peaks.begin(), peaks.end());
  if (peaks.size() < 2) return {};

  // Onset of each beat = minimum between the previous peak and this one.
  std::vector<int64_t> onsets(peaks.size());
  for (size_t k = 0; k < peaks.size(); ++k) {
    const int64_t lo = k == 0 ? 0 : peaks[k - 1];
    int64_t best = lo;
    for (int64_t i = lo; i < peaks[k]; ++i)
      if (x[static_cast<size_t>(i)] < x[static_cast<size_t>(best)]) best = i;
    onsets[k] = best;
  }

  std::vector<BeatMarkers> beats;
  for (size_t k = 0; k + 1 < peaks.size(); ++k) {
    BeatMarkers b;
    b.onset = onsets[k];
    b.sys = peaks[k];
    b.end = onsets[k + 1];
    if (b.onset == 0) continue;  // possibly truncated at the left boundary
    if (b.end - b.onset > max_beat_len) continue;
    if (b.sys - b.onset < 2 || b.end - b.sys < 2) continue;
    beats.push_back(b);
  }
  return beats;
}

std::optional<int64_t> detect_notch(const Segment& segment, const BeatMarkers& beat) {
  const auto raw = to_double(segment);
  const int64_t n = static_cast<int64_t>(raw.size());
  const int64_t beat_len = beat.end - beat.onset;

  // Centered moving average at ~2% of the beat; takes the sample noise out
  // of the minimum search without moving the notch materially.
  const int64_t half = std::max<int64_t>(1, beat_len / 50);
  std::vector<double> x(raw.size());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t a = std::max<int64_t>(0, i - half);
    const int64_t b = std::min<int64_t>(n - 1, i + half);
    double s = 0.0;
    for (int64_t j = a; j <= b; ++j) s += raw[static_cast<size_t>(j)];
    x[static_cast<size_t>(i)] = s / static_cast<double>(b - a + 1);
  }

  const auto margin = static_cast<int64_t>(std::ceil(0.1 * static_cast<double>(beat_len)));
  const int64_t lo = std::max<int64_t>(beat.sys + margin, 0);
  const int64_t hi = std::min<int64_t>(beat.end - margin, n);
  // Local minimum at beat scale: the sample must undercut everything within
  // +/- w samples. A single-sample dip riding on noise fails the window test,
  // and a monotone tail never satisfies the strict neighbor drops.
  const int64_t w = std::max<int64_t>(2, beat_len / 25);
  for (int64_t i = lo; i < hi; ++i) {
    if (i - w < 0 || i + w >= n) continue;
    bool is_min = x[static_cast<size_t>(i)] < x[static_cast<size_t>(i - w)] &&
                  x[static_cast<size_t>(i)] < x[static_cast<size_t>(i + w)];
    for (int64_t j = i - w; is_min && j <= i + w; ++j)
      is_min = x[static_cast<size_t>(i)] <= x[static_cast<size_t>(j)];
    if (is_min) return i;
  }
  return std::nullopt;
}

double svri(const std::vector<double>& values, const BeatMarkers& beat) {
  if (!(beat.onset < beat.sys && beat.sys < beat.end))
    throw std::invalid_argument("svri: invalid beat markers");
  double pre = 0.0, post = 0.0;
  for (int64_t i = beat.onset; i < beat.sys; ++i) pre += values[static_cast<size_t>(i)];
  for (int64_t i = beat.sys; i < beat.end; ++i) post += values[static_cast<size_t>(i)];
  pre /= static_cast<double>(beat.sys - beat.onset);
  post /= static_cast<double>(beat.end - beat.sys);
  if (std::abs(pre) < 1e-300) throw std::domain_error("svri: zero pre-systolic mean");
  return post / pre;
}

double ipa(const std::vector<double>& values, const BeatMarkers& beat, int64_t notch) {
  if (!(beat.onset < notch && notch < beat.end))
    throw std::invalid_argument("ipa: notch outside beat");
  const double systolic = trapezoid_area(values, beat.onset, notch + 1);
  const double diastolic = trapezoid_area(values, notch, beat.end);
  if (std::abs(diastolic) < 1e-300) throw std::domain_error("ipa: zero diastolic area");
  return systolic / diastolic;
}

double sqi(const std::vector<double>& values, double fs_hz) {
  const auto win = static_cast<int64_t>(std::llround(5.0 * fs_hz));
  const int64_t n = static_cast<int64_t>(values.size());
  if (n < win) throw std::invalid_argument("sqi: segment shorter than one 5 s window");
  const int64_t n_windows = n / win;
  double total = 0.0;
  for (int64_t w = 0; w < n_windows; ++w) {
    const double* p = values.data() + w * win;
    double mu = 0.0;
    for (int64_t i = 0; i < win; ++i) mu += p[i];
    mu /= static_cast<double>(win);
    double m2 = 0.0, m3 = 0.0;
    for (int64_t i = 0; i < win; ++i) {
      const double d = p[i] - mu;
      m2 += d * d;
      m3 += d * d * d;
    }
    m2 /= static_cast<double>(win);
    m3 /= static_cast<double>(win);
    if (!(m2 > 0.0)) throw std::domain_error("sqi: zero second moment in window");
    total += m3 / std::pow(m2, 1.5);
  }
  return total / static_cast<double>(n_windows);
}

double sqi(const Segment& segment) { return sqi(to_double(segment), segment.fs_hz); }

std::optional<MorphologyLabels> segment_morphology(const Segment& segment) {
  const auto beats = detect_beats(segment);
  if (beats.empty()) return std::nullopt;
  const auto x = to_double(segment);

  double svri_sum = 0.0;
  double ipa_sum = 0.0;
  int64_t ipa_count = 0;
  for (const auto& beat : beats) {
    // Shift the beat positive so ratio and area semantics hold on z-scored
    // data; the relative epsilon keeps both metrics scale-invariant.
    const auto first = x.begin() + beat.onset;
    const auto last = x.begin() + beat.end;
    const auto [mn, mx] = std::minmax_element(first, last);
    const double range = *mx - *mn;
    const double shift = -*mn + (range > 0.0 ? 1e-6 * range : 1.0);
    std::vector<double> shifted(x.size(), 0.0);
    for (int64_t i = beat.onset; i < beat.end; ++i)
      shifted[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + shift;

    svri_sum += svri(shifted, beat);
    if (auto notch = detect_notch(segment, beat)) {
      ipa_sum += ipa(shifted, beat, *notch);
      ++ipa_count;
    }
  }

  MorphologyLabels labels;
  labels.svri = svri_sum / static_cast<double>(beats.size());
  if (2 * ipa_count >= static_cast<int64_t>(beats.size()))
    labels.ipa = ipa_sum / static_cast<double>(ipa_count);
  labels.sqi = sqi(segment);
  return labels;
}

BinEdges fit_bins(const std::vector<double>& svri_values, int b) {
  if (b < 2) throw std::invalid_argument("fit_bins: need at least 2 bins");
  std::vector<double> sorted = svri_values;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct =
      static_cast<int>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  if (distinct < b)
    throw std::invalid_argument("fit_bins: fewer distinct values than bins");

  std::vector<double> full = svri_values;
  std::sort(full.begin(), full.end());
  BinEdges edges;
  edges.b = b;
  for (int k = 1; k < b; ++k)
    edges.edges.push_back(quantile_sorted(full, static_cast<double>(k) / b));
  for (size_t i = 1; i < edges.edges.size(); ++i)
    if (!(edges.edges[i] > edges.edges[i - 1]))
      throw std::invalid_argument("fit_bins: duplicate quantile edges");
  return edges;
}

int assign_bin(double v, const BinEdges& edges) {
  int bin = 0;
  for (double e : edges.edges)
    if (v > e) ++bin;
  return bin;
}

double permutation_test(const std::vector<double>& group_a,
                        const std::vector<double>& group_b, PermStat stat,
                        int n_perm, uint64_t seed, PermMode mode) {
  if (group_a.empty() || group_b.empty())
    throw std::invalid_argument("permutation_test: empty group");

  auto statistic = [stat](std::vector<double> a, std::vector<double> b) {
    if (stat == PermStat::mean_diff) return mean_of(a) - mean_of(b);
    return median_of(std::move(a)) - median_of(std::move(b));
  };

  const double observed = std::abs(statistic(group_a, group_b));
  const double tol = 1e-12 * (1.0 + observed);

  std::vector<double> pool = group_a;
  pool.insert(pool.end(), group_b.begin(), group_b.end());
  const size_t na = group_a.size();
  const size_t n = pool.size();

  if (mode == PermMode::exhaustive) {
    if (n > 24)
      throw std::invalid_argument("permutation_test: pooled sample too large to enumerate");
    // Walk every na-subset of the pool as group A.
    std::vector<size_t> idx(na);
    std::iota(idx.begin(), idx.end(), 0);
    int64_t total = 0, extreme = 0;
    while (true) {
      std::vector<bool> in_a(n, false);
      for (size_t i : idx) in_a[i] = true;
      std::vector<double> a, b;
      for (size_t i = 0; i < n; ++i) (in_a[i] ? a : b).push_back(pool[i]);
      ++total;
      if (std::abs(statistic(std::move(a), std::move(b))) >= observed - tol) ++extreme;
      // next combination
      int64_t i = static_cast<int64_t>(na) - 1;
      while (i >= 0 && idx[static_cast<size_t>(i)] == n - na + static_cast<size_t>(i)) --i;
      if (i < 0) break;
      ++idx[static_cast<size_t>(i)];
      for (size_t j = static_cast<size_t>(i) + 1; j < na; ++j) idx[j] = idx[j - 1] + 1;
    }
    return static_cast<double>(extreme) / static_cast<double>(total);
  }

  std::mt19937_64 rng(seed);
  int64_t extreme = 0;
  std::vector<double> shuffled = pool;
  for (int r = 0; r < n_perm; ++r) {
    for (size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<size_t> pick(0, i);
      std::swap(shuffled[i], shuffled[pick(rng)]);
    }
    std::vector<double> a(shuffled.begin(), shuffled.begin() + static_cast<int64_t>(na));
    std::vector<double> b(shuffled.begin() + static_cast<int64_t>(na), shuffled.end());
    if (std::abs(statistic(std::move(a), std::move(b))) >= observed - tol) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(n_perm + 1);
}

}  // namespace ppgfm
