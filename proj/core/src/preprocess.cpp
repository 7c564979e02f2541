#include "ppgfm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

namespace ppgfm {

namespace {

using cplx = std::complex<double>;

struct Zpk {
  std::vector<cplx> z;
  std::vector<cplx> p;
  double k = 1.0;
};

/// Analog Chebyshev type II lowpass prototype with stopband edge at
/// omega = 1 and unit DC gain.
Zpk cheb2_prototype(int n, double rs_db) {
  if (n < 1) throw std::invalid_argument("filter order must be >= 1");
  const double de = 1.0 / std::sqrt(std::pow(10.0, 0.1 * rs_db) - 1.0);
  const double mu = std::asinh(1.0 / de) / static_cast<double>(n);

  Zpk out;
  for (int i = 0; i < n; ++i) {
    const int m = -n + 1 + 2 * i;
    if (m != 0) {
      const double s = std::sin(static_cast<double>(m) * M_PI / (2.0 * n));
      out.z.push_back(-std::conj(cplx(0.0, 1.0) / s));
    }
    const cplx butter = -std::exp(cplx(0.0, M_PI * static_cast<double>(m) / (2.0 * n)));
    cplx p(std::sinh(mu) * butter.real(), std::cosh(mu) * butter.imag());
    out.p.push_back(1.0 / p);
  }
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (const auto& p : out.p) num *= -p;
  for (const auto& z : out.z) den *= -z;
  out.k = (num / den).real();
  return out;
}

/// Frequency-scale a lowpass zpk by factor c (omega -> omega / c).
void lowpass_scale(Zpk& f, double c) {
  for (auto& z : f.z) z *= c;
  for (auto& p : f.p) p *= c;
  const int degree = static_cast<int>(f.p.size() - f.z.size());
  f.k *= std::pow(c, degree);
}

Zpk lp2bp(const Zpk& lp, double w0, double bw) {
  Zpk out;
  const int degree = static_cast<int>(lp.p.size() - lp.z.size());
  auto transform = [&](const std::vector<cplx>& roots, std::vector<cplx>& dst) {
    for (const auto& r : roots) {
      const cplx s = r * (bw / 2.0);
      const cplx d = std::sqrt(s * s - w0 * w0);
      dst.push_back(s + d);
      dst.push_back(s - d);
    }
  };
  transform(lp.z, out.z);
  transform(lp.p, out.p);
  for (int i = 0; i < degree; ++i) out.z.emplace_back(0.0, 0.0);
  out.k = lp.k * std::pow(bw, degree);
  return out;
}

Zpk bilinear(const Zpk& analog, double fs) {
  Zpk out;
  const double fs2 = 2.0 * fs;
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (const auto& z : analog.z) {
    out.z.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const auto& p : analog.p) {
    out.p.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  const int degree = static_cast<int>(analog.p.size() - analog.z.size());
  for (int i = 0; i < degree; ++i) out.z.emplace_back(-1.0, 0.0);
  out.k = analog.k * (num / den).real();
  return out;
}

/// Collapse conjugate root lists into (real, |imag|) pairs. Roots are
/// expected in conjugate pairs; tolerance absorbs arithmetic noise.
std::vector<cplx> conjugate_pairs(std::vector<cplx> roots, const char* what) {
  std::vector<cplx> pairs;
  std::vector<bool> used(roots.size(), false);
  for (size_t i = 0; i < roots.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    size_t best = roots.size();
    double best_d = 1e-6 * (1.0 + std::abs(roots[i]));
    for (size_t j = i + 1; j < roots.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(roots[j] - std::conj(roots[i]));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == roots.size())
      throw std::logic_error(std::string("filter design: unpaired ") + what);
    used[best] = true;
    pairs.push_back(roots[i]);
  }
  return pairs;
}

std::vector<Biquad> zpk2sos(const Zpk& f) {
  if (f.z.size() != f.p.size())
    throw std::logic_error("filter design: zero/pole count mismatch");
  auto zp = conjugate_pairs(f.z, "zero");
  auto pp = conjugate_pairs(f.p, "pole");
  if (zp.size() != pp.size())
    throw std::logic_error("filter design: section count mismatch");

  // Sections with poles nearest the unit circle get matched first with their
  // closest zeros; this keeps per-section peak gain tame.
  std::sort(pp.begin(), pp.end(), [](const cplx& a, const cplx& b) {
    return std::abs(1.0 - std::abs(a)) < std::abs(1.0 - std::abs(b));
  });

  std::vector<Biquad> sos;
  std::vector<bool> zused(zp.size(), false);
  for (const auto& p : pp) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::max();
    for (size_t j = 0; j < zp.size(); ++j) {
      if (zused[j]) continue;
      const double d = std::abs(zp[j] - p);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    zused[best] = true;
    const cplx z = zp[best];
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -2.0 * z.real();
    s.b2 = std::norm(z);
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    sos.push_back(s);
  }
  sos.front().b0 *= f.k;
  sos.front().b1 *= f.k;
  sos.front().b2 *= f.k;
  return sos;
}

void sosfilt_inplace(const std::vector<Biquad>& sos, std::vector<double>& x) {
  double level = x.empty() ? 0.0 : x.front();
  for (const auto& s : sos) {
    // Steady-state initial conditions for a step of height `level` kill the
    // startup transient that plain zero state would inject.
    const double h1 = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z2 = level * (s.b2 - s.a2 * h1);
    double z1 = level * (s.b1 - s.a1 * h1) + z2;
    for (auto& v : x) {
      const double y = s.b0 * v + z1;
      z1 = s.b1 * v - s.a1 * y + z2;
      z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
    level *= h1;
  }
}

}  // namespace

std::vector<Biquad> design_cheby2_bandpass(double fs_hz, const FilterSpec& spec) {
  if (!(spec.low_cut_hz > 0.0) || !(spec.low_cut_hz < spec.high_cut_hz))
    throw std::invalid_argument("filter: need 0 < low_cut < high_cut");
  if (!(spec.high_cut_hz < fs_hz / 2.0))
    throw std::invalid_argument("filter: high_cut must be below Nyquist");

  Zpk proto = cheb2_prototype(spec.order, spec.stopband_atten_db);
  // Rescale so the -3 dB point of the prototype lands at omega = 1; the
  // requested cutoffs then act as half-power edges of the bandpass.
  const double de = 1.0 / std::sqrt(std::pow(10.0, 0.1 * spec.stopband_atten_db) - 1.0);
  const double c = std::cosh(std::acosh(1.0 / de) / static_cast<double>(spec.order));
  lowpass_scale(proto, c);

  const double wl = 2.0 * fs_hz * std::tan(M_PI * spec.low_cut_hz / fs_hz);
  const double wh = 2.0 * fs_hz * std::tan(M_PI * spec.high_cut_hz / fs_hz);
  Zpk bp = lp2bp(proto, std::sqrt(wl * wh), wh - wl);
  return zpk2sos(bilinear(bp, fs_hz));
}

std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x, int64_t pad_len) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (n < 2) throw std::invalid_argument("sosfiltfilt: input too short");
  const int64_t pad = std::min<int64_t>(pad_len, n - 1);

  // Odd reflection about both endpoints.
  std::vector<double> ext;
  ext.reserve(static_cast<size_t>(n + 2 * pad));
  for (int64_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<size_t>(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int64_t i = n - 2; i >= n - 1 - pad; --i)
    ext.push_back(2.0 * x[static_cast<size_t>(n - 1)] - x[static_cast<size_t>(i)]);

  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

std::vector<double> bandpass_filter(const std::vector<double>& x, double fs_hz,
                                    const FilterSpec& spec) {
  if (!(fs_hz > 2.0 * spec.high_cut_hz))
    throw std::invalid_argument("bandpass_filter: sampling rate too low for cutoff");
  if (static_cast<int64_t>(x.size()) <= 3 * spec.order)
    throw std::invalid_argument("bandpass_filter: input too short");
  const auto sos = design_cheby2_bandpass(fs_hz, spec);
  // The low edge dominates the transient; pad roughly three of its periods.
  const auto pad = static_cast<int64_t>(std::ceil(3.0 * fs_hz / spec.low_cut_hz));
  return sosfiltfilt(sos, x, pad);
}

std::vector<std::vector<double>> segment_record(const PpgRecord& record,
                                                double window_s) {
  if (!(window_s > 0.0)) throw std::invalid_argument("segment_record: window_s <= 0");
  const auto win = static_cast<int64_t>(std::llround(window_s * record.sampling_rate_hz));
  const auto n = static_cast<int64_t>(record.samples.size());
  if (n < win)
    throw std::invalid_argument("segment_record: record shorter than one window");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(n / win));
  for (int64_t start = 0; start + win <= n; start += win)
    out.emplace_back(record.samples.begin() + start, record.samples.begin() + start + win);
  return out;
}

double flatline_fraction(const std::vector<double>& window, double eps,
                         int64_t min_run) {
  if (window.empty()) throw std::invalid_argument("flatline_fraction: empty window");
  const int64_t n = static_cast<int64_t>(window.size());
  if (n == 1) return 1.0;
  int64_t flat_samples = 0;
  int64_t run = 1;  // samples in the current flat run
  for (int64_t i = 1; i <= n; ++i) {
    const bool small =
        i < n && std::abs(window[static_cast<size_t>(i)] - window[static_cast<size_t>(i - 1)]) < eps;
    if (small) {
      ++run;
    } else {
      if (run >= min_run) flat_samples += run;
      run = 1;
    }
  }
  return static_cast<double>(flat_samples) / static_cast<double>(n);
}

std::vector<double> zscore(const std::vector<double>& window, double eps_std) {
  if (window.empty()) throw std::invalid_argument("zscore: empty window");
  const double n = static_cast<double>(window.size());
  const double mean = std::accumulate(window.begin(), window.end(), 0.0) / n;
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > eps_std)) throw std::domain_error("zscore: zero variance window");
  std::vector<double> out(window.size());
  for (size_t i = 0; i < window.size(); ++i) out[i] = (window[i] - mean) / sd;
  return out;
}

PreprocessResult preprocess_pipeline(const PpgRecord& record,
                                     const PreprocessConfig& config) {
  PreprocessResult result;
  result.report.subject_id = record.subject_id;

  const std::vector<double> filtered =
      bandpass_filter(record.samples, record.sampling_rate_hz, config.filter);
  PpgRecord clean = record;
  clean.samples = filtered;

  const auto windows = segment_record(clean, config.window_s);
  // Flatness is judged on the raw windows: the zero-phase bandpass rings
  // through constant stretches and would hide them from the detector.
  const auto raw_windows = segment_record(record, config.window_s);
  result.report.windows_total = static_cast<int64_t>(windows.size());

  for (size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    const auto& raw = raw_windows[w];
    const auto [rlo, rhi] = std::minmax_element(raw.begin(), raw.end());
    const double range = *rhi - *rlo;
    // An exactly constant window has zero range; any positive eps flags it.
    const double eps = config.flat_eps_scale * (range > 0.0 ? range : 1.0);
    if (flatline_fraction(raw, eps, config.flat_min_run) > config.flat_threshold) {
      ++result.report.dropped_flat;
      continue;
    }
    std::vector<double> z;
    try {
      z = zscore(win, config.eps_std);
    } catch (const std::domain_error&) {
      ++result.report.dropped_zero_var;
      continue;
    }
    if (record.sampling_rate_hz != config.target_hz)
      z = resample(z, record.sampling_rate_hz, config.target_hz);
    z = zscore(z, config.eps_std);  // exact moments after rate conversion

    Segment seg;
    seg.subject_id = record.subject_id;
    seg.index = static_cast<int64_t>(w);
    seg.fs_hz = config.target_hz;
    seg.values.assign(z.begin(), z.end());
    result.segments.push_back(std::move(seg));
    ++result.report.emitted;
  }
  return result;
}

}  // namespace ppgfm
