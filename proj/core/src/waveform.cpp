#include "ppgfm/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ppgfm {

namespace {

static_assert(sizeof(float) == 4, "segment store assumes 32-bit floats");

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

PpgRecord load_record(const std::filesystem::path& path, RecordFormat format,
                      std::optional<double> sampling_rate_hz) {
  PpgRecord rec;
  rec.subject_id = path.stem().string();
  rec.source_tag = "file";

  if (format == RecordFormat::binary) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open record: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<int64_t>(in.tellg());
    in.seekg(0);
    require(bytes % 4 == 0, "malformed binary record (size not a multiple of 4): " +
                                path.string());
    std::vector<float> raw(static_cast<size_t>(bytes / 4));
    in.read(reinterpret_cast<char*>(raw.data()), bytes);
    require(in.good(), "short read on record: " + path.string());
    rec.samples.assign(raw.begin(), raw.end());
  } else {
    std::ifstream in(path);
    require(in.good(), "cannot open record: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      std::string t = trim(line);
      if (t.empty()) continue;
      if (t[0] == '#') {
        // header line: "# key: value"
        std::string body = trim(t.substr(1));
        size_t colon = body.find(':');
        if (colon == std::string::npos) continue;
        std::string key = trim(body.substr(0, colon));
        std::string val = trim(body.substr(colon + 1));
        if (key == "sampling_rate_hz") {
          try {
            rec.sampling_rate_hz = std::stod(val);
          } catch (const std::exception&) {
            throw std::runtime_error("malformed sampling_rate_hz header in " + path.string());
          }
        } else if (key == "subject_id") {
          rec.subject_id = val;
        } else if (key == "source_tag") {
          rec.source_tag = val;
        }
        continue;
      }
      std::stringstream ss(t);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (cell.empty()) continue;
        size_t pos = 0;
        double v;
        try {
          v = std::stod(cell, &pos);
        } catch (const std::exception&) {
          throw std::runtime_error("malformed sample '" + cell + "' in " + path.string());
        }
        require(pos == cell.size(), "malformed sample '" + cell + "' in " + path.string());
        rec.samples.push_back(v);
      }
    }
  }

  if (sampling_rate_hz) rec.sampling_rate_hz = *sampling_rate_hz;
  require(rec.sampling_rate_hz > 0.0, "missing sampling rate for " + path.string());
  require(!rec.samples.empty(), "record has no samples: " + path.string());
  for (double v : rec.samples)
    require(std::isfinite(v), "non-finite sample in " + path.string());
  return rec;
}

void save_record_csv(const std::filesystem::path& path, const PpgRecord& record) {
  std::ofstream out(path);
  require(out.good(), "cannot write record: " + path.string());
  out << "# sampling_rate_hz: " << record.sampling_rate_hz << "\n";
  out << "# subject_id: " << record.subject_id << "\n";
  out << "# source_tag: " << record.source_tag << "\n";
  out.precision(17);
  for (double v : record.samples) out << v << "\n";
  require(out.good(), "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace {

double bessel_i0(double x) {
  // Series expansion; converges quickly for the beta values used here.
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

double sinc(double v) {
  if (std::abs(v) < 1e-12) return 1.0;
  const double pv = M_PI * v;
  return std::sin(pv) / pv;
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, double from_hz,
                             double to_hz) {
  if (!(from_hz > 0.0) || !(to_hz > 0.0))
    throw std::invalid_argument("resample: rates must be positive");
  if (x.size() < 2) throw std::invalid_argument("resample: input too short");
  if (from_hz == to_hz) return x;

  const int64_t n_in = static_cast<int64_t>(x.size());
  const int64_t n_out = static_cast<int64_t>(
      std::llround(static_cast<double>(n_in) * to_hz / from_hz));
  const double ratio = to_hz / from_hz;
  // Cutoff in cycles per input sample; 0.5 is the input Nyquist.
  const double fc = 0.5 * std::min(1.0, ratio);
  constexpr double kBeta = 8.6;
  constexpr double kZeroCrossings = 16.0;
  const double half_width = kZeroCrossings / (2.0 * fc);
  const double i0_beta = bessel_i0(kBeta);

  std::vector<double> y(static_cast<size_t>(n_out));
  for (int64_t j = 0; j < n_out; ++j) {
    const double t = static_cast<double>(j) / ratio;
    const int64_t k0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t - half_width)));
    const int64_t k1 = std::min<int64_t>(n_in - 1, static_cast<int64_t>(std::floor(t + half_width)));
    double acc = 0.0, wsum = 0.0;
    for (int64_t k = k0; k <= k1; ++k) {
      const double u = t - static_cast<double>(k);
      const double frac = u / half_width;
      const double win = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - frac * frac))) / i0_beta;
      const double h = 2.0 * fc * sinc(2.0 * fc * u) * win;
      acc += x[static_cast<size_t>(k)] * h;
      wsum += h;
    }
    // Normalizing by the in-range kernel mass keeps unit DC gain at the edges.
    y[static_cast<size_t>(j)] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Synthetic PPG
// ---------------------------------------------------------------------------

SynthPpg synth_ppg(double heart_rate_bpm, double fs_hz, double duration_s,
                   double notch_depth, double noise_sigma, uint64_t seed) {
  if (heart_rate_bpm < 30.0 || heart_rate_bpm > 220.0)
    throw std::invalid_argument("synth_ppg: heart rate outside [30, 220] bpm");
  if (!(duration_s > 0.0) || !(fs_hz > 0.0))
    throw std::invalid_argument("synth_ppg: duration and rate must be positive");
  if (notch_depth < 0.0 || notch_depth > 1.0)
    throw std::invalid_argument("synth_ppg: notch_depth outside [0, 1]");
  if (noise_sigma < 0.0) throw std::invalid_argument("synth_ppg: negative noise sigma");

  // Template landmarks as fractions of the beat period. The pedestal keeps
  // the notch level above the beat foot (as in real PPG), removes flat
  // stretches from notch-free tails, and has zero slope at the notch
  // position, so the notch location stays analytic.
  constexpr double kSysPeak = 0.30;
  constexpr double kNotch = 0.50;
  constexpr double kDicrAmp = 0.45;
  constexpr double kPedestal = 0.10;

  const double period_s = 60.0 / heart_rate_bpm;
  const int64_t n = static_cast<int64_t>(std::llround(duration_s * fs_hz));

  SynthPpg out;
  out.record.subject_id = "synth";
  out.record.source_tag = "synth";
  out.record.sampling_rate_hz = fs_hz;
  out.record.samples.assign(static_cast<size_t>(n), 0.0);

  const double amp_d = kDicrAmp * notch_depth;
  std::vector<double> clean(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs_hz;
    const double u = std::fmod(t, period_s) / period_s;  // position in beat
    double v = kPedestal * std::sin(M_PI * u);
    if (u < kSysPeak) {
      v += 0.5 * (1.0 - std::cos(M_PI * u / kSysPeak));
    } else if (u < kNotch) {
      v += 0.5 * (1.0 + std::cos(M_PI * (u - kSysPeak) / (kNotch - kSysPeak)));
    } else if (amp_d > 0.0) {
      v += amp_d * 0.5 * (1.0 - std::cos(2.0 * M_PI * (u - kNotch) / (1.0 - kNotch)));
    }
    clean[static_cast<size_t>(i)] = v;
  }
  out.record.samples = clean;

  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : out.record.samples) v += noise(rng);
  }

  // Markers are discrete extrema of the noise-free template, so they agree
  // with what a sample-domain detector can possibly find. The pedestal
  // contributes kPedestal/pi of area to each half of the beat.
  const int64_t n_beats = static_cast<int64_t>(std::floor(duration_s / period_s));
  const double sys_area = (0.5 * kNotch + kPedestal / M_PI) * period_s * fs_hz;
  const double dia_area =
      (amp_d * 0.5 * (1.0 - kNotch) + kPedestal / M_PI) * period_s * fs_hz;
  for (int64_t k = 0; k < n_beats; ++k) {
    BeatTruth b;
    const double t0 = static_cast<double>(k) * period_s;
    b.onset = static_cast<int64_t>(std::llround(t0 * fs_hz));
    b.end = static_cast<int64_t>(std::llround((t0 + period_s) * fs_hz));
    if (b.end > n) break;
    b.sys = b.onset;
    for (int64_t i = b.onset; i < b.end; ++i)
      if (clean[static_cast<size_t>(i)] > clean[static_cast<size_t>(b.sys)]) b.sys = i;
    if (notch_depth > 0.0) {
      // The continuous notch sits at kNotch exactly; take the discrete
      // argmin in its neighborhood and keep it only if it is a genuine
      // interior minimum (a very shallow lobe may not form one).
      const auto lo = static_cast<int64_t>(std::llround((t0 + 0.4 * period_s) * fs_hz));
      const auto hi = static_cast<int64_t>(std::llround((t0 + 0.6 * period_s) * fs_hz));
      int64_t notch = lo;
      for (int64_t i = lo; i < hi; ++i)
        if (clean[static_cast<size_t>(i)] < clean[static_cast<size_t>(notch)]) notch = i;
      if (notch - 2 >= 0 && notch + 2 < n &&
          clean[static_cast<size_t>(notch)] < clean[static_cast<size_t>(notch - 2)] &&
          clean[static_cast<size_t>(notch)] < clean[static_cast<size_t>(notch + 2)])
        b.notch = notch;
    }
    b.systolic_area = sys_area;
    b.diastolic_area = dia_area;
    out.beats.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment store
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(in.gcount() == sizeof(T), "truncated store (" + what + ")");
  return v;
}

constexpr char kStoreMagic[4] = {'P', 'P', 'G', 'S'};
constexpr uint16_t kStoreVersion = 1;

}  // namespace

void write_store(const std::filesystem::path& path, const SegmentStore& store) {
  require(store.segments.size() == store.meta.size(),
          "store: segment/meta count mismatch");
  for (const auto& s : store.segments)
    require(static_cast<int64_t>(s.size()) == store.segment_length,
            "store: unequal segment lengths");

  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write store: " + path.string());
  out.write(kStoreMagic, 4);
  write_le<uint16_t>(out, kStoreVersion);
  write_le<float>(out, static_cast<float>(store.sampling_rate_hz));
  write_le<uint32_t>(out, static_cast<uint32_t>(store.segment_length));
  write_le<uint32_t>(out, static_cast<uint32_t>(store.segments.size()));
  for (const auto& s : store.segments)
    out.write(reinterpret_cast<const char*>(s.data()),
              static_cast<std::streamsize>(s.size() * 4));
  require(out.good(), "write failed: " + path.string());
  out.close();

  std::ofstream meta(path.string() + ".meta");
  require(meta.good(), "cannot write sidecar: " + path.string() + ".meta");
  for (const auto& m : store.meta) {
    nlohmann::json j;
    j["subject_id"] = m.subject_id;
    j["index"] = m.index;
    j["source_tag"] = m.source_tag;
    meta << j.dump() << "\n";
  }
  require(meta.good(), "write failed: " + path.string() + ".meta");
}

SegmentStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open store: " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, kStoreMagic, 4) == 0,
          "bad store magic in " + path.string());
  const auto version = read_le<uint16_t>(in, "version");
  require(version == kStoreVersion,
          "unknown store version " + std::to_string(version));

  SegmentStore store;
  store.sampling_rate_hz = read_le<float>(in, "sampling rate");
  store.segment_length = read_le<uint32_t>(in, "segment length");
  const auto count = read_le<uint32_t>(in, "segment count");

  store.segments.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::vector<float> seg(static_cast<size_t>(store.segment_length));
    in.read(reinterpret_cast<char*>(seg.data()),
            static_cast<std::streamsize>(seg.size() * 4));
    require(in.gcount() == static_cast<std::streamsize>(seg.size() * 4),
            "truncated payload in " + path.string());
    store.segments.push_back(std::move(seg));
  }

  std::ifstream meta(path.string() + ".meta");
  require(meta.good(), "missing sidecar: " + path.string() + ".meta");
  std::string line;
  while (std::getline(meta, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), "malformed sidecar line in " + path.string() + ".meta");
    SegmentMeta m;
    m.subject_id = j.at("subject_id").get<std::string>();
    m.index = j.at("index").get<int64_t>();
    m.source_tag = j.at("source_tag").get<std::string>();
    store.meta.push_back(std::move(m));
  }
  require(store.meta.size() == store.segments.size(),
          "sidecar record count mismatch for " + path.string());
  return store;
}

}  // namespace ppgfm
