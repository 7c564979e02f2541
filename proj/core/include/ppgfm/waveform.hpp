#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ppgfm {

/// One subject's raw PPG trace.
struct PpgRecord {
  std::string subject_id;
  double sampling_rate_hz = 0.0;
  std::vector<double> samples;
  std::string source_tag;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sampling_rate_hz;
  }
};

enum class RecordFormat { csv, binary };

/// Load a raw record. CSV files carry optional "# key: value" header lines
/// (sampling_rate_hz, subject_id, source_tag) followed by one or more
/// comma-separated samples per line. Binary files are raw little-endian
/// 32-bit floats and need the sampling rate supplied by the caller.
/// Non-finite samples and missing rates are rejected.
PpgRecord load_record(const std::filesystem::path& path, RecordFormat format,
                      std::optional<double> sampling_rate_hz = std::nullopt);

/// Write a record in the CSV layout load_record understands.
void save_record_csv(const std::filesystem::path& path, const PpgRecord& record);

/// Windowed-sinc (Kaiser) rate conversion. Output length is
/// round(|x| * to_hz / from_hz); when downsampling the kernel cuts off at
/// min(from, to)/2 to suppress aliasing. Equal rates return the input
/// unchanged.
std::vector<double> resample(const std::vector<double>& x, double from_hz,
                             double to_hz);

/// Ground truth for one synthesized beat. Indices are absolute sample
/// positions in the record; areas are exact integrals of the noise-free
/// template in sample units (amplitude x samples).
struct BeatTruth {
  int64_t onset = 0;
  int64_t sys = 0;
  std::optional<int64_t> notch;
  int64_t end = 0;  // exclusive
  double systolic_area = 0.0;   // onset..notch
  double diastolic_area = 0.0;  // notch..end; 0 when the notch is absent
};

struct SynthPpg {
  PpgRecord record;
  std::vector<BeatTruth> beats;
};

/// Synthetic PPG generator used as the morphology/training oracle: each beat
/// is an asymmetric raised-cosine systolic lobe (rising to 1 at 30% of the
/// period, down to the notch at 50%), a raised-cosine dicrotic lobe over the
/// second half with amplitude 0.45 * notch_depth, and a 0.1 * sin(pi*u)
/// pedestal that keeps the notch above the beat foot, plus iid Gaussian
/// noise. Extrema and lobe areas are analytic; beat markers are returned
/// alongside. Deterministic for a fixed seed.
SynthPpg synth_ppg(double heart_rate_bpm, double fs_hz, double duration_s,
                   double notch_depth, double noise_sigma, uint64_t seed);

// ---------------------------------------------------------------------------
// Segment store
// ---------------------------------------------------------------------------

struct SegmentMeta {
  std::string subject_id;
  int64_t index = 0;
  std::string source_tag;
};

struct SegmentStore {
  double sampling_rate_hz = 0.0;
  int64_t segment_length = 0;
  std::vector<std::vector<float>> segments;
  std::vector<SegmentMeta> meta;
};

/// Bit-exact binary store: magic "PPGS", u16 version = 1, f32 rate,
/// u32 segment_length, u32 segment_count, then contiguous little-endian f32
/// payload. Metadata goes to <path>.meta as one JSON record per line with
/// keys subject_id, index, source_tag.
void write_store(const std::filesystem::path& path, const SegmentStore& store);

SegmentStore read_store(const std::filesystem::path& path);

}  // namespace ppgfm
