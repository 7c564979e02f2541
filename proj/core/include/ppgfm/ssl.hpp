#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ppgfm/augment.hpp"
#include "ppgfm/model.hpp"
#include "ppgfm/morphology.hpp"
#include "ppgfm/waveform.hpp"

namespace ppgfm {

struct TrainConfig {
  ContrastiveMode mode = ContrastiveMode::morphology;
  double temperature = 0.5;  // 0.07 is the investigated alternative
  double alpha = 0.6;
  int64_t batch_pairs = 64;  // N positive pairs => 2N segments per batch
  int64_t steps = 15000;
  double lr = 1e-4;
  uint64_t seed = 0;
  int bins = 8;
  int64_t checkpoint_every = 1000;
  AugmentConfig augment;

  static TrainConfig defaults(ContrastiveMode mode) {
    TrainConfig c;
    c.mode = mode;
    c.augment = mode == ContrastiveMode::participant
                    ? AugmentConfig::participant_defaults()
                    : AugmentConfig::morphology_defaults();
    return c;
  }

  void validate() const;
};

/// Segments plus lookup structures for the positive-pair samplers. Labels
/// are required in morphology mode; segments without labels are never
/// sampled there.
struct TrainDataset {
  double fs_hz = 125.0;
  int64_t segment_length = 0;
  std::vector<std::vector<float>> segments;
  std::vector<std::string> subject_ids;
  std::vector<std::optional<MorphologyLabels>> labels;

  static TrainDataset from_store(const SegmentStore& store);
  static TrainDataset from_store(const SegmentStore& store,
                                 std::vector<std::optional<MorphologyLabels>> labels);

  /// All defined sVRI values, in segment order (for bin fitting).
  std::vector<double> labeled_svri() const;
};

/// A batch of 2N augmented segments where rows (2k, 2k+1) are positives.
struct PairBatch {
  Tensor<float> x;  // [2N, 1, L]
  std::vector<std::string> subject_ids;
  std::vector<int64_t> segment_indices;  // dataset row each member came from
  std::vector<int> bins;        // pairing bin per row; -1 in participant mode
  std::vector<double> y_ipa;    // post-augmentation targets (morphology mode)
  std::vector<uint8_t> ipa_mask;
  std::vector<double> y_sqi;
};

/// Participant pairs: subjects drawn uniformly with replacement, two distinct
/// segments per subject, participant-mode augmentation on both.
PairBatch sample_batch_p(const TrainDataset& dataset, int64_t n_pairs,
                         const AugmentConfig& augment, std::mt19937_64& rng);

/// Morphology pairs: bins drawn proportional to population, two distinct
/// labeled segments per bin, morphology-mode augmentation, then IPA/SQI
/// targets recomputed on the augmented signals.
PairBatch sample_batch_s(const TrainDataset& dataset, const BinEdges& edges,
                         int64_t n_pairs, const AugmentConfig& augment,
                         std::mt19937_64& rng);

/// Normalized temperature-scaled cross entropy over adjacent positive pairs:
/// cosine similarities, self-similarity excluded from the denominator, both
/// pair orientations averaged. The single-pair case is exactly zero.
template <typename T>
ad::Var<T> ntxent(const ad::Var<T>& z, T temperature) {
  const auto& s = z.value().shape();
  if (s.size() != 2) throw std::invalid_argument("ntxent: expects [2N, D]");
  const int64_t rows = s[0];
  if (rows < 2 || rows % 2 != 0)
    throw std::invalid_argument("ntxent: row count must be even and >= 2");
  if (!(temperature > T{0})) throw std::invalid_argument("ntxent: temperature <= 0");
  for (int64_t i = 0; i < z.value().numel(); ++i)
    if (!std::isfinite(static_cast<double>(z.value()[i])))
      throw std::invalid_argument("ntxent: non-finite embedding");

  auto zn = ad::l2_normalize_rows(z);
  auto sim = ad::mul_scalar(ad::matmul_nt(zn, zn), T{1} / temperature);

  Tensor<T> diag_mask({rows, rows});
  Tensor<T> partner_mask({rows, rows});
  for (int64_t i = 0; i < rows; ++i) {
    diag_mask[i * rows + i] = static_cast<T>(-1e9);
    const int64_t partner = (i % 2 == 0) ? i + 1 : i - 1;
    partner_mask[i * rows + partner] = T{1};
  }

  auto pos = ad::sum_rows(ad::mul_const(sim, std::move(partner_mask)));
  auto lse = ad::logsumexp_rows(ad::add_const(sim, diag_mask));
  return ad::mean_all(ad::sub(lse, pos));
}

/// Mean absolute error over the masked-in entries; an all-zero mask yields a
/// constant zero (no gradient).
template <typename T>
ad::Var<T> masked_mae(const ad::Var<T>& pred, const std::vector<double>& target,
                      const std::vector<uint8_t>& mask) {
  const int64_t n = pred.value().numel();
  if (static_cast<int64_t>(target.size()) != n ||
      static_cast<int64_t>(mask.size()) != n)
    throw std::invalid_argument("masked_mae: length mismatch");
  int64_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) return ad::Var<T>::leaf(Tensor<T>::scalar(T{0}), false);

  Tensor<T> t(pred.value().shape());
  Tensor<T> mk(pred.value().shape());
  for (int64_t i = 0; i < n; ++i) {
    t[i] = static_cast<T>(target[static_cast<size_t>(i)]);
    mk[i] = mask[static_cast<size_t>(i)] ? T{1} : T{0};
  }
  auto diff = ad::abs(ad::add_const(ad::mul_scalar(pred, T{-1}), t));
  auto masked = ad::mul_const(diff, std::move(mk));
  return ad::mul_scalar(ad::sum_all(masked), T{1} / static_cast<T>(count));
}

/// (L_ipa, L_sqi): mean absolute errors of the two head predictions, with the
/// IPA mean taken over segments whose target is defined.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> head_losses(const ad::Var<T>& pred_ipa,
                                              const ad::Var<T>& pred_sqi,
                                              const std::vector<double>& y_ipa,
                                              const std::vector<uint8_t>& ipa_mask,
                                              const std::vector<double>& y_sqi) {
  std::vector<uint8_t> all_ones(y_sqi.size(), 1);
  return {masked_mae(pred_ipa, y_ipa, ipa_mask),
          masked_mae(pred_sqi, y_sqi, all_ones)};
}

/// alpha * L_svri + (1 - alpha) * (L_ipa + L_sqi).
template <typename T>
ad::Var<T> loss_total_s(const ad::Var<T>& l_svri, const ad::Var<T>& l_ipa,
                        const ad::Var<T>& l_sqi, T alpha) {
  if (alpha < T{0} || alpha > T{1})
    throw std::invalid_argument("loss_total_s: alpha outside [0,1]");
  return ad::add(ad::mul_scalar(l_svri, alpha),
                 ad::mul_scalar(ad::add(l_ipa, l_sqi), T{1} - alpha));
}

struct LossRow {
  int64_t step = 0;
  double total = 0.0;
  double svri = 0.0, ipa = 0.0, sqi = 0.0;
  bool has_components = false;  // false for participant mode
};

struct TrainResult {
  std::vector<LossRow> log;
  std::unique_ptr<SslModel<float>> model;
  std::optional<BinEdges> bin_edges;
};

/// Full pre-training loop: per step sample -> augment -> forward -> loss ->
/// backward -> Adam. Bit-reproducible for a fixed (config, seed, dataset);
/// aborts if the loss turns non-finite. When out_dir is set, writes
/// losses.csv plus checkpoints at the configured cadence and at the end.
TrainResult train(const TrainDataset& dataset, const TrainConfig& config,
                  const ModelConfig& model_config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Deterministic per-purpose RNG stream derivation.
std::mt19937_64 rng_stream(uint64_t seed, uint64_t stream);

}  // namespace ppgfm
