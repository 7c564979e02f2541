#include "ppgfm/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ppgfm {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<double> to_double(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

/// Draw two distinct indices from [0, n).
std::pair<int64_t, int64_t> draw_two(int64_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> first(0, n - 1);
  const int64_t a = first(rng);
  std::uniform_int_distribution<int64_t> second(0, n - 2);
  int64_t b = second(rng);
  if (b >= a) ++b;
  return {a, b};
}

}  // namespace

std::mt19937_64 rng_stream(uint64_t seed, uint64_t stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("train config: temperature <= 0");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("train config: alpha outside [0,1]");
  if (batch_pairs < 1) throw std::invalid_argument("train config: batch_pairs < 1");
  if (steps < 1) throw std::invalid_argument("train config: steps < 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr <= 0");
  if (bins < 2) throw std::invalid_argument("train config: bins < 2");
  if (checkpoint_every < 1) throw std::invalid_argument("train config: checkpoint_every < 1");
  augment.validate();
}

TrainDataset TrainDataset::from_store(const SegmentStore& store) {
  TrainDataset d;
  d.fs_hz = store.sampling_rate_hz;
  d.segment_length = store.segment_length;
  d.segments = store.segments;
  d.subject_ids.reserve(store.meta.size());
  for (const auto& m : store.meta) d.subject_ids.push_back(m.subject_id);
  d.labels.assign(d.segments.size(), std::nullopt);
  return d;
}

TrainDataset TrainDataset::from_store(
    const SegmentStore& store, std::vector<std::optional<MorphologyLabels>> labels) {
  TrainDataset d = from_store(store);
  if (labels.size() != d.segments.size())
    throw std::invalid_argument("dataset: label count does not match segments");
  d.labels = std::move(labels);
  return d;
}

std::vector<double> TrainDataset::labeled_svri() const {
  std::vector<double> out;
  for (const auto& l : labels)
    if (l) out.push_back(l->svri);
  return out;
}

PairBatch sample_batch_p(const TrainDataset& dataset, int64_t n_pairs,
                         const AugmentConfig& augment, std::mt19937_64& rng) {
  std::map<std::string, std::vector<int64_t>> groups;
  for (size_t i = 0; i < dataset.segments.size(); ++i)
    groups[dataset.subject_ids[i]].push_back(static_cast<int64_t>(i));
  std::vector<const std::vector<int64_t>*> eligible;
  std::vector<std::string> names;
  for (const auto& [name, idx] : groups)
    if (idx.size() >= 2) {
      eligible.push_back(&idx);
      names.push_back(name);
    }
  if (eligible.empty())
    throw std::runtime_error("sample_batch_p: no subject has two segments");

  const int64_t len = dataset.segment_length;
  PairBatch batch;
  batch.x = Tensor<float>({2 * n_pairs, 1, len});
  std::uniform_int_distribution<size_t> pick_subject(0, eligible.size() - 1);
  for (int64_t k = 0; k < n_pairs; ++k) {
    const size_t s = pick_subject(rng);
    const auto& members = *eligible[s];
    auto [ia, ib] = draw_two(static_cast<int64_t>(members.size()), rng);
    const int64_t seg_a = members[static_cast<size_t>(ia)];
    const int64_t seg_b = members[static_cast<size_t>(ib)];
    for (int m = 0; m < 2; ++m) {
      const int64_t seg = m == 0 ? seg_a : seg_b;
      const auto aug =
          apply_pipeline(to_double(dataset.segments[static_cast<size_t>(seg)]), augment, rng);
      float* row = batch.x.data() + (2 * k + m) * len;
      for (int64_t j = 0; j < len; ++j) row[j] = static_cast<float>(aug[static_cast<size_t>(j)]);
      batch.subject_ids.push_back(names[s]);
      batch.segment_indices.push_back(seg);
      batch.bins.push_back(-1);
    }
  }
  return batch;
}

PairBatch sample_batch_s(const TrainDataset& dataset, const BinEdges& edges,
                         int64_t n_pairs, const AugmentConfig& augment,
                         std::mt19937_64& rng) {
  std::vector<std::vector<int64_t>> by_bin(static_cast<size_t>(edges.b));
  for (size_t i = 0; i < dataset.segments.size(); ++i) {
    if (!dataset.labels[i]) continue;  // unlabeled segments are never sampled
    const int bin = assign_bin(dataset.labels[i]->svri, edges);
    by_bin[static_cast<size_t>(bin)].push_back(static_cast<int64_t>(i));
  }
  std::vector<int> usable;
  std::vector<double> weights;
  for (int b = 0; b < edges.b; ++b)
    if (by_bin[static_cast<size_t>(b)].size() >= 2) {
      usable.push_back(b);
      weights.push_back(static_cast<double>(by_bin[static_cast<size_t>(b)].size()));
    }
  if (usable.empty())
    throw std::runtime_error("sample_batch_s: every bin has fewer than two labeled segments");

  const int64_t len = dataset.segment_length;
  PairBatch batch;
  batch.x = Tensor<float>({2 * n_pairs, 1, len});
  std::discrete_distribution<size_t> pick_bin(weights.begin(), weights.end());
  for (int64_t k = 0; k < n_pairs; ++k) {
    const int bin = usable[pick_bin(rng)];
    const auto& members = by_bin[static_cast<size_t>(bin)];
    auto [ia, ib] = draw_two(static_cast<int64_t>(members.size()), rng);
    const int64_t pair_idx[2] = {members[static_cast<size_t>(ia)],
                                 members[static_cast<size_t>(ib)]};
    for (int m = 0; m < 2; ++m) {
      const int64_t seg = pair_idx[m];
      const auto aug =
          apply_pipeline(to_double(dataset.segments[static_cast<size_t>(seg)]), augment, rng);
      float* row = batch.x.data() + (2 * k + m) * len;
      for (int64_t j = 0; j < len; ++j) row[j] = static_cast<float>(aug[static_cast<size_t>(j)]);
      batch.subject_ids.push_back(dataset.subject_ids[static_cast<size_t>(seg)]);
      batch.segment_indices.push_back(seg);
      batch.bins.push_back(bin);

      // Head targets come from the augmented signal.
      Segment seg_aug;
      seg_aug.values.assign(aug.begin(), aug.end());
      seg_aug.fs_hz = dataset.fs_hz;
      const auto labels = segment_morphology(seg_aug);
      if (labels && labels->ipa) {
        batch.y_ipa.push_back(*labels->ipa);
        batch.ipa_mask.push_back(1);
      } else {
        batch.y_ipa.push_back(0.0);
        batch.ipa_mask.push_back(0);
      }
      batch.y_sqi.push_back(labels ? labels->sqi : sqi(seg_aug));
    }
  }
  return batch;
}

TrainResult train(const TrainDataset& dataset, const TrainConfig& config,
                  const ModelConfig& model_config,
                  const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  ModelConfig mc = model_config;
  mc.mode = config.mode == ContrastiveMode::morphology ? ModelMode::morphology
                                                       : ModelMode::participant;
  mc.validate();
  if (dataset.segment_length != mc.encoder.input_len)
    throw std::invalid_argument("train: segment length does not match encoder input");

  TrainResult result;
  result.model = std::make_unique<SslModel<float>>(mc);

  if (config.mode == ContrastiveMode::morphology) {
    const auto svri_values = dataset.labeled_svri();
    result.bin_edges = fit_bins(svri_values, config.bins);
  }

  nn::AdamConfig<float> adam_cfg;
  adam_cfg.lr = static_cast<float>(config.lr);
  nn::Adam<float> adam(result.model->parameters(), adam_cfg);

  std::ofstream loss_csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    loss_csv.open(*out_dir / "losses.csv");
    if (!loss_csv.good()) throw std::runtime_error("cannot write loss log");
    loss_csv << "step,total,svri,ipa,sqi\n";
  }

  const float alpha = static_cast<float>(config.alpha);
  const float tau = static_cast<float>(config.temperature);
  auto zero_scalar = [] { return ad::Var<float>::leaf(Tensor<float>::scalar(0.0f), false); };

  auto write_checkpoint = [&](int64_t step, const std::string& name) {
    if (!out_dir) return;
    CheckpointExtras extras;
    extras.bin_edges = result.bin_edges;
    extras.train_step = step;
    save_checkpoint((*out_dir / name).string(), *result.model, &adam, extras);
  };

  for (int64_t step = 1; step <= config.steps; ++step) {
    auto batch_rng = rng_stream(config.seed, static_cast<uint64_t>(2 * step));
    auto dropout_rng = rng_stream(config.seed, static_cast<uint64_t>(2 * step + 1));

    PairBatch batch =
        config.mode == ContrastiveMode::morphology
            ? sample_batch_s(dataset, *result.bin_edges, config.batch_pairs,
                             config.augment, batch_rng)
            : sample_batch_p(dataset, config.batch_pairs, config.augment, batch_rng);

    nn::Ctx<float> ctx{true, &dropout_rng};
    auto x = ad::Var<float>::leaf(std::move(batch.x), false);
    auto h = result.model->encode(x, ctx);

    LossRow row;
    row.step = step;
    ad::Var<float> total;
    if (config.mode == ContrastiveMode::participant) {
      total = ntxent(result.model->project(h), tau);
      row.total = total.value().item();
    } else {
      auto l_svri = alpha > 0.0f ? ntxent(result.model->project(h), tau) : zero_scalar();
      auto l_ipa = zero_scalar();
      auto l_sqi = zero_scalar();
      if (alpha < 1.0f) {
        auto [li, ls] = head_losses(result.model->predict_ipa(h),
                                    result.model->predict_sqi(h), batch.y_ipa,
                                    batch.ipa_mask, batch.y_sqi);
        l_ipa = li;
        l_sqi = ls;
      }
      total = loss_total_s(l_svri, l_ipa, l_sqi, alpha);
      row.has_components = true;
      row.svri = l_svri.value().item();
      row.ipa = l_ipa.value().item();
      row.sqi = l_sqi.value().item();
      row.total = total.value().item();
    }

    if (!std::isfinite(row.total))
      throw std::runtime_error("train: loss diverged at step " + std::to_string(step));

    ad::backward(total);
    adam.step();

    result.log.push_back(row);
    if (loss_csv.is_open()) {
      char buf[160];
      if (row.has_components)
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g",
                      static_cast<long long>(row.step), row.total, row.svri, row.ipa,
                      row.sqi);
      else
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,,,",
                      static_cast<long long>(row.step), row.total);
      loss_csv << buf << "\n";
    }

    if (step % config.checkpoint_every == 0 && step != config.steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.ppgm", static_cast<long long>(step));
      write_checkpoint(step, name);
    }
  }
  write_checkpoint(config.steps, "ckpt_final.ppgm");
  return result;
}

}  // namespace ppgfm
