#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgfm/morphology.hpp"
#include "ppgfm/nn.hpp"

namespace ppgfm {

/// ResNet-style 1-D encoder layout: a stem conv, one Type-1 block, then
/// Type-2 blocks. Filters start at base_filters and double every
/// filters_double_every blocks; every second block halves the length with a
/// stride-2 first conv, which produces the length sequence
/// 1250 -> 313 -> 79 -> 20 -> 5 -> 3 at the default depth.
struct EncoderConfig {
  int64_t n_blocks = 18;
  int64_t base_filters = 32;
  int64_t filters_double_every = 4;
  int64_t kernel = 3;
  int64_t stride = 2;
  int64_t maxpool_kernel = 3;
  int64_t maxpool_stride = 1;
  double dropout = 0.5;
  int64_t embedding_dim = 512;
  int64_t input_len = 1250;
  int64_t input_channels = 1;

  int64_t channels_of(int64_t block) const {
    return base_filters << (block / filters_double_every);
  }

  void validate() const {
    if (n_blocks < 1 || base_filters < 1 || filters_double_every < 1 ||
        embedding_dim < 1 || input_len < 2 || input_channels < 1 || kernel < 1 ||
        stride < 1)
      throw std::invalid_argument("encoder config: invalid field");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("encoder config: dropout must be in [0,1)");
    // Stride-2 blocks halve the length; refuse configs that collapse it.
    int64_t len = input_len;
    for (int64_t i = 1; i < n_blocks; ++i) {
      if (i % 2 == 1) len = (len + 2 - kernel) / stride + 1;
      if (len < 2)
        throw std::invalid_argument(
            "encoder config: input length collapses before the final block");
    }
  }
};

enum class ModelMode { participant, morphology };

struct ModelConfig {
  EncoderConfig encoder;
  ModelMode mode = ModelMode::morphology;
  int64_t moe_experts = 3;
  int64_t moe_hidden = 256;
  uint64_t init_seed = 0;

  void validate() const {
    encoder.validate();
    if (moe_experts < 1 || moe_hidden < 1)
      throw std::invalid_argument("model config: invalid MoE field");
  }
};

namespace detail {

/// Type-1 block: conv, BN, ReLU, dropout, conv with an identity shortcut.
template <typename T>
struct Type1Block {
  nn::Conv1d<T> conv1, conv2;
  nn::BatchNorm1d<T> bn;
  nn::Dropout<T> drop;

  Type1Block() = default;
  Type1Block(int64_t ch, int64_t kernel, double dropout, std::mt19937_64& rng)
      : conv1(ch, ch, kernel, 1, kernel / 2, rng),
        conv2(ch, ch, kernel, 1, kernel / 2, rng),
        bn(ch),
        drop(dropout) {}

  ad::Var<T> forward(const ad::Var<T>& x, const nn::Ctx<T>& ctx) {
    auto h = conv1.forward(x);
    h = bn.forward(h, ctx);
    h = ad::relu(h);
    h = drop.forward(h, ctx);
    h = conv2.forward(h);
    return ad::add(h, x);
  }

  void collect(const std::string& p, std::vector<nn::Param<T>>& out) {
    conv1.collect(p + ".conv1", out);
    bn.collect(p + ".bn", out);
    conv2.collect(p + ".conv2", out);
  }
  void collect_buffers(const std::string& p, std::vector<nn::Buffer<T>>& out) {
    bn.collect_buffers(p + ".bn", out);
  }
};

/// Type-2 block: BN, ReLU, dropout, conv, BN, ReLU, dropout, conv, maxpool,
/// plus an additive shortcut (identity when shapes match, strided 1x1 conv
/// otherwise).
template <typename T>
struct Type2Block {
  nn::BatchNorm1d<T> bn1, bn2;
  nn::Dropout<T> drop;
  nn::Conv1d<T> conv1, conv2;
  nn::MaxPool1d<T> pool;
  bool projected = false;
  nn::Conv1d<T> shortcut;

  Type2Block() = default;
  Type2Block(int64_t ch_in, int64_t ch_out, int64_t kernel, int64_t stride,
             int64_t pool_k, int64_t pool_stride, double dropout,
             std::mt19937_64& rng)
      : bn1(ch_in),
        bn2(ch_out),
        drop(dropout),
        conv1(ch_in, ch_out, kernel, stride, kernel / 2, rng),
        conv2(ch_out, ch_out, kernel, 1, kernel / 2, rng),
        pool(pool_k, pool_stride, pool_k / 2),
        projected(ch_in != ch_out || stride != 1) {
    if (projected) shortcut = nn::Conv1d<T>(ch_in, ch_out, 1, stride, 0, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& x, const nn::Ctx<T>& ctx) {
    auto h = bn1.forward(x, ctx);
    h = ad::relu(h);
    h = drop.forward(h, ctx);
    h = conv1.forward(h);
    h = bn2.forward(h, ctx);
    h = ad::relu(h);
    h = drop.forward(h, ctx);
    h = conv2.forward(h);
    h = pool.forward(h);
    auto s = projected ? shortcut.forward(x) : x;
    return ad::add(h, s);
  }

  void collect(const std::string& p, std::vector<nn::Param<T>>& out) {
    bn1.collect(p + ".bn1", out);
    conv1.collect(p + ".conv1", out);
    bn2.collect(p + ".bn2", out);
    conv2.collect(p + ".conv2", out);
    if (projected) shortcut.collect(p + ".shortcut", out);
  }
  void collect_buffers(const std::string& p, std::vector<nn::Buffer<T>>& out) {
    bn1.collect_buffers(p + ".bn1", out);
    bn2.collect_buffers(p + ".bn2", out);
  }
};

template <typename T>
struct MoeExpert {
  nn::Linear<T> fc1, fc2;

  MoeExpert() = default;
  MoeExpert(int64_t in, int64_t hidden, std::mt19937_64& rng)
      : fc1(in, hidden, rng), fc2(hidden, 1, rng) {}

  ad::Var<T> forward(const ad::Var<T>& h) const {
    return fc2.forward(ad::relu(fc1.forward(h)));
  }

  void collect(const std::string& p, std::vector<nn::Param<T>>& out) {
    fc1.collect(p + ".fc1", out);
    fc2.collect(p + ".fc2", out);
  }
};

}  // namespace detail

/// Mixture-of-experts regression head: parallel two-layer experts combined
/// by softmax gate weights. Output is one scalar per row of H.
template <typename T>
class MoeHead {
 public:
  MoeHead() = default;
  MoeHead(int64_t in, int64_t hidden, int64_t n_experts, std::mt19937_64& rng)
      : gate_(in, n_experts, rng) {
    experts_.reserve(static_cast<size_t>(n_experts));
    for (int64_t e = 0; e < n_experts; ++e) experts_.emplace_back(in, hidden, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& h) const {
    auto gates = ad::softmax_rows(gate_.forward(h));  // [N, E]
    std::vector<ad::Var<T>> cols;
    cols.reserve(experts_.size());
    for (const auto& e : experts_) cols.push_back(e.forward(h));
    auto stacked = ad::concat_cols(cols);  // [N, E]
    return ad::sum_rows(ad::mul(gates, stacked));
  }

  /// Gate distribution for a given H; rows sum to one.
  ad::Var<T> gate_weights(const ad::Var<T>& h) const {
    return ad::softmax_rows(gate_.forward(h));
  }

  void collect(const std::string& p, std::vector<nn::Param<T>>& out) {
    gate_.collect(p + ".gate", out);
    for (size_t e = 0; e < experts_.size(); ++e)
      experts_[e].collect(p + ".expert" + std::to_string(e), out);
  }

 private:
  nn::Linear<T> gate_;
  std::vector<detail::MoeExpert<T>> experts_;
};

/// Encoder E, projection P and (morphology mode) MoE heads M1/M2.
template <typename T>
class SslModel {
 public:
  explicit SslModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.init_seed);
    const auto& e = config_.encoder;

    stem_ = nn::Conv1d<T>(e.input_channels, e.base_filters, e.kernel, 1, e.kernel / 2, rng);
    stem_bn_ = nn::BatchNorm1d<T>(e.base_filters);
    block0_ = detail::Type1Block<T>(e.base_filters, e.kernel, e.dropout, rng);
    for (int64_t i = 1; i < e.n_blocks; ++i) {
      const int64_t ch_in = e.channels_of(i - 1);
      const int64_t ch_out = e.channels_of(i);
      const int64_t stride = (i % 2 == 1) ? e.stride : 1;
      blocks_.emplace_back(ch_in, ch_out, e.kernel, stride, e.maxpool_kernel,
                           e.maxpool_stride, e.dropout, rng);
    }
    const int64_t last_ch = e.channels_of(e.n_blocks - 1);
    final_bn_ = nn::BatchNorm1d<T>(last_ch);
    final_fc_ = nn::Linear<T>(last_ch, e.embedding_dim, rng);
    projection_ = nn::Linear<T>(e.embedding_dim, e.embedding_dim, rng);
    if (config_.mode == ModelMode::morphology) {
      moe_ipa_ = MoeHead<T>(e.embedding_dim, config_.moe_hidden, config_.moe_experts, rng);
      moe_sqi_ = MoeHead<T>(e.embedding_dim, config_.moe_hidden, config_.moe_experts, rng);
    }
  }

  /// x: [B, C, L] -> H: [B, embedding_dim].
  ad::Var<T> encode(const ad::Var<T>& x, const nn::Ctx<T>& ctx) {
    auto h = stem_.forward(x);
    h = stem_bn_.forward(h, ctx);
    h = ad::relu(h);
    h = block0_.forward(h, ctx);
    for (auto& b : blocks_) h = b.forward(h, ctx);
    h = final_bn_.forward(h, ctx);
    h = ad::relu(h);
    h = ad::mean_lastdim(h);  // [B, last_ch, l] -> [B, last_ch]
    return final_fc_.forward(h);
  }

  /// H -> Z, the contrastive embedding.
  ad::Var<T> project(const ad::Var<T>& h) const { return projection_.forward(h); }

  ad::Var<T> predict_ipa(const ad::Var<T>& h) const { return moe_head(0).forward(h); }
  ad::Var<T> predict_sqi(const ad::Var<T>& h) const { return moe_head(1).forward(h); }

  const MoeHead<T>& moe_head(int which) const {
    if (config_.mode != ModelMode::morphology)
      throw std::logic_error("model: MoE heads exist only in morphology mode");
    return which == 0 ? moe_ipa_ : moe_sqi_;
  }

  const ModelConfig& config() const { return config_; }

  std::vector<nn::Param<T>> parameters() {
    std::vector<nn::Param<T>> out;
    collect_group(out, "encoder");
    collect_group(out, "projection");
    if (config_.mode == ModelMode::morphology) {
      collect_group(out, "moe_ipa");
      collect_group(out, "moe_sqi");
    }
    return out;
  }

  /// Parameters whose name starts with the given prefix
  /// ("encoder", "projection", "moe_ipa", "moe_sqi").
  std::vector<nn::Param<T>> parameters(const std::string& prefix) {
    std::vector<nn::Param<T>> out;
    collect_group(out, prefix);
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    stem_bn_.collect_buffers("encoder.stem_bn", out);
    block0_.collect_buffers("encoder.block000", out);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_buffers("encoder.block" + block_tag(i + 1), out);
    final_bn_.collect_buffers("encoder.final_bn", out);
    return out;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.var.value().numel();
    return n;
  }

 private:
  static std::string block_tag(size_t i) {
    std::string s = std::to_string(i);
    return std::string(3 - std::min<size_t>(3, s.size()), '0') + s;
  }

  void collect_group(std::vector<nn::Param<T>>& out, const std::string& group) {
    if (group == "encoder") {
      stem_.collect("encoder.stem", out);
      stem_bn_.collect("encoder.stem_bn", out);
      block0_.collect("encoder.block000", out);
      for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("encoder.block" + block_tag(i + 1), out);
      final_bn_.collect("encoder.final_bn", out);
      final_fc_.collect("encoder.final_fc", out);
    } else if (group == "projection") {
      projection_.collect("projection", out);
    } else if (group == "moe_ipa" && config_.mode == ModelMode::morphology) {
      moe_ipa_.collect("moe_ipa", out);
    } else if (group == "moe_sqi" && config_.mode == ModelMode::morphology) {
      moe_sqi_.collect("moe_sqi", out);
    }
  }

  ModelConfig config_;
  nn::Conv1d<T> stem_;
  nn::BatchNorm1d<T> stem_bn_;
  detail::Type1Block<T> block0_;
  std::vector<detail::Type2Block<T>> blocks_;
  nn::BatchNorm1d<T> final_bn_;
  nn::Linear<T> final_fc_;
  nn::Linear<T> projection_;
  MoeHead<T> moe_ipa_, moe_sqi_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Everything needed to resume or embed: the model config, parameters and BN
/// buffers as named f32 tensors, optional Adam state, and the sVRI bin edges
/// fitted at training time.
struct CheckpointExtras {
  std::optional<BinEdges> bin_edges;
  int64_t train_step = 0;
};

void save_checkpoint(const std::string& path, SslModel<float>& model,
                     nn::Adam<float>* adam, const CheckpointExtras& extras);

struct LoadedCheckpoint {
  std::unique_ptr<SslModel<float>> model;
  CheckpointExtras extras;
  nn::AdamConfig<float> adam_config;
  bool has_adam = false;
  // Adam moments keyed like the parameters; consumed by restore_adam.
  std::vector<std::pair<std::string, Tensor<float>>> adam_m, adam_v;
  int64_t adam_step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// Rebuild an Adam instance from a loaded checkpoint's moments.
nn::Adam<float> restore_adam(SslModel<float>& model, const LoadedCheckpoint& ckpt);

}  // namespace ppgfm
