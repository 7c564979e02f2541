#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "ppgfm/eval.hpp"
#include "ppgfm/model.hpp"

using namespace ppgfm;
using ad::Var;

namespace {

ModelConfig tiny_config(ModelMode mode) {
  ModelConfig mc;
  mc.mode = mode;
  mc.encoder.n_blocks = 4;
  mc.encoder.base_filters = 4;
  mc.encoder.filters_double_every = 2;
  mc.encoder.embedding_dim = 16;
  mc.encoder.input_len = 64;
  mc.encoder.dropout = 0.5;
  mc.moe_hidden = 8;
  mc.init_seed = 3;
  return mc;
}

Tensor<float> random_input(int64_t batch, int64_t len, uint64_t seed) {
  Tensor<float> x({batch, 1, len});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = dist(rng);
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("default encoder maps [32, 1, 1250] to [32, 512]") {
  ModelConfig mc;
  mc.mode = ModelMode::morphology;
  SslModel<float> model(mc);
  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto h = model.encode(Var<float>::leaf(random_input(32, 1250, 1)), ctx);
  CHECK(h.shape() == std::vector<int64_t>{32, 512});
  auto z = model.project(h);
  CHECK(z.shape() == std::vector<int64_t>{32, 512});
  auto ipa_pred = model.predict_ipa(h);
  CHECK(ipa_pred.shape() == std::vector<int64_t>{32});
}

TEST_CASE("shape contract holds for batch sizes 1, 2 and 32") {
  ModelConfig mc;
  mc.mode = ModelMode::participant;
  SslModel<float> model(mc);
  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  for (int64_t b : {1, 2, 32}) {
    auto h = model.encode(Var<float>::leaf(random_input(b, 1250, 2)), ctx);
    CHECK(h.shape() == std::vector<int64_t>{b, 512});
  }
}

TEST_CASE("default width parameter count sits in the ~5M band") {
  ModelConfig mc;
  mc.mode = ModelMode::morphology;
  SslModel<float> model(mc);
  const int64_t count = model.param_count();
  MESSAGE("default parameter count: ", count);
  CHECK(count > 3'000'000);
  CHECK(count < 10'000'000);
  // The two MoE heads contribute roughly 400K each.
  SslModel<float> p_only([&] {
    ModelConfig c = mc;
    c.mode = ModelMode::participant;
    return c;
  }());
  const int64_t moe_params = count - p_only.param_count();
  CHECK(moe_params > 500'000);
  CHECK(moe_params < 1'100'000);
}

TEST_CASE("doubling base filters grows the parameter count") {
  ModelConfig narrow;
  narrow.mode = ModelMode::participant;
  ModelConfig wide = narrow;
  wide.encoder.base_filters = 64;
  SslModel<float> a(narrow), b(wide);
  CHECK(b.param_count() > 3 * a.param_count());
}

TEST_CASE("encoder downsampling sequence matches the design") {
  // Stride-2 on every odd block: 1250 -> 313 -> 79 -> 20 -> 5 -> 3 at the
  // group boundaries (blocks 3, 7, 11, 15, 17).
  EncoderConfig e;
  int64_t len = e.input_len;
  std::vector<int64_t> at_group_end;
  for (int64_t i = 1; i < e.n_blocks; ++i) {
    if (i % 2 == 1) len = (len + 2 * (e.kernel / 2) - e.kernel) / e.stride + 1;
    if (i == 3 || i == 7 || i == 11 || i == 15 || i == 17) at_group_end.push_back(len);
  }
  CHECK(at_group_end == std::vector<int64_t>{313, 79, 20, 5, 3});
  CHECK(e.channels_of(0) == 32);
  CHECK(e.channels_of(4) == 64);
  CHECK(e.channels_of(17) == 512);
}

TEST_CASE("eval-mode forward is deterministic") {
  SslModel<float> model(tiny_config(ModelMode::morphology));
  auto x = random_input(4, 64, 5);
  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto a = model.project(model.encode(Var<float>::leaf(x), ctx));
  auto b = model.project(model.encode(Var<float>::leaf(x), ctx));
  CHECK(a.value().vec() == b.value().vec());
}

TEST_CASE("a segment embeds identically alone and inside a batch") {
  SslModel<float> model(tiny_config(ModelMode::participant));
  auto batch = random_input(6, 64, 7);
  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto all = model.encode(Var<float>::leaf(batch), ctx);
  Tensor<float> one({1, 1, 64});
  for (int64_t j = 0; j < 64; ++j) one[j] = batch[2 * 64 + j];  // row 2
  auto solo = model.encode(Var<float>::leaf(std::move(one)), ctx);
  for (int64_t j = 0; j < 16; ++j)
    CHECK(solo.value()[j] ==
          doctest::Approx(all.value()[2 * 16 + j]).epsilon(1e-4));
}

TEST_CASE("moe gate weights form a probability simplex") {
  SslModel<float> model(tiny_config(ModelMode::morphology));
  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto h = model.encode(Var<float>::leaf(random_input(5, 64, 9)), ctx);
  auto gates = model.moe_head(0).gate_weights(h);
  REQUIRE(gates.shape() == std::vector<int64_t>{5, 3});
  for (int64_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int64_t e = 0; e < 3; ++e) {
      CHECK(gates.value()[i * 3 + e] >= 0.0f);
      sum += gates.value()[i * 3 + e];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("identical experts make the MoE output gating-independent") {
  SslModel<float> model(tiny_config(ModelMode::morphology));
  auto params = model.parameters("moe_ipa");
  // Copy expert 0 weights into experts 1 and 2.
  auto find = [&](const std::string& name) -> Tensor<float>& {
    for (auto& p : params)
      if (p.name == name) return p.var.value_mut();
    throw std::logic_error("param not found: " + name);
  };
  for (const char* leaf : {"fc1.w", "fc1.b", "fc2.w", "fc2.b"}) {
    find(std::string("moe_ipa.expert1.") + leaf) = find(std::string("moe_ipa.expert0.") + leaf);
    find(std::string("moe_ipa.expert2.") + leaf) = find(std::string("moe_ipa.expert0.") + leaf);
  }

  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto h = model.encode(Var<float>::leaf(random_input(4, 64, 11)), ctx);
  auto mixed = model.predict_ipa(h);

  // Forcing the gate to select expert 0 alone must change nothing.
  find("moe_ipa.gate.w").fill(0.0f);
  Tensor<float>& gb = find("moe_ipa.gate.b");
  gb[0] = 60.0f;
  gb[1] = -60.0f;
  gb[2] = -60.0f;
  auto forced = model.predict_ipa(h);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(mixed.value()[i] == doctest::Approx(forced.value()[i]).epsilon(1e-5));
}

TEST_CASE("gate forced to one expert reproduces that expert exactly") {
  // With one-hot gate weights the convex combination has a single term, so
  // zeroing the other experts' parameters cannot change the output.
  SslModel<float> model(tiny_config(ModelMode::morphology));
  auto params = model.parameters("moe_sqi");
  auto find = [&](const std::string& name) -> Tensor<float>& {
    for (auto& p : params)
      if (p.name == name) return p.var.value_mut();
    throw std::logic_error("param not found: " + name);
  };
  find("moe_sqi.gate.w").fill(0.0f);
  Tensor<float>& gb = find("moe_sqi.gate.b");
  gb[0] = 60.0f;
  gb[1] = -60.0f;
  gb[2] = -60.0f;

  nn::Ctx<float> ctx{false, nullptr};
  ad::NoGradGuard guard;
  auto h = model.encode(Var<float>::leaf(random_input(3, 64, 13)), ctx);
  auto before = model.predict_sqi(h);
  for (const char* leaf : {"fc1.w", "fc1.b", "fc2.w", "fc2.b"}) {
    find(std::string("moe_sqi.expert1.") + leaf).fill(0.0f);
    find(std::string("moe_sqi.expert2.") + leaf).fill(0.0f);
  }
  auto after = model.predict_sqi(h);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(before.value()[i] == doctest::Approx(after.value()[i]).epsilon(1e-6));
}

TEST_CASE("moe head gradients flow through gate and experts") {
  std::mt19937_64 rng(17);
  MoeHead<double> head(6, 4, 3, rng);
  Tensor<double> ht({3, 6});
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int64_t i = 0; i < ht.numel(); ++i) ht[i] = dist(rng);
  auto fn = [&](std::vector<Var<double>>& v) { return ad::mean_all(head.forward(v[0])); };
  CHECK(oracles::max_rel_grad_err(fn, {ht}) < 1e-4);
}

TEST_CASE("config validation rejects collapsing input lengths") {
  ModelConfig mc = tiny_config(ModelMode::participant);
  mc.encoder.n_blocks = 18;
  mc.encoder.input_len = 64;  // 9 halvings would collapse below 2 samples
  auto build = [&] { SslModel<float> m(mc); };
  CHECK_THROWS_AS(build(), std::invalid_argument);
}

TEST_CASE("checkpoint round-trips parameters, buffers and extras") {
  const auto dir = std::filesystem::temp_directory_path() / "ppgfm_model_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ckpt.ppgm").string();

  SslModel<float> model(tiny_config(ModelMode::morphology));
  nn::Adam<float> adam(model.parameters(), {});
  // One step so optimizer state and BN buffers are non-trivial.
  nn::Ctx<float> ctx{true, nullptr};
  std::mt19937_64 drop_rng(3);
  ctx.rng = &drop_rng;
  auto h = model.encode(Var<float>::leaf(random_input(4, 64, 15)), ctx);
  ad::backward(ad::mean_all(model.project(h)));
  adam.step();

  CheckpointExtras extras;
  extras.train_step = 17;
  BinEdges edges;
  edges.b = 4;
  edges.edges = {0.5, 1.0, 1.5};
  extras.bin_edges = edges;
  save_checkpoint(path, model, &adam, extras);

  auto loaded = load_checkpoint(path);
  CHECK(loaded.extras.train_step == 17);
  REQUIRE(loaded.extras.bin_edges.has_value());
  CHECK(loaded.extras.bin_edges->edges == edges.edges);
  CHECK(loaded.model->config().mode == ModelMode::morphology);
  CHECK(loaded.model->config().encoder.input_len == 64);

  auto orig_params = model.parameters();
  auto back_params = loaded.model->parameters();
  REQUIRE(orig_params.size() == back_params.size());
  for (size_t i = 0; i < orig_params.size(); ++i) {
    CHECK(orig_params[i].name == back_params[i].name);
    CHECK(orig_params[i].var.value().vec() == back_params[i].var.value().vec());
  }
  auto orig_buf = model.buffers();
  auto back_buf = loaded.model->buffers();
  REQUIRE(orig_buf.size() == back_buf.size());
  for (size_t i = 0; i < orig_buf.size(); ++i)
    CHECK(orig_buf[i].tensor->vec() == back_buf[i].tensor->vec());

  auto adam2 = restore_adam(*loaded.model, loaded);
  CHECK(adam2.step_count() == adam.step_count());
  for (size_t i = 0; i < adam.params().size(); ++i) {
    CHECK(adam.moment1(i).vec() == adam2.moment1(i).vec());
    CHECK(adam.moment2(i).vec() == adam2.moment2(i).vec());
  }

  // A loaded model reproduces the original's eval-mode output bit-exactly.
  nn::Ctx<float> ectx{false, nullptr};
  ad::NoGradGuard guard;
  auto x = random_input(2, 64, 19);
  auto ya = model.project(model.encode(Var<float>::leaf(x), ectx));
  auto yb = loaded.model->project(loaded.model->encode(Var<float>::leaf(x), ectx));
  CHECK(ya.value().vec() == yb.value().vec());
}

TEST_SUITE_END();
