#include <doctest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "ppgfm/preprocess.hpp"
#include "ppgfm/ssl.hpp"

using namespace ppgfm;
using ad::Var;

namespace {

/// Small two-morphology synthetic corpus shared across the suite.
const TrainDataset& fixture_dataset() {
  static const TrainDataset dataset = [] {
    TrainDataset d;
    d.fs_hz = 125.0;
    d.segment_length = 1250;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> hr(55.0, 95.0);
    for (int subj = 0; subj < 8; ++subj) {
      const bool notch_rich = subj % 2 == 0;
      const auto synth =
          synth_ppg(hr(rng), 125.0, 52.0, notch_rich ? 0.7 : 0.05, 0.05,
                    1000 + static_cast<uint64_t>(subj));
      PpgRecord rec = synth.record;
      rec.subject_id = "s" + std::to_string(subj);
      const auto result = preprocess_pipeline(rec, {});
      for (const auto& seg : result.segments) {
        d.segments.push_back(seg.values);
        d.subject_ids.push_back(seg.subject_id);
        Segment s = seg;
        d.labels.push_back(segment_morphology(s));
      }
    }
    return d;
  }();
  return dataset;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.encoder.n_blocks = 4;
  mc.encoder.base_filters = 4;
  mc.encoder.filters_double_every = 2;
  mc.encoder.embedding_dim = 16;
  mc.encoder.input_len = 1250;
  mc.moe_hidden = 8;
  mc.init_seed = 5;
  return mc;
}

Tensor<double> random_embeddings(int64_t rows, int64_t dim, uint64_t seed) {
  Tensor<double> z({rows, dim});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = dist(rng);
  return z;
}

std::vector<std::vector<double>> to_rows(const Tensor<double>& z) {
  std::vector<std::vector<double>> rows;
  for (int64_t i = 0; i < z.dim(0); ++i)
    rows.emplace_back(z.data() + i * z.dim(1), z.data() + (i + 1) * z.dim(1));
  return rows;
}

}  // namespace

TEST_SUITE_BEGIN("ssl");

TEST_CASE("ntxent with a single pair is exactly zero") {
  auto z = Var<double>::leaf(random_embeddings(2, 8, 1));
  CHECK(ntxent(z, 0.5).value().item() == 0.0);
  auto zf = Var<float>::leaf(random_embeddings(2, 8, 2).cast<float>());
  CHECK(ntxent(zf, 0.5f).value().item() == 0.0f);
}

TEST_CASE("ntxent equals the literal double-loop formula") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int64_t> pairs(1, 8);
  for (int rep = 0; rep < 40; ++rep) {
    const int64_t n2 = 2 * pairs(rng);
    for (double tau : {0.07, 0.5, 1.0}) {
      const auto zt = random_embeddings(n2, 6, 100 + static_cast<uint64_t>(rep));
      const double loss = ntxent(Var<double>::leaf(zt), tau).value().item();
      const double oracle = oracles::ntxent_bruteforce(to_rows(zt), tau);
      CHECK(loss == doctest::Approx(oracle).epsilon(1e-6));
    }
  }
}

TEST_CASE("ntxent is invariant to per-row positive rescaling") {
  auto zt = random_embeddings(8, 5, 9);
  const double base = ntxent(Var<double>::leaf(zt), 0.5).value().item();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int64_t i = 0; i < 8; ++i) {
    const double a = scale(rng);
    for (int64_t j = 0; j < 5; ++j) zt[i * 5 + j] *= a;
  }
  CHECK(ntxent(Var<double>::leaf(zt), 0.5).value().item() ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("ntxent is equivariant under pair permutation") {
  const auto zt = random_embeddings(12, 4, 13);
  const double base = ntxent(Var<double>::leaf(zt), 0.5).value().item();
  // Move pair blocks around, keeping members adjacent.
  const std::vector<int64_t> order = {2, 0, 5, 1, 4, 3};
  Tensor<double> perm({12, 4});
  for (int64_t p = 0; p < 6; ++p)
    for (int64_t m = 0; m < 2; ++m)
      for (int64_t j = 0; j < 4; ++j)
        perm[(2 * p + m) * 4 + j] = zt[(2 * order[static_cast<size_t>(p)] + m) * 4 + j];
  CHECK(ntxent(Var<double>::leaf(perm), 0.5).value().item() ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("ntxent rejects zero-norm rows and odd batch sizes") {
  Tensor<double> z({2, 3});
  z[0] = 1.0;  // row ; row 1 stays zero
  CHECK_THROWS_AS(ntxent(Var<double>::leaf(z), 0.5), std::domain_error);
  CHECK_THROWS_AS(ntxent(Var<double>::leaf(random_embeddings(3, 3, 1)), 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(ntxent(Var<double>::leaf(random_embeddings(4, 3, 1)), 0.0),
                  std::invalid_argument);
}

TEST_CASE("ntxent backward propagates a finite gradient") {
  auto z = Var<double>::leaf(random_embeddings(8, 5, 17), true);
  auto loss = ntxent(z, 0.5);
  ad::backward(loss);
  double norm = 0.0;
  for (int64_t i = 0; i < z.grad().numel(); ++i) norm += z.grad()[i] * z.grad()[i];
  CHECK(norm > 0.0);
  CHECK(std::isfinite(norm));
}

TEST_CASE("head losses: exact cases") {
  auto make = [](std::vector<double> v) {
    Tensor<double> t({static_cast<int64_t>(v.size())}, v);
    return Var<double>::leaf(std::move(t), true);
  };

  SUBCASE("predictions equal targets") {
    auto [li, ls] = head_losses(make({1.0, 3.0}), make({0.5, 0.5}), {1.0, 3.0},
                                {1, 1}, {0.5, 0.5});
    CHECK(li.value().item() == 0.0);
    CHECK(ls.value().item() == 0.0);
  }
  SUBCASE("targets [1,3] vs predictions [2,2] give MAE 1") {
    auto [li, ls] = head_losses(make({2.0, 2.0}), make({2.0, 2.0}), {1.0, 3.0},
                                {1, 1}, {1.0, 3.0});
    CHECK(li.value().item() == doctest::Approx(1.0));
    CHECK(ls.value().item() == doctest::Approx(1.0));
  }
  SUBCASE("mask excludes one of two samples") {
    auto [li, ls] = head_losses(make({2.0, 100.0}), make({0.0, 0.0}), {1.0, 0.0},
                                {1, 0}, {0.0, 0.0});
    CHECK(li.value().item() == doctest::Approx(1.0));  // only the first counts
    CHECK(ls.value().item() == 0.0);
  }
  SUBCASE("empty mask gives a constant zero with no gradient") {
    auto pred = make({2.0, 3.0});
    auto [li, ls] = head_losses(pred, make({0.0, 0.0}), {0.0, 0.0}, {0, 0}, {0.0, 0.0});
    CHECK(li.value().item() == 0.0);
    CHECK_FALSE(li.requires_grad());
  }
}

TEST_CASE("loss_total_s combines exactly per the weighting rule") {
  auto scalar = [](double v, bool grad = false) {
    return Var<double>::leaf(Tensor<double>::scalar(v), grad);
  };
  CHECK(loss_total_s(scalar(1.0), scalar(2.0), scalar(3.0), 1.0).value().item() == 1.0);
  CHECK(loss_total_s(scalar(1.0), scalar(2.0), scalar(3.0), 0.0).value().item() == 5.0);
  CHECK(loss_total_s(scalar(1.0), scalar(2.0), scalar(3.0), 0.6).value().item() ==
        doctest::Approx(2.6).epsilon(1e-12));
  CHECK_THROWS_AS(loss_total_s(scalar(1.0), scalar(2.0), scalar(3.0), 1.5),
                  std::invalid_argument);
}

TEST_CASE("sample_batch_p: members share a subject and are distinct segments") {
  const auto& data = fixture_dataset();
  const auto aug = AugmentConfig::participant_defaults();
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    auto rng = rng_stream(1, seed);
    const auto batch = sample_batch_p(data, 3, aug, rng);
    REQUIRE(batch.subject_ids.size() == 6);
    for (int k = 0; k < 3; ++k) {
      CHECK(batch.subject_ids[2 * k] == batch.subject_ids[2 * k + 1]);
      CHECK(batch.segment_indices[2 * k] != batch.segment_indices[2 * k + 1]);
    }
    CHECK(batch.x.shape() == std::vector<int64_t>{6, 1, 1250});
  }
}

TEST_CASE("sample_batch_p never draws a single-segment subject") {
  TrainDataset d = fixture_dataset();
  d.segments.push_back(d.segments.front());
  d.subject_ids.push_back("loner");
  d.labels.push_back(std::nullopt);
  const auto aug = AugmentConfig::participant_defaults();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    auto rng = rng_stream(2, seed);
    const auto batch = sample_batch_p(d, 4, aug, rng);
    for (const auto& s : batch.subject_ids) CHECK(s != "loner");
  }
}

TEST_CASE("sample_batch_p fails when no subject has two segments") {
  TrainDataset d;
  d.fs_hz = 125.0;
  d.segment_length = 4;
  d.segments = {{0.f, 1.f, 2.f, 3.f}};
  d.subject_ids = {"only"};
  d.labels = {std::nullopt};
  auto rng = rng_stream(3, 0);
  CHECK_THROWS_AS(sample_batch_p(d, 1, AugmentConfig::participant_defaults(), rng),
                  std::runtime_error);
}

TEST_CASE("sample_batch_s: pairs share a bin and may cross subjects") {
  const auto& data = fixture_dataset();
  const auto edges = fit_bins(data.labeled_svri(), 4);
  const auto aug = AugmentConfig::morphology_defaults();
  bool crossed_subjects = false;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    auto rng = rng_stream(4, seed);
    const auto batch = sample_batch_s(data, edges, 3, aug, rng);
    REQUIRE(batch.bins.size() == 6);
    REQUIRE(batch.y_sqi.size() == 6);
    for (int k = 0; k < 3; ++k) {
      CHECK(batch.bins[2 * k] >= 0);
      CHECK(batch.bins[2 * k] == batch.bins[2 * k + 1]);
      CHECK(batch.segment_indices[2 * k] != batch.segment_indices[2 * k + 1]);
      if (batch.subject_ids[2 * k] != batch.subject_ids[2 * k + 1])
        crossed_subjects = true;
    }
    for (size_t i = 0; i < 6; ++i) {
      CHECK(std::isfinite(batch.y_sqi[i]));
      if (batch.ipa_mask[i]) CHECK(batch.y_ipa[i] > 0.0);
    }
  }
  CHECK(crossed_subjects);
}

TEST_CASE("sample_batch_s never draws unlabeled segments") {
  TrainDataset d = fixture_dataset();
  d.labels[0] = std::nullopt;
  d.labels[1] = std::nullopt;
  const auto edges = fit_bins(d.labeled_svri(), 4);
  const auto aug = AugmentConfig::morphology_defaults();
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto rng = rng_stream(5, seed);
    const auto batch = sample_batch_s(d, edges, 3, aug, rng);
    for (int64_t idx : batch.segment_indices) CHECK(idx >= 2);
  }
}

TEST_CASE("sample_batch_s fails when every bin is underpopulated") {
  TrainDataset d;
  d.fs_hz = 125.0;
  d.segment_length = 1250;
  std::mt19937_64 init(9);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (int i = 0; i < 8; ++i) {
    std::vector<float> seg(1250);
    for (auto& v : seg) v = dist(init);
    d.segments.push_back(std::move(seg));
    d.subject_ids.push_back("s" + std::to_string(i));
    MorphologyLabels l;
    l.svri = 1.0 + 0.1 * i;
    l.sqi = 0.0;
    d.labels.push_back(l);
  }
  const auto edges = fit_bins(d.labeled_svri(), 8);  // one segment per bin
  auto rng = rng_stream(6, 0);
  CHECK_THROWS_AS(sample_batch_s(d, edges, 2, AugmentConfig::morphology_defaults(), rng),
                  std::runtime_error);
}

TEST_CASE("50-step training runs are bit-reproducible") {
  TrainConfig tc = TrainConfig::defaults(ContrastiveMode::morphology);
  tc.steps = 50;
  tc.batch_pairs = 3;
  tc.bins = 4;
  tc.seed = 11;
  tc.lr = 1e-3;

  auto run = [&] { return train(fixture_dataset(), tc, tiny_model()); };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.log.size() == 50);
  REQUIRE(b.log.size() == 50);
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);  // bit-identical
    CHECK(a.log[i].svri == b.log[i].svri);
    CHECK(a.log[i].ipa == b.log[i].ipa);
    CHECK(a.log[i].sqi == b.log[i].sqi);
  }
}

TEST_CASE("alpha = 1 never touches the MoE heads") {
  TrainConfig tc = TrainConfig::defaults(ContrastiveMode::morphology);
  tc.steps = 3;
  tc.batch_pairs = 2;
  tc.bins = 4;
  tc.alpha = 1.0;
  auto result = train(fixture_dataset(), tc, tiny_model());
  for (const char* group : {"moe_ipa", "moe_sqi"}) {
    auto params = result.model->parameters(group);
    REQUIRE(!params.empty());
    for (auto& p : params) CHECK_FALSE(p.var.has_grad());
  }
  for (const auto& row : result.log) {
    CHECK(row.ipa == 0.0);
    CHECK(row.sqi == 0.0);
  }
}

TEST_CASE("alpha in (0,1) sends gradient into all four groups") {
  const auto& data = fixture_dataset();
  const auto edges = fit_bins(data.labeled_svri(), 4);
  SslModel<float> model([&] {
    ModelConfig mc = tiny_model();
    mc.mode = ModelMode::morphology;
    return mc;
  }());
  auto rng = rng_stream(21, 0);
  auto batch = sample_batch_s(data, edges, 3, AugmentConfig::morphology_defaults(), rng);
  std::mt19937_64 drop_rng(1);
  nn::Ctx<float> ctx{true, &drop_rng};
  auto x = Var<float>::leaf(std::move(batch.x), false);
  auto h = model.encode(x, ctx);
  auto l_svri = ntxent(model.project(h), 0.5f);
  auto [l_ipa, l_sqi] = head_losses(model.predict_ipa(h), model.predict_sqi(h),
                                    batch.y_ipa, batch.ipa_mask, batch.y_sqi);
  ad::backward(loss_total_s(l_svri, l_ipa, l_sqi, 0.6f));

  for (const char* group : {"encoder", "projection", "moe_ipa", "moe_sqi"}) {
    bool any_nonzero = false;
    for (auto& p : model.parameters(group)) {
      if (!p.var.has_grad()) continue;
      for (int64_t i = 0; i < p.var.grad().numel() && !any_nonzero; ++i)
        any_nonzero = p.var.grad()[i] != 0.0f;
      if (any_nonzero) break;
    }
    CAPTURE(group);
    CHECK(any_nonzero);
  }
}

TEST_CASE("divergence guard aborts on an exploding run") {
  TrainConfig tc = TrainConfig::defaults(ContrastiveMode::morphology);
  tc.steps = 40;
  tc.batch_pairs = 2;
  tc.bins = 4;
  // Batch norm keeps moderate blow-ups finite; the step size must push
  // intermediate squares past f32 range to produce a non-finite loss.
  tc.lr = 1e30;
  CHECK_THROWS(train(fixture_dataset(), tc, tiny_model()));
}

TEST_CASE("train validates alpha before any compute") {
  TrainConfig tc = TrainConfig::defaults(ContrastiveMode::morphology);
  tc.alpha = 1.5;
  CHECK_THROWS_AS(train(fixture_dataset(), tc, tiny_model()), std::invalid_argument);
}

TEST_SUITE_END();
