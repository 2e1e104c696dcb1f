#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "capaint/error.hpp"
#include "capaint/predictor/forecaster.hpp"

using namespace capaint;
using namespace capaint::predictor;

namespace {

BackboneConfig small_backbone(std::uint64_t seed = 0) {
  BackboneConfig c;
  c.hidden_spatial = 4;
  c.hidden_temporal = 8;
  c.translator_depth = 2;
  c.batch_size = 2;
  c.epochs = 2;
  c.seed = seed;
  return c;
}

std::vector<STSequence> sequences(int n, int64_t length, std::uint64_t seed) {
  std::vector<STSequence> out;
  for (int i = 0; i < n; ++i) out.push_back(test::random_sequence("s" + std::to_string(i), length, 8, 8, 1, seed + i));
  return out;
}

std::vector<torch::Tensor> weights(SimVPForecaster& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.network()->parameters()) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

TEST_CASE("forecast shape contract, clamping and purity") {
  ForecastTask task{3, 4, 1, 1};
  SimVPForecaster model(task, small_backbone());
  auto context = test::random_sequence("c", 3, 8, 8, 1, 1).frames;
  auto out = model.forecast(context);
  CHECK(out.sizes() == torch::IntArrayRef({4, 8, 8, 1}));
  CHECK(out.abs().max().item<float>() <= 1.0f);
  CHECK(torch::equal(out, model.forecast(context)));
  CHECK_THROWS_AS(model.forecast(context.slice(0, 0, 2)), DimensionError);

  // Odd frame sizes go through the stride-2 encoder and come back intact.
  auto odd = test::random_sequence("o", 3, 7, 9, 1, 2).frames;
  CHECK(model.forecast(odd).sizes() == torch::IntArrayRef({4, 7, 9, 1}));
}

TEST_CASE("persistence repeats the last context frame") {
  ForecastTask task{3, 2, 1, 1};
  PersistenceForecaster p(task);
  auto context = test::random_sequence("c", 3, 4, 4, 1, 1).frames;
  auto out = p.forecast(context);
  CHECK(out.sizes() == torch::IntArrayRef({2, 4, 4, 1}));
  CHECK(torch::equal(out[0], context[2]));
  CHECK(torch::equal(out[1], context[2]));
}

TEST_CASE("one-cycle schedule shape") {
  const double max_lr = 0.004;
  CHECK(one_cycle_lr(0, 100, max_lr) == doctest::Approx(max_lr / 25.0));
  double peak = 0.0;
  int64_t arg = 0;
  for (int64_t s = 0; s < 100; ++s)
    if (one_cycle_lr(s, 100, max_lr) > peak) peak = one_cycle_lr(s, 100, max_lr), arg = s;
  CHECK(peak == doctest::Approx(max_lr));
  CHECK(arg >= 28);
  CHECK(arg <= 30);
  CHECK(one_cycle_lr(99, 100, max_lr) == doctest::Approx(max_lr / 25.0 / 1e4));
  for (int64_t s = arg; s < 99; ++s) CHECK(one_cycle_lr(s + 1, 100, max_lr) <= one_cycle_lr(s, 100, max_lr));
}

TEST_CASE("too-short sequences are rejected by name") {
  ForecastTask task{3, 4, 1, 1};
  auto s = test::random_sequence("short_one", 5, 8, 8, 1, 0);
  try {
    task.check_sequence(s);
    FAIL("expected an error");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find("short_one") != std::string::npos);
  }
  SimVPForecaster model(task, small_backbone());
  OriginalSource source({s});
  CHECK_THROWS_AS(train_backbone(model, source, {}, small_backbone()), IntegrityError);
}

TEST_CASE("training is deterministic per seed and sensitive to it") {
  ForecastTask task{3, 3, 1, 1};
  const auto train = sequences(5, 8, 10), val = sequences(2, 6, 50);
  SimVPForecaster a(task, small_backbone(1)), b(task, small_backbone(1)), c(task, small_backbone(2));
  OriginalSource source(train);
  const auto ha = train_backbone(a, source, val, small_backbone(1));
  const auto hb = train_backbone(b, source, val, small_backbone(1));
  train_backbone(c, source, val, small_backbone(2));
  REQUIRE(ha.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(ha.epochs[e].train_loss == hb.epochs[e].train_loss);
    CHECK(ha.epochs[e].val_loss == hb.epochs[e].val_loss);
  }
  const auto wa = weights(a), wb = weights(b), wc = weights(c);
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    all_equal = all_equal && torch::equal(wa[i], wb[i]);
    any_diff = any_diff || !torch::equal(wa[i], wc[i]);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("capaint with r = 0 reproduces the baseline bit for bit") {
  ForecastTask task{3, 3, 1, 1};
  const auto train = sequences(4, 6, 20), val = sequences(2, 6, 60);
  augment::SequenceRepository repo;
  std::vector<std::string> ids;
  for (const auto& s : train) {
    repo.insert(s, 0);
    ids.push_back(s.source_id);
  }
  SimVPForecaster base(task, small_backbone(3)), cap(task, small_backbone(3));
  const auto hb = train_backbone(base, OriginalSource(train), val, small_backbone(3));
  const auto hc = train_backbone(cap, CapaintSource(repo, {0.5, 0, 9}, ids), val, small_backbone(3));
  for (std::size_t e = 0; e < hb.epochs.size(); ++e) {
    CHECK(hb.epochs[e].train_loss == hc.epochs[e].train_loss);
    CHECK(hb.epochs[e].val_loss == hc.epochs[e].val_loss);
  }
}

TEST_CASE("a constant dataset is learned to near-zero validation error") {
  ForecastTask task{2, 2, 1, 1};
  std::vector<STSequence> train, val;
  for (int i = 0; i < 8; ++i) {
    STSequence s;
    s.frames = torch::full({4, 8, 8, 1}, 0.3f);
    s.source_id = "c" + std::to_string(i);
    (i < 6 ? train : val).push_back(s);
  }
  auto cfg = small_backbone(4);
  cfg.epochs = 80;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.01;
  SimVPForecaster model(task, cfg);
  const auto h = train_backbone(model, OriginalSource(train), val, cfg);
  double best = 1.0;
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  CHECK(best < 1e-5);
  CHECK(h.epochs.back().val_loss < h.initial_val_loss);
}

TEST_CASE("evaluation reports physical-unit metrics and persistence is exact on static data") {
  ForecastTask task{2, 2, 1, 1};
  STSequence s;
  s.frames = torch::full({4, 8, 8, 1}, -0.5f);
  s.raw_range = {10.0, 20.0};
  s.source_id = "static";
  PersistenceForecaster p(task);
  const auto m = evaluate_forecaster(p, {s});
  CHECK(m.mae == 0.0);
  CHECK(m.mse == 0.0);
  CHECK(std::isinf(m.psnr));
  CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.ssim_global_fallback);

  // A uniform offset of 0.1 in normalized units is 0.5 physical units here.
  STSequence moving = s;
  moving.frames = torch::cat({torch::full({2, 8, 8, 1}, -0.5f), torch::full({2, 8, 8, 1}, -0.4f)});
  const auto m2 = evaluate_forecaster(p, {moving});
  CHECK(m2.mae == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(m2.mse == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("forecaster checkpoint roundtrip") {
  ForecastTask task{3, 2, 1, 1};
  SimVPForecaster model(task, small_backbone(5));
  test::TempDir dir("fc");
  save_forecaster(dir / "m.ckpt", model);
  auto loaded = load_forecaster(dir / "m.ckpt");
  auto context = test::random_sequence("c", 3, 8, 8, 1, 3).frames;
  CHECK(torch::equal(loaded->forecast(context), model.forecast(context)));
  CHECK(loaded->task().forecast_len == 2);
}
