#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "capaint/core/patch.hpp"
#include "capaint/diffusion/denoiser.hpp"
#include "capaint/diffusion/sampling.hpp"
#include "capaint/diffusion/schedule.hpp"
#include "capaint/error.hpp"

using namespace capaint;
using namespace capaint::diffusion;

TEST_CASE("linear schedule endpoints, products and bounds") {
  auto s = linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.num_steps() == 1000);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) < 1e-4);  // the forward process reaches ~pure noise
  double prev = 1.0;
  for (int64_t t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < prev);
    CHECK(s.alpha_bar(t) / s.alpha_bar(t - 1) == doctest::Approx(s.alpha(t)).epsilon(1e-12));
    CHECK(s.sigma(t) * s.sigma(t) == doctest::Approx(s.beta(t)).epsilon(1e-14));
    prev = s.alpha_bar(t);
  }
  CHECK_THROWS_AS(s.beta(0), IndexError);
  CHECK_THROWS_AS(s.alpha(1001), IndexError);
  CHECK_THROWS_AS(linear_schedule(0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(linear_schedule(10, 0.02, 1e-4), ConfigError);
  CHECK_THROWS_AS(linear_schedule(10, 1e-4, 1.0), ConfigError);
  CHECK(linear_schedule(1, 0.01, 0.02).beta(1) == 0.01);
  CHECK(schedule_from_json(s.to_json()).alpha_bar(500) == s.alpha_bar(500));
}

TEST_CASE("q_sample Monte-Carlo mean and variance") {
  auto s = linear_schedule(100, 1e-4, 0.02);
  const double x0 = 0.7;
  const int64_t n = 20000;
  auto gen = at::detail::createCPUGenerator(11);
  for (int64_t t : {1, 50, 100}) {
    auto noise = torch::randn({n}, gen, torch::kFloat64);
    auto xt = q_sample(torch::full({n}, x0, torch::kFloat64), t, s, noise);
    const double mean = xt.mean().item<double>(), var = xt.var().item<double>();
    const double want_mean = std::sqrt(s.alpha_bar(t)) * x0, want_var = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(mean - want_mean) < 4.0 * std::sqrt(want_var / n));
    CHECK(std::abs(var - want_var) < 4.0 * want_var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("p_sample on a scalar matches the closed form") {
  // T = 2 with beta = (0.01, 0.01): alpha_bar(2) = 0.99^2.
  auto s = linear_schedule(2, 0.01, 0.01);
  auto x = torch::tensor({1.0}, torch::kFloat64);
  auto eps = torch::tensor({0.2}, torch::kFloat64);
  auto z = torch::tensor({0.5}, torch::kFloat64);
  const double expect2 = (1.0 - 0.01 * 0.2 / std::sqrt(1.0 - 0.99 * 0.99)) / std::sqrt(0.99) + 0.1 * 0.5;
  CHECK(p_sample_from_prediction(x, eps, 2, s, z).item<double>() == doctest::Approx(expect2).epsilon(1e-14));
  // At t = 1 the noise term is dropped: (1 - 0.01 * 0.2 / sqrt(0.01)) / sqrt(0.99).
  const double expect1 = (1.0 - 0.01 * 0.2 / std::sqrt(0.01)) / std::sqrt(0.99);
  CHECK(p_sample_from_prediction(x, eps, 1, s, z).item<double>() == doctest::Approx(expect1).epsilon(1e-14));
  CHECK_THROWS_AS(p_sample_from_prediction(x, eps, 3, s, z), IndexError);
}

TEST_CASE("known-region sampling and merge") {
  auto s = linear_schedule(10, 1e-4, 0.02);
  auto x0 = torch::tensor({0.5, -0.25}, torch::kFloat64);
  auto noise = torch::tensor({1.0, 2.0}, torch::kFloat64);
  CHECK(torch::equal(known_region_sample(x0, 1, s, noise), x0));
  auto k = known_region_sample(x0, 5, s, noise);
  CHECK(torch::allclose(k, q_sample(x0, 4, s, noise), 0.0, 0.0));

  auto mask = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}});
  auto known = torch::full({1, 2, 2}, 3.0);
  auto unknown = torch::full({1, 2, 2}, -3.0);
  auto m = merge(mask, known, unknown);
  CHECK(m[0][0][0].item<double>() == 3.0);
  CHECK(m[0][0][1].item<double>() == -3.0);
  CHECK_THROWS_AS(merge(torch::ones({3, 3}), known, unknown), DimensionError);
}

TEST_CASE("inpainting keeps causal pixels bit-exact and respects seeds") {
  test::AffinePredictor model;
  auto s = linear_schedule(20, 1e-4, 0.02);
  PatchGeometry g(4, 4, 1, 2);
  auto x0 = test::random_sequence("a", 1, 4, 4, 1, 3).frames[0].permute({2, 0, 1}).contiguous();
  const std::vector<int64_t> env{0, 3};
  auto mask = mask_from_partition(env, g);
  for (int64_t u : {1, 3}) {
    InpaintParams params{u, 77};
    auto out = inpaint(model, s, x0, mask, params);
    auto keep = mask.values().unsqueeze(0) > 0.5;
    CHECK(torch::equal(out.masked_select(keep), x0.masked_select(keep)));
    CHECK(out.abs().max().item<float>() <= 1.0f);
    CHECK(torch::equal(out, inpaint(model, s, x0, mask, params)));
    params.seed = 78;
    CHECK_FALSE(torch::equal(out, inpaint(model, s, x0, mask, params)));
  }
  // All-causal mask returns the input untouched.
  CHECK(torch::equal(inpaint(model, s, x0, BinaryMask::all_causal(g), {1, 0}), x0));
}

TEST_CASE("a batch member's sample does not depend on its neighbours") {
  test::AffinePredictor model;
  auto s = linear_schedule(10, 1e-4, 0.02);
  PatchGeometry g(4, 4, 1, 2);
  auto frames = test::random_sequence("a", 3, 4, 4, 1, 4).frames.permute({0, 3, 1, 2}).contiguous();
  auto masks = torch::stack({mask_from_partition(std::vector<int64_t>{0}, g).values(),
                             mask_from_partition(std::vector<int64_t>{1, 2}, g).values(),
                             mask_from_partition(std::vector<int64_t>{3}, g).values()});
  const std::vector<std::uint64_t> seeds{5, 6, 7};
  auto batch = inpaint_batch(model, s, frames, masks, seeds, 2);
  for (int64_t b = 0; b < 3; ++b) {
    const std::uint64_t seed = seeds[static_cast<std::size_t>(b)];
    auto alone = inpaint_batch(model, s, frames.slice(0, b, b + 1), masks.slice(0, b, b + 1), {&seed, 1}, 2);
    CHECK(torch::equal(alone[0], batch[b]));
  }
}

TEST_CASE("inpaint call counter counts frames") {
  test::AffinePredictor model;
  auto s = linear_schedule(5, 1e-4, 0.02);
  PatchGeometry g(4, 4, 1, 2);
  auto seq = test::random_sequence("a", 6, 4, 4, 1, 9);
  auto masks = mask_from_partition(std::vector<int64_t>{1}, g).values().unsqueeze(0).expand({6, 4, 4}).contiguous();
  const auto before = inpaint_call_count();
  auto out = inpaint_sequence(model, s, seq, masks, {1, 3});
  CHECK(inpaint_call_count() - before == 6);
  CHECK(out.kind == SequenceKind::kGenerated);
  CHECK(out.source_id == "a");
  CHECK(out.frames.sizes() == seq.frames.sizes());
}

TEST_CASE("an untrained denoiser is refused") {
  DenoiserConfig c;
  c.base_channels = 4;
  c.channel_mults = {1, 2};
  c.time_dim = 8;
  c.groups = 2;
  DenoiserModel model(c, linear_schedule(5, 1e-4, 0.02), 0);
  PatchGeometry g(4, 4, 1, 2);
  auto x0 = torch::zeros({1, 4, 4});
  CHECK_THROWS_AS(inpaint(model, model.schedule(), x0, BinaryMask::all_causal(g), {1, 0}), UsageError);
}

TEST_CASE("denoiser output shape, training progress and checkpoint roundtrip") {
  DenoiserConfig c;
  c.base_channels = 4;
  c.channel_mults = {1, 2};
  c.time_dim = 8;
  c.groups = 2;
  auto sched = linear_schedule(20, 1e-4, 0.02);
  DenoiserModel model(c, sched, 1);
  auto x = torch::randn({3, 1, 8, 8});
  CHECK(model.predict(x, torch::tensor({1, 10, 20}, torch::kLong)).sizes() == x.sizes());

  std::vector<STSequence> seqs;
  for (int i = 0; i < 4; ++i) {
    auto s = test::random_sequence("s" + std::to_string(i), 4, 8, 8, 1, i);
    s.frames = s.frames * 0.1;  // low-variance data: the noise is easy to identify
    seqs.push_back(s);
  }
  DenoiserTrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 8;
  tc.log_every = 20;
  tc.probe_size = 16;
  const auto fit = train_denoiser(model, seqs, tc);
  CHECK(fit.final_probe_loss < fit.initial_probe_loss);
  CHECK(fit.losses.size() == 3);
  CHECK(model.trained());

  DenoiserModel again(c, sched, 1);
  CHECK(train_denoiser(again, seqs, tc).losses == fit.losses);

  test::TempDir dir("denoiser");
  save_denoiser(dir / "d.ckpt", model);
  auto loaded = load_denoiser(dir / "d.ckpt");
  CHECK(loaded->trained());
  CHECK(loaded->schedule().num_steps() == 20);
  torch::NoGradGuard no_grad;
  model.network()->eval();
  auto steps = torch::tensor({2, 7, 19}, torch::kLong);
  CHECK(torch::equal(loaded->predict(x, steps), model.predict(x, steps)));
}
