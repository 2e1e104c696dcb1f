#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "capaint/augment/baselines.hpp"
#include "capaint/augment/repository.hpp"
#include "capaint/augment/sampler.hpp"
#include "capaint/diffusion/schedule.hpp"
#include "capaint/error.hpp"

using namespace capaint;
using namespace capaint::augment;

namespace {

std::vector<STSequence> make_group(int64_t copies, int64_t length, std::uint64_t seed) {
  std::vector<STSequence> group{test::random_sequence("src", length, 4, 4, 1, seed)};
  for (int64_t k = 1; k <= copies; ++k) {
    auto c = test::random_sequence("src", length, 4, 4, 1, seed + 100 * static_cast<std::uint64_t>(k));
    c.kind = SequenceKind::kGenerated;
    group.push_back(c);
  }
  return group;
}

std::map<std::string, decipher::SequencePartitions> partitions_for(const std::vector<STSequence>& seqs,
                                                                   std::vector<int64_t> env) {
  std::map<std::string, decipher::SequencePartitions> out;
  for (const auto& s : seqs) {
    decipher::SequencePartitions sp;
    sp.source_id = s.source_id;
    sp.patch_size = 2;
    sp.causal_fraction = 0.75;
    for (int64_t t = 0; t < s.length(); ++t) {
      decipher::CausalPartition p;
      p.frame_index = t;
      p.environmental = env;
      for (int64_t i = 0; i < 4; ++i)
        if (std::find(env.begin(), env.end(), i) == env.end()) p.causal.push_back(i);
      sp.frames.push_back(p);
    }
    out.emplace(s.source_id, sp);
  }
  return out;
}

}  // namespace

TEST_CASE("sampler degenerate probabilities are exact") {
  auto group = make_group(1, 12, 1);
  auto none = sample_sequence(group, {0.0, 1, 0}, 5);
  CHECK(torch::equal(none.sequence.frames, group[0].frames));
  CHECK(none.generated_frames() == 0);
  CHECK(none.sequence.kind == SequenceKind::kOriginal);
  auto all = sample_sequence(group, {1.0, 1, 0}, 5);
  CHECK(torch::equal(all.sequence.frames, group[1].frames));
  CHECK(all.generated_frames() == 12);
  auto r0 = sample_sequence(group, {1.0, 0, 0}, 5);
  CHECK(torch::equal(r0.sequence.frames, group[0].frames));
}

TEST_CASE("sampler picks each frame from the chosen copy and is seed-deterministic") {
  auto group = make_group(3, 40, 2);
  auto a = sample_sequence(group, {0.5, 3, 0}, 17);
  auto b = sample_sequence(group, {0.5, 3, 0}, 17);
  CHECK(a.frame_source == b.frame_source);
  for (int64_t t = 0; t < 40; ++t) {
    const auto k = a.frame_source[static_cast<std::size_t>(t)];
    CHECK(k >= 0);
    CHECK(k <= 3);
    CHECK(torch::equal(a.sequence.frames[t], group[static_cast<std::size_t>(k)].frames[t]));
  }
  CHECK(epoch_draw_seed(1, 0, "x") != epoch_draw_seed(1, 1, "x"));
  CHECK(epoch_draw_seed(1, 0, "x") != epoch_draw_seed(1, 0, "y"));
}

TEST_CASE("generated-frame fraction concentrates at sample_prob; copies are uniform") {
  auto group = make_group(3, 1000, 3);
  auto s = sample_sequence(group, {0.5, 3, 0}, 99);
  const double n = 1000.0;
  const double frac = static_cast<double>(s.generated_frames()) / n;
  CHECK(std::abs(frac - 0.5) <= 3.0 * std::sqrt(0.25 / n));
  std::array<int, 4> per_copy{};
  for (auto k : s.frame_source) ++per_copy[static_cast<std::size_t>(k)];
  const double g = s.generated_frames();
  for (int k = 1; k <= 3; ++k) CHECK(std::abs(per_copy[k] - g / 3.0) <= 4.0 * std::sqrt(g * (1.0 / 3) * (2.0 / 3)));
}

TEST_CASE("sampler errors") {
  CHECK_THROWS_AS(sample_sequence({}, {0.5, 1, 0}, 0), UsageError);
  auto group = make_group(1, 4, 1);
  CHECK_THROWS_AS(sample_sequence(group, {0.5, 2, 0}, 0), UsageError);
  CHECK_THROWS_AS(sample_sequence(group, {1.5, 1, 0}, 0), ConfigError);
}

TEST_CASE("baseline augmenters") {
  auto s = test::random_sequence("a", 3, 6, 6, 2, 4);
  auto flipped = baseline_augment(s, BaselineKind::kFlip, 0);
  CHECK(torch::equal(baseline_augment(flipped, BaselineKind::kFlip, 0).frames, s.frames));
  CHECK(torch::equal(flipped.frames.select(2, 0), s.frames.select(2, 5)));

  // A frame symmetric under 90-degree rotation survives any rotation.
  auto sym = s;
  auto base = torch::rand({6, 6});
  base = base + base.rot90(1, {0, 1}) + base.rot90(2, {0, 1}) + base.rot90(3, {0, 1});
  base = base / base.abs().max();
  sym.frames = base.view({1, 6, 6, 1}).expand({3, 6, 6, 2}).contiguous();
  for (std::uint64_t seed = 0; seed < 8; ++seed)
    CHECK(torch::allclose(baseline_augment(sym, BaselineKind::kRotate, seed).frames, sym.frames, 0.0, 1e-6));

  // Rotation is the same for every frame.
  auto rotated = baseline_augment(s, BaselineKind::kRotate, 3);
  int matches = 0;
  for (int k = 1; k <= 3; ++k)
    if (torch::equal(rotated.frames, s.frames.rot90(k, {1, 2}))) ++matches;
  CHECK(matches == 1);

  auto wide = test::random_sequence("w", 2, 4, 8, 1, 5);
  for (std::uint64_t seed = 0; seed < 8; ++seed)
    CHECK(baseline_augment(wide, BaselineKind::kRotate, seed).frames.sizes() == wide.frames.sizes());

  auto cropped = baseline_augment(s, BaselineKind::kCrop, 7);
  CHECK(cropped.frames.sizes() == s.frames.sizes());
  CHECK(cropped.frames.abs().max().item<float>() <= 1.0f);
  CHECK_THROWS_AS(baseline_kind_from_string("mixup"), UsageError);
  CHECK(baseline_kind_from_string("crop") == BaselineKind::kCrop);
}

TEST_CASE("repository insert rules") {
  SequenceRepository repo;
  auto a = test::random_sequence("a", 2, 4, 4, 1, 1);
  CHECK_THROWS_AS(repo.insert(a, 1), UsageError);  // copy before original
  repo.insert(a, 0);
  CHECK_THROWS_AS(repo.insert(a, 0), UsageError);  // duplicate key
  auto wrong = test::random_sequence("a", 3, 4, 4, 1, 2);
  CHECK_THROWS_AS(repo.insert(wrong, 1), UsageError);  // shape differs
  repo.insert(a, 1);
  CHECK(repo.size() == 2);
  CHECK(repo.min_copies() == 1);
  CHECK(repo.group("a").size() == 2);
}

TEST_CASE("build_repository: counts, causal fidelity, determinism across workers") {
  test::AffinePredictor model;
  auto sched = diffusion::linear_schedule(8, 1e-4, 0.02);
  std::vector<STSequence> train;
  for (int i = 0; i < 5; ++i) train.push_back(test::random_sequence("s" + std::to_string(i), 3, 4, 4, 1, i));
  const std::vector<int64_t> env{1, 2};
  auto parts = partitions_for(train, env);
  PatchGeometry g(4, 4, 1, 2);
  auto keep = mask_from_partition(env, g).values().view({1, 4, 4, 1}).expand({3, 4, 4, 1}) > 0.5;

  BuildOptions opt;
  opt.num_copies = 2;
  opt.inpaint = {1, 123};
  opt.batch_frames = 4;
  const auto before = diffusion::inpaint_call_count();
  auto repo = build_repository(train, parts, model, sched, opt);
  CHECK(diffusion::inpaint_call_count() - before == 2 * 5 * 3);
  CHECK(repo.size() == 5 * 3);
  for (const auto& s : train) {
    const auto group = repo.group(s.source_id);
    REQUIRE(group.size() == 3);
    CHECK(torch::equal(group[0].frames, s.frames));
    for (std::size_t k = 1; k < 3; ++k) {
      CHECK(torch::equal(group[k].frames.masked_select(keep), s.frames.masked_select(keep)));
      CHECK_FALSE(torch::equal(group[k].frames, s.frames));
    }
    CHECK_FALSE(torch::equal(group[1].frames, group[2].frames));
  }

  opt.workers = 3;
  auto parallel = build_repository(train, parts, model, sched, opt);
  for (const auto& s : train) {
    const auto a = repo.group(s.source_id), b = parallel.group(s.source_id);
    for (std::size_t k = 0; k < 3; ++k) CHECK(torch::equal(a[k].frames, b[k].frames));
  }

  opt.num_copies = 0;
  CHECK(build_repository(train, parts, model, sched, opt).size() == 5);

  parts.erase("s3");
  opt.num_copies = 1;
  CHECK_THROWS_AS(build_repository(train, parts, model, sched, opt), ConfigError);

  test::TempDir dir("repo");
  save_repository(dir.path(), repo);
  auto back = load_repository(dir.path());
  CHECK(back.size() == repo.size());
  for (const auto& s : train)
    for (std::size_t k = 0; k < 3; ++k) CHECK(torch::equal(back.group(s.source_id)[k].frames, repo.group(s.source_id)[k].frames));
  CHECK(back.entries("s0")[1].provenance.seed == repo.entries("s0")[1].provenance.seed);
}
