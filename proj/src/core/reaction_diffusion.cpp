#include "capaint/core/reaction_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint {

void ReactionDiffusionConfig::validate() const {
  if (height < 1 || width < 1 || frames < 1 || channels < 1)
    throw ConfigError("reaction-diffusion grid, frame count and channels must be >= 1");
  if (channels > 2) throw ConfigError("reaction-diffusion emits at most 2 channels (u, v)");
  if (steps_per_frame < 1 || warmup_steps < 0) throw ConfigError("invalid step counts");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (diffusion_u < 0.0 || diffusion_v < 0.0 || feed < 0.0 || kill < 0.0)
    throw ConfigError("diffusion and reaction coefficients must be non-negative");
  if (min_seeds < 1 || max_seeds < min_seeds) throw ConfigError("invalid seed-square count range");
  const double max_d = std::max(diffusion_u, diffusion_v);
  if (dt * max_d > 0.25)
    throw ConfigError("unstable: dt * max(D_u, D_v) = " + std::to_string(dt * max_d) + " exceeds 1/4");
  if (reaction && dt * (feed + kill) > 0.5)
    throw ConfigError("unstable: dt * (feed + kill) exceeds 1/2");
  split.validate();
}

nlohmann::json ReactionDiffusionConfig::to_json() const {
  return {{"height", height},         {"width", width},
          {"frames", frames},         {"steps_per_frame", steps_per_frame},
          {"warmup_steps", warmup_steps}, {"dt", dt},
          {"diffusion_u", diffusion_u}, {"diffusion_v", diffusion_v},
          {"feed", feed},             {"kill", kill},
          {"reaction", reaction},     {"channels", channels},
          {"min_seeds", min_seeds},   {"max_seeds", max_seeds},
          {"init_seed", init_seed},
          {"split", {split.train, split.val, split.test}}};
}

ReactionDiffusionConfig ReactionDiffusionConfig::from_json(const nlohmann::json& j) {
  ReactionDiffusionConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("height", c.height);
  get("width", c.width);
  get("frames", c.frames);
  get("steps_per_frame", c.steps_per_frame);
  get("warmup_steps", c.warmup_steps);
  get("dt", c.dt);
  get("diffusion_u", c.diffusion_u);
  get("diffusion_v", c.diffusion_v);
  get("feed", c.feed);
  get("kill", c.kill);
  get("reaction", c.reaction);
  get("channels", c.channels);
  get("min_seeds", c.min_seeds);
  get("max_seeds", c.max_seeds);
  get("init_seed", c.init_seed);
  if (j.contains("split")) {
    auto s = j.at("split").get<std::vector<double>>();
    if (s.size() != 3) throw ConfigError("split must list three fractions");
    c.split = {s[0], s[1], s[2]};
  }
  return c;
}

torch::Tensor simulate_reaction_diffusion(const ReactionDiffusionConfig& config, std::uint64_t sequence_seed) {
  const int64_t h = config.height, w = config.width;
  const std::size_t cells = static_cast<std::size_t>(h * w);
  std::vector<double> u(cells, 1.0), v(cells, 0.0), nu(cells), nv(cells);
  Rng rng(sequence_seed);

  const int64_t num_seeds =
      config.min_seeds + static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(config.max_seeds - config.min_seeds + 1)));
  for (int64_t s = 0; s < num_seeds; ++s) {
    const int64_t side = 2 + static_cast<int64_t>(rng.below(4));
    const int64_t r0 = static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(h)));
    const int64_t c0 = static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(w)));
    for (int64_t r = 0; r < side; ++r)
      for (int64_t c = 0; c < side; ++c) {
        const auto idx = static_cast<std::size_t>(((r0 + r) % h) * w + (c0 + c) % w);
        u[idx] = 0.5;
        v[idx] = 0.25;
      }
  }
  for (std::size_t i = 0; i < cells; ++i) {
    u[i] += 0.02 * (rng.uniform() - 0.5);
    v[i] = std::max(0.0, v[i] + 0.02 * (rng.uniform() - 0.5));
  }

  auto lap = [&](const std::vector<double>& f, int64_t r, int64_t c) {
    const double centre = f[static_cast<std::size_t>(r * w + c)];
    const double up = f[static_cast<std::size_t>(((r + h - 1) % h) * w + c)];
    const double down = f[static_cast<std::size_t>(((r + 1) % h) * w + c)];
    const double left = f[static_cast<std::size_t>(r * w + (c + w - 1) % w)];
    const double right = f[static_cast<std::size_t>(r * w + (c + 1) % w)];
    return up + down + left + right - 4.0 * centre;
  };
  auto step = [&]() {
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        const auto i = static_cast<std::size_t>(r * w + c);
        double du = config.diffusion_u * lap(u, r, c);
        double dv = config.diffusion_v * lap(v, r, c);
        if (config.reaction) {
          const double uvv = u[i] * v[i] * v[i];
          du += -uvv + config.feed * (1.0 - u[i]);
          dv += uvv - (config.feed + config.kill) * v[i];
        }
        nu[i] = u[i] + config.dt * du;
        nv[i] = v[i] + config.dt * dv;
      }
    u.swap(nu);
    v.swap(nv);
  };

  for (int64_t s = 0; s < config.warmup_steps; ++s) step();
  auto out = torch::empty({config.frames, h, w, config.channels}, torch::kFloat64);
  auto acc = out.accessor<double, 4>();
  for (int64_t t = 0; t < config.frames; ++t) {
    if (t > 0)
      for (int64_t s = 0; s < config.steps_per_frame; ++s) step();
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        const auto i = static_cast<std::size_t>(r * w + c);
        if (!std::isfinite(u[i]) || !std::isfinite(v[i]))
          throw NumericError("reaction-diffusion blew up at frame " + std::to_string(t));
        if (config.channels == 1) {
          acc[t][r][c][0] = v[i];
        } else {
          acc[t][r][c][0] = u[i];
          acc[t][r][c][1] = v[i];
        }
      }
  }
  return out;
}

Dataset generate_reaction_diffusion(const ReactionDiffusionConfig& config, int64_t num_sequences) {
  config.validate();
  if (num_sequences < 1) throw ConfigError("num_sequences must be >= 1");

  std::vector<torch::Tensor> raw;
  raw.reserve(static_cast<std::size_t>(num_sequences));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int64_t i = 0; i < num_sequences; ++i) {
    raw.push_back(simulate_reaction_diffusion(config, derive_seed(config.init_seed, {static_cast<std::uint64_t>(i)})));
    lo = std::min(lo, raw.back().min().item<double>());
    hi = std::max(hi, raw.back().max().item<double>());
  }
  RawRange range{lo, hi};
  if (!(hi > lo)) range = {lo - 0.5, hi + 0.5};  // frozen dynamics: any span works

  std::vector<STSequence> sequences;
  for (int64_t i = 0; i < num_sequences; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "%06lld", static_cast<long long>(i));
    STSequence s;
    s.frames = normalize(raw[static_cast<std::size_t>(i)], range).to(torch::kFloat32).clamp(-1.0, 1.0).contiguous();
    s.raw_range = range;
    s.source_id = id;
    sequences.push_back(std::move(s));
  }
  auto dataset = make_dataset("reaction_diffusion", std::move(sequences), range, config.split, config.init_seed);
  auto manifest = dataset.manifest();
  manifest.generator = config.to_json();
  return Dataset(std::move(manifest), dataset.sequences());
}

}  // namespace capaint
