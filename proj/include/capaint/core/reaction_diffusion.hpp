#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>

#include "capaint/core/dataset.hpp"

namespace capaint {

/// Two-species Gray-Scott system on a periodic grid with unit spacing,
/// integrated with explicit Euler:
///   du/dt = D_u lap(u) - u v^2 + f (1 - u)
///   dv/dt = D_v lap(v) + u v^2 - (f + k) v
/// The emitted channel is v (C = 1) or (u, v) (C = 2).
struct ReactionDiffusionConfig {
  int64_t height = 32;
  int64_t width = 32;
  int64_t frames = 20;            // T of every emitted sequence
  int64_t steps_per_frame = 100;  // Euler steps between stored frames
  int64_t warmup_steps = 200;     // discarded before the first frame
  double dt = 1.0;
  double diffusion_u = 0.16;
  double diffusion_v = 0.08;
  double feed = 0.035;
  double kill = 0.065;
  bool reaction = true;
  int64_t channels = 1;
  int64_t min_seeds = 2;  // perturbation squares per sequence
  int64_t max_seeds = 5;
  std::uint64_t init_seed = 7;
  SplitFractions split{0.75, 0.1, 0.15};

  /// Throws ConfigError, before any integration, when the explicit scheme
  /// would be unstable: dt * max(D_u, D_v) <= 1/4 and dt * (f + k) <= 1/2.
  void validate() const;

  nlohmann::json to_json() const;
  static ReactionDiffusionConfig from_json(const nlohmann::json& j);
};

/// One raw (physical-unit) trajectory, [T, H, W, C] float64.
torch::Tensor simulate_reaction_diffusion(const ReactionDiffusionConfig& config, std::uint64_t sequence_seed);

/// Simulates `num_sequences` trajectories, normalizes them with the
/// dataset-wide value range and assigns splits. Deterministic in init_seed.
Dataset generate_reaction_diffusion(const ReactionDiffusionConfig& config, int64_t num_sequences);

}  // namespace capaint
