#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "capaint/core/patch.hpp"
#include "capaint/core/sequence.hpp"
#include "capaint/diffusion/denoiser.hpp"
#include "capaint/diffusion/schedule.hpp"

namespace capaint::diffusion {

/// Closed-form forward marginal: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.
torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const NoiseSchedule& schedule, const torch::Tensor& noise);

/// One reverse step from an already evaluated noise prediction:
///   (x_t - beta_t / sqrt(1 - ab_t) * eps) / sqrt(alpha_t) + sigma_t z,
/// with the z term dropped at t == 1.
torch::Tensor p_sample_from_prediction(const torch::Tensor& x_t, const torch::Tensor& eps, int64_t t,
                                       const NoiseSchedule& schedule, const torch::Tensor& z);

/// Reverse step evaluating the model on x_t ([B, C, H, W]).
torch::Tensor p_sample(NoisePredictor& model, const torch::Tensor& x_t, int64_t t, const NoiseSchedule& schedule,
                       const torch::Tensor& z);

/// Known (causal) branch: the forward marginal at step t - 1, with
/// ab_0 = 1 so that t == 1 returns x0 unchanged.
torch::Tensor known_region_sample(const torch::Tensor& x0, int64_t t, const NoiseSchedule& schedule,
                                  const torch::Tensor& noise);

/// mask * known + (1 - mask) * unknown. `mask` is [H, W] or broadcastable
/// against the operands (channels share the mask).
torch::Tensor merge(const torch::Tensor& mask, const torch::Tensor& known, const torch::Tensor& unknown);

struct InpaintParams {
  int64_t resample_count = 1;  // U: passes per reverse step
  std::uint64_t seed = 0;

  void validate() const;
};

/// Number of frames inpainted since process start (or the last reset).
std::uint64_t inpaint_call_count();
void reset_inpaint_call_count();

/// Inpaints the environmental region (mask == 0) of one frame x0 [C, H, W].
/// Causal pixels of the result equal x0 exactly; the rest is clamped to
/// [-1, 1]. Counts as one inpaint call.
torch::Tensor inpaint(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                      const BinaryMask& mask, const InpaintParams& params);

/// Batched inpainting: x0 [B, C, H, W], masks [B, H, W] in {0, 1}, one noise
/// stream per sample seeded by seeds[b]. A sample's noise does not depend on
/// the other members of the batch. Counts as B inpaint calls.
torch::Tensor inpaint_batch(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                            const torch::Tensor& masks, std::span<const std::uint64_t> seeds, int64_t resample_count);

/// Seed used for frame t of a sequence inpainted with base seed `seed`.
std::uint64_t frame_seed(std::uint64_t seed, int64_t frame_index);

/// Inpaints every frame of `sequence` with its own mask (masks [T, H, W]).
/// The result has kind = generated and keeps source_id and raw_range.
STSequence inpaint_sequence(NoisePredictor& model, const NoiseSchedule& schedule, const STSequence& sequence,
                            const torch::Tensor& masks, const InpaintParams& params);

}  // namespace capaint::diffusion
