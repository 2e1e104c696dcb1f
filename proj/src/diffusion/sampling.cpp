#include "capaint/diffusion/sampling.hpp"

#include <cmath>
#include <string>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::diffusion {

namespace {
std::atomic<std::uint64_t> g_inpaint_calls{0};

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw DimensionError(std::string(what) + ": operand shapes differ");
}
}  // namespace

torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const NoiseSchedule& schedule, const torch::Tensor& noise) {
  schedule.check_step(t);
  require_same_shape(x0, noise, "q_sample");
  const double ab = schedule.alpha_bar(t);
  return x0 * std::sqrt(ab) + noise * std::sqrt(1.0 - ab);
}

torch::Tensor p_sample_from_prediction(const torch::Tensor& x_t, const torch::Tensor& eps, int64_t t,
                                       const NoiseSchedule& schedule, const torch::Tensor& z) {
  schedule.check_step(t);
  require_same_shape(x_t, eps, "p_sample");
  const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  auto mean = (x_t - eps * coef) * (1.0 / std::sqrt(schedule.alpha(t)));
  if (t == 1) return mean;
  require_same_shape(x_t, z, "p_sample");
  return mean + z * schedule.sigma(t);
}

torch::Tensor p_sample(NoisePredictor& model, const torch::Tensor& x_t, int64_t t, const NoiseSchedule& schedule,
                       const torch::Tensor& z) {
  schedule.check_step(t);
  auto steps = torch::full({x_t.size(0)}, t, torch::kLong);
  return p_sample_from_prediction(x_t, model.predict(x_t, steps), t, schedule, z);
}

torch::Tensor known_region_sample(const torch::Tensor& x0, int64_t t, const NoiseSchedule& schedule,
                                  const torch::Tensor& noise) {
  schedule.check_step(t);
  if (t == 1) return x0.clone();
  return q_sample(x0, t - 1, schedule, noise);
}

torch::Tensor merge(const torch::Tensor& mask, const torch::Tensor& known, const torch::Tensor& unknown) {
  require_same_shape(known, unknown, "merge");
  const int64_t d = known.dim();
  if (mask.dim() > d || mask.size(-1) != known.size(d - 1) || mask.size(-2) != known.size(d - 2))
    throw DimensionError("merge: mask spatial axes disagree with the operands");
  auto m = mask.to(known.scalar_type());
  return torch::where(m > 0.5, known, unknown);
}

void InpaintParams::validate() const {
  if (resample_count < 1) throw ConfigError("resample_count must be >= 1");
}

std::uint64_t inpaint_call_count() { return g_inpaint_calls.load(); }
void reset_inpaint_call_count() { g_inpaint_calls.store(0); }

std::uint64_t frame_seed(std::uint64_t seed, int64_t frame_index) {
  return derive_seed(seed, {static_cast<std::uint64_t>(frame_index)});
}

torch::Tensor inpaint_batch(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                            const torch::Tensor& masks, std::span<const std::uint64_t> seeds, int64_t resample_count) {
  if (!model.trained()) throw UsageError("inpaint requires a trained denoiser");
  if (resample_count < 1) throw ConfigError("resample_count must be >= 1");
  if (x0.dim() != 4) throw DimensionError("inpaint expects x0 as [B, C, H, W]");
  const int64_t b = x0.size(0);
  if (masks.dim() != 3 || masks.size(0) != b || masks.size(1) != x0.size(2) || masks.size(2) != x0.size(3))
    throw DimensionError("inpaint masks must be [B, H, W] matching x0");
  if (static_cast<int64_t>(seeds.size()) != b) throw DimensionError("inpaint needs one seed per batch sample");

  torch::NoGradGuard no_grad;
  std::vector<at::Generator> gens;
  for (auto s : seeds) gens.push_back(at::detail::createCPUGenerator(s));
  const std::vector<int64_t> sample_shape{1, x0.size(1), x0.size(2), x0.size(3)};
  auto draw = [&]() {
    std::vector<torch::Tensor> parts;
    parts.reserve(gens.size());
    for (auto& g : gens) parts.push_back(torch::randn(sample_shape, g, x0.scalar_type()));
    return torch::cat(parts, 0);
  };
  auto m = masks.unsqueeze(1);

  auto x = draw();
  for (int64_t t = schedule.num_steps(); t >= 1; --t) {
    for (int64_t u = 0; u < resample_count; ++u) {
      auto eps = draw();
      auto z = draw();
      auto known = known_region_sample(x0, t, schedule, eps);
      auto unknown = p_sample(model, x, t, schedule, z);
      auto merged = merge(m, known, unknown);
      if (!torch::isfinite(merged).all().item<bool>())
        throw NumericError("non-finite sample at diffusion step " + std::to_string(t));
      if (u + 1 < resample_count && t > 1) {
        const double beta_prev = schedule.beta(t - 1);
        x = merged * std::sqrt(1.0 - beta_prev) + draw() * std::sqrt(beta_prev);
      } else {
        x = merged;
        break;
      }
    }
  }
  g_inpaint_calls.fetch_add(static_cast<std::uint64_t>(b));
  return merge(m, x0, x.clamp(-1.0, 1.0));
}

torch::Tensor inpaint(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                      const BinaryMask& mask, const InpaintParams& params) {
  params.validate();
  if (x0.dim() != 3) throw DimensionError("inpaint expects a single frame [C, H, W]");
  const std::uint64_t seed = params.seed;
  return inpaint_batch(model, schedule, x0.unsqueeze(0), mask.values().unsqueeze(0), {&seed, 1},
                       params.resample_count)
      .squeeze(0);
}

STSequence inpaint_sequence(NoisePredictor& model, const NoiseSchedule& schedule, const STSequence& sequence,
                            const torch::Tensor& masks, const InpaintParams& params) {
  params.validate();
  const int64_t length = sequence.length();
  if (masks.dim() != 3 || masks.size(0) != length)
    throw DimensionError("inpaint_sequence needs one [H, W] mask per frame");
  std::vector<std::uint64_t> seeds;
  for (int64_t t = 0; t < length; ++t) seeds.push_back(frame_seed(params.seed, t));
  auto out = inpaint_batch(model, schedule, to_channels_first(sequence.frames), masks, seeds, params.resample_count);
  STSequence generated;
  generated.frames = to_channels_last(out);
  generated.raw_range = sequence.raw_range;
  generated.source_id = sequence.source_id;
  generated.kind = SequenceKind::kGenerated;
  return generated;
}

}  // namespace capaint::diffusion
