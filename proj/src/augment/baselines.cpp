#include "capaint/augment/baselines.hpp"

#include <cmath>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::augment {

BaselineKind baseline_kind_from_string(const std::string& name) {
  if (name == "flip") return BaselineKind::kFlip;
  if (name == "rotate") return BaselineKind::kRotate;
  if (name == "crop") return BaselineKind::kCrop;
  throw UsageError("unknown augmentation kind '" + name + "' (expected flip, rotate or crop)");
}

const char* to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kFlip: return "flip";
    case BaselineKind::kRotate: return "rotate";
    case BaselineKind::kCrop: return "crop";
  }
  return "unknown";
}

STSequence baseline_augment(const STSequence& sequence, BaselineKind kind, std::uint64_t seed) {
  Rng rng(seed);
  STSequence out = sequence;
  const auto& f = sequence.frames;  // [T, H, W, C]
  switch (kind) {
    case BaselineKind::kFlip:
      out.frames = f.flip({2}).contiguous();
      break;
    case BaselineKind::kRotate: {
      const int64_t quarter_turns = sequence.height() == sequence.width() ? 1 + static_cast<int64_t>(rng.below(3)) : 2;
      out.frames = torch::rot90(f, quarter_turns, {1, 2}).contiguous();
      break;
    }
    case BaselineKind::kCrop: {
      const int64_t h = sequence.height(), w = sequence.width();
      const auto ch = static_cast<int64_t>(std::ceil(0.8 * static_cast<double>(h)));
      const auto cw = static_cast<int64_t>(std::ceil(0.8 * static_cast<double>(w)));
      const auto r0 = static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(h - ch + 1)));
      const auto c0 = static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(w - cw + 1)));
      auto window = f.slice(1, r0, r0 + ch).slice(2, c0, c0 + cw).permute({0, 3, 1, 2});
      auto resized = torch::nn::functional::interpolate(
          window, torch::nn::functional::InterpolateFuncOptions()
                      .size(std::vector<int64_t>{h, w})
                      .mode(torch::kBilinear)
                      .align_corners(false));
      out.frames = resized.permute({0, 2, 3, 1}).clamp(-1.0, 1.0).contiguous();
      break;
    }
  }
  out.kind = SequenceKind::kGenerated;
  return out;
}

}  // namespace capaint::augment
