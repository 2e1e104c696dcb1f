#include "capaint/augment/sampler.hpp"

#include <algorithm>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::augment {

void SampleParams::validate() const {
  if (!(sample_prob >= 0.0 && sample_prob <= 1.0)) throw ConfigError("sample_prob must lie in [0, 1]");
  if (num_copies < 0) throw ConfigError("num_copies must be >= 0");
}

int64_t SampledSequence::generated_frames() const {
  return std::count_if(frame_source.begin(), frame_source.end(), [](int64_t k) { return k > 0; });
}

SampledSequence sample_sequence(const std::vector<STSequence>& group, const SampleParams& params,
                                std::uint64_t draw_seed) {
  params.validate();
  if (group.empty()) throw UsageError("sample_sequence needs a non-empty group");
  const auto& original = group.front();
  const int64_t available = static_cast<int64_t>(group.size()) - 1;
  if (available < params.num_copies)
    throw UsageError("group of '" + original.source_id + "' holds " + std::to_string(available) + " copies, " +
                     std::to_string(params.num_copies) + " requested");
  const int64_t r = params.num_copies;
  const int64_t length = original.length();

  SampledSequence out;
  out.frame_source.assign(static_cast<std::size_t>(length), 0);
  if (r > 0) {
    Rng rng(draw_seed);
    for (int64_t t = 0; t < length; ++t) {
      if (rng.bernoulli(params.sample_prob))
        out.frame_source[static_cast<std::size_t>(t)] = 1 + static_cast<int64_t>(rng.below(static_cast<std::uint64_t>(r)));
    }
  }
  out.sequence = original;
  if (out.generated_frames() == 0) return out;

  auto frames = original.frames.clone();
  for (int64_t t = 0; t < length; ++t) {
    const auto k = out.frame_source[static_cast<std::size_t>(t)];
    if (k > 0) frames[t].copy_(group[static_cast<std::size_t>(k)].frames[t]);
  }
  out.sequence.frames = frames;
  out.sequence.kind = SequenceKind::kGenerated;
  return out;
}

std::uint64_t epoch_draw_seed(std::uint64_t base_seed, int64_t epoch, const std::string& source_id) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(epoch), fnv1a64(source_id)});
}

}  // namespace capaint::augment
