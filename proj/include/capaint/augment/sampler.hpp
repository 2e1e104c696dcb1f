#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capaint/core/sequence.hpp"

namespace capaint::augment {

struct SampleParams {
  double sample_prob = 0.5;  // probability a frame is taken from a generated copy
  int64_t num_copies = 1;    // r
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampledSequence {
  STSequence sequence;
  /// Copy index each frame was taken from (0 = original).
  std::vector<int64_t> frame_source;

  int64_t generated_frames() const;
};

/// Per frame t: with probability sample_prob take frame t of a generated copy
/// chosen uniformly from 1..r, otherwise the original's frame t. `group[0]` is
/// the original. With r = 0 the original is returned unchanged.
SampledSequence sample_sequence(const std::vector<STSequence>& group, const SampleParams& params,
                                std::uint64_t draw_seed);

/// Draw seed for (epoch, source): a fresh X' per epoch per sequence.
std::uint64_t epoch_draw_seed(std::uint64_t base_seed, int64_t epoch, const std::string& source_id);

}  // namespace capaint::augment
