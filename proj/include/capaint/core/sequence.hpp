#pragma once

#include <torch/torch.h>

#include <string>

namespace capaint {

enum class SequenceKind { kOriginal, kGenerated };

const char* to_string(SequenceKind kind);
SequenceKind sequence_kind_from_string(const std::string& name);

/// Physical-unit interval mapped onto [-1, 1] by normalize().
struct RawRange {
  double min = 0.0;
  double max = 1.0;

  double span() const { return max - min; }
  bool operator==(const RawRange&) const = default;
};

/// One spatio-temporal observation sequence. `frames` is a contiguous float32
/// tensor laid out [T, H, W, C] in normalized units.
struct STSequence {
  torch::Tensor frames;
  RawRange raw_range;
  std::string source_id;
  SequenceKind kind = SequenceKind::kOriginal;

  int64_t length() const { return frames.size(0); }
  int64_t height() const { return frames.size(1); }
  int64_t width() const { return frames.size(2); }
  int64_t channels() const { return frames.size(3); }

  /// Throws DimensionError for a malformed tensor and NumericError for
  /// non-finite or out-of-range values.
  void validate() const;
};

/// Maps raw_range.min to exactly -1 and raw_range.max to exactly +1.
torch::Tensor normalize(const torch::Tensor& raw, const RawRange& range);
torch::Tensor denormalize(const torch::Tensor& normalized, const RawRange& range);

/// [T, H, W, C] -> [T, C, H, W] and back; models work channel-first.
torch::Tensor to_channels_first(const torch::Tensor& thwc);
torch::Tensor to_channels_last(const torch::Tensor& tchw);

}  // namespace capaint
