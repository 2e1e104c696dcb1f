#include "capaint/core/sequence.hpp"

#include "capaint/error.hpp"

namespace capaint {

const char* to_string(SequenceKind kind) {
  return kind == SequenceKind::kOriginal ? "original" : "generated";
}

SequenceKind sequence_kind_from_string(const std::string& name) {
  if (name == "original") return SequenceKind::kOriginal;
  if (name == "generated") return SequenceKind::kGenerated;
  throw IntegrityError("unknown sequence kind '" + name + "'");
}

void STSequence::validate() const {
  if (!frames.defined() || frames.dim() != 4)
    throw DimensionError("sequence '" + source_id + "': frames must be rank 4 [T, H, W, C]");
  static const char* kAxes[] = {"T", "H", "W", "C"};
  for (int64_t d = 0; d < 4; ++d) {
    if (frames.size(d) < 1)
      throw DimensionError("sequence '" + source_id + "': axis " + kAxes[d] + " is empty");
  }
  if (frames.scalar_type() != torch::kFloat32)
    throw DimensionError("sequence '" + source_id + "': frames must be float32");
  if (!torch::isfinite(frames).all().item<bool>())
    throw NumericError("sequence '" + source_id + "' contains non-finite values");
  if (frames.abs().max().item<float>() > 1.0f)
    throw NumericError("sequence '" + source_id + "' has values outside [-1, 1]");
}

torch::Tensor normalize(const torch::Tensor& raw, const RawRange& range) {
  if (!(range.span() > 0.0)) throw ConfigError("raw range must have positive span");
  auto x = raw.to(torch::kFloat64);
  auto unit = (x - range.min) / range.span();
  return (unit * 2.0 - 1.0).to(raw.scalar_type());
}

torch::Tensor denormalize(const torch::Tensor& normalized, const RawRange& range) {
  if (!(range.span() > 0.0)) throw ConfigError("raw range must have positive span");
  auto x = normalized.to(torch::kFloat64);
  return ((x + 1.0) * 0.5 * range.span() + range.min).to(normalized.scalar_type());
}

torch::Tensor to_channels_first(const torch::Tensor& thwc) {
  return thwc.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor to_channels_last(const torch::Tensor& tchw) {
  return tchw.permute({0, 2, 3, 1}).contiguous();
}

}  // namespace capaint
