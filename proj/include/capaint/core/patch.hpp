#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>

namespace capaint {

struct PatchBlock {
  int64_t row = 0;  // top-left pixel
  int64_t col = 0;
};

/// Square tiling of an H x W frame into N = HW / p^2 patches. Patch indices
/// run row-major over the patch grid.
class PatchGeometry {
 public:
  PatchGeometry(int64_t height, int64_t width, int64_t channels, int64_t patch_size);

  int64_t height() const { return height_; }
  int64_t width() const { return width_; }
  int64_t channels() const { return channels_; }
  int64_t patch_size() const { return patch_size_; }
  int64_t grid_rows() const { return height_ / patch_size_; }
  int64_t grid_cols() const { return width_ / patch_size_; }
  int64_t num_patches() const { return grid_rows() * grid_cols(); }
  /// Length of one flattened patch row: p * p * C.
  int64_t patch_dim() const { return patch_size_ * patch_size_ * channels_; }

  PatchBlock block(int64_t index) const;
  int64_t index_at_pixel(int64_t row, int64_t col) const;

 private:
  int64_t height_;
  int64_t width_;
  int64_t channels_;
  int64_t patch_size_;
};

/// [..., H, W, C] -> [..., N, p*p*C]. Within a patch the flattening order is
/// row-major over pixels with the channel index fastest.
torch::Tensor patchify(const torch::Tensor& frames, const PatchGeometry& geometry);

/// Exact inverse of patchify.
torch::Tensor unpatchify(const torch::Tensor& patches, const PatchGeometry& geometry);

/// {0,1} mask over an [H, W] frame: 1 marks causal (known) pixels, 0 marks
/// environmental pixels that get inpainted. Always block-constant on the patch
/// tiling because it can only be built from patch indices.
class BinaryMask {
 public:
  const torch::Tensor& values() const { return values_; }
  int64_t height() const { return values_.size(0); }
  int64_t width() const { return values_.size(1); }

  /// Known-region count in pixels.
  int64_t causal_pixels() const;

  static BinaryMask all_causal(const PatchGeometry& geometry);

 private:
  friend BinaryMask mask_from_partition(std::span<const int64_t>, const PatchGeometry&);
  explicit BinaryMask(torch::Tensor values) : values_(std::move(values)) {}
  torch::Tensor values_;  // float32 [H, W]
};

BinaryMask mask_from_partition(std::span<const int64_t> env_indices, const PatchGeometry& geometry);

/// Writes `mask_<id>_<t>.u8`: [H, W] uint8, 255 on environmental pixels and
/// 0 on causal pixels (causal regions render black).
std::filesystem::path export_mask(const BinaryMask& mask, const std::filesystem::path& dir,
                                  const std::string& source_id, int64_t frame_index);

}  // namespace capaint
