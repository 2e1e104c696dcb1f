#include "capaint/core/patch.hpp"

#include <fstream>
#include <string>

#include "capaint/error.hpp"

namespace capaint {

PatchGeometry::PatchGeometry(int64_t height, int64_t width, int64_t channels, int64_t patch_size)
    : height_(height), width_(width), channels_(channels), patch_size_(patch_size) {
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (height < 1 || width < 1 || channels < 1)
    throw DimensionError("frame dimensions must be positive");
  if (height % patch_size != 0)
    throw DimensionError("axis H=" + std::to_string(height) + " is not divisible by patch_size " +
                         std::to_string(patch_size));
  if (width % patch_size != 0)
    throw DimensionError("axis W=" + std::to_string(width) + " is not divisible by patch_size " +
                         std::to_string(patch_size));
}

PatchBlock PatchGeometry::block(int64_t index) const {
  if (index < 0 || index >= num_patches())
    throw IndexError("patch index " + std::to_string(index) + " outside [0, " +
                     std::to_string(num_patches()) + ")");
  return {(index / grid_cols()) * patch_size_, (index % grid_cols()) * patch_size_};
}

int64_t PatchGeometry::index_at_pixel(int64_t row, int64_t col) const {
  if (row < 0 || row >= height_ || col < 0 || col >= width_)
    throw IndexError("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside frame");
  return (row / patch_size_) * grid_cols() + col / patch_size_;
}

namespace {

void check_frame_axes(const torch::Tensor& frames, const PatchGeometry& g) {
  if (frames.dim() < 3) throw DimensionError("patchify expects [..., H, W, C]");
  const int64_t d = frames.dim();
  if (frames.size(d - 3) != g.height())
    throw DimensionError("axis H: got " + std::to_string(frames.size(d - 3)) + ", expected " +
                         std::to_string(g.height()));
  if (frames.size(d - 2) != g.width())
    throw DimensionError("axis W: got " + std::to_string(frames.size(d - 2)) + ", expected " +
                         std::to_string(g.width()));
  if (frames.size(d - 1) != g.channels())
    throw DimensionError("axis C: got " + std::to_string(frames.size(d - 1)) + ", expected " +
                         std::to_string(g.channels()));
}

}  // namespace

torch::Tensor patchify(const torch::Tensor& frames, const PatchGeometry& g) {
  check_frame_axes(frames, g);
  auto lead = frames.sizes().vec();
  lead.resize(lead.size() - 3);
  const int64_t p = g.patch_size();

  std::vector<int64_t> split = lead;
  split.insert(split.end(), {g.grid_rows(), p, g.grid_cols(), p, g.channels()});
  const int64_t k = static_cast<int64_t>(lead.size());
  std::vector<int64_t> order;
  for (int64_t i = 0; i < k; ++i) order.push_back(i);
  order.insert(order.end(), {k, k + 2, k + 1, k + 3, k + 4});

  std::vector<int64_t> out = lead;
  out.insert(out.end(), {g.num_patches(), g.patch_dim()});
  return frames.reshape(split).permute(order).reshape(out).contiguous();
}

torch::Tensor unpatchify(const torch::Tensor& patches, const PatchGeometry& g) {
  if (patches.dim() < 2) throw DimensionError("unpatchify expects [..., N, p*p*C]");
  const int64_t d = patches.dim();
  if (patches.size(d - 2) != g.num_patches())
    throw DimensionError("axis N: got " + std::to_string(patches.size(d - 2)) + " patches, expected " +
                         std::to_string(g.num_patches()));
  if (patches.size(d - 1) != g.patch_dim())
    throw DimensionError("patch row length: got " + std::to_string(patches.size(d - 1)) +
                         ", expected " + std::to_string(g.patch_dim()));
  auto lead = patches.sizes().vec();
  lead.resize(lead.size() - 2);
  const int64_t p = g.patch_size();

  std::vector<int64_t> split = lead;
  split.insert(split.end(), {g.grid_rows(), g.grid_cols(), p, p, g.channels()});
  const int64_t k = static_cast<int64_t>(lead.size());
  std::vector<int64_t> order;
  for (int64_t i = 0; i < k; ++i) order.push_back(i);
  order.insert(order.end(), {k, k + 2, k + 1, k + 3, k + 4});

  std::vector<int64_t> out = lead;
  out.insert(out.end(), {g.height(), g.width(), g.channels()});
  return patches.reshape(split).permute(order).reshape(out).contiguous();
}

int64_t BinaryMask::causal_pixels() const {
  return values_.sum().item<double>();
}

BinaryMask BinaryMask::all_causal(const PatchGeometry& geometry) {
  return mask_from_partition({}, geometry);
}

BinaryMask mask_from_partition(std::span<const int64_t> env_indices, const PatchGeometry& g) {
  auto values = torch::ones({g.height(), g.width()}, torch::kFloat32);
  auto acc = values.accessor<float, 2>();
  const int64_t p = g.patch_size();
  for (int64_t index : env_indices) {
    const PatchBlock b = g.block(index);
    for (int64_t r = b.row; r < b.row + p; ++r)
      for (int64_t c = b.col; c < b.col + p; ++c) acc[r][c] = 0.0f;
  }
  return BinaryMask(values);
}

std::filesystem::path export_mask(const BinaryMask& mask, const std::filesystem::path& dir,
                                  const std::string& source_id, int64_t frame_index) {
  std::filesystem::create_directories(dir);
  auto path = dir / ("mask_" + source_id + "_" + std::to_string(frame_index) + ".u8");
  auto bytes = ((1.0f - mask.values()) * 255.0f).to(torch::kUInt8).contiguous();
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), bytes.numel());
  if (!out) throw IntegrityError("failed to write " + path.string());
  return path;
}

}  // namespace capaint
