#pragma once

#include <torch/torch.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "capaint/core/sequence.hpp"
#include "capaint/diffusion/denoiser.hpp"

namespace capaint::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("capaint_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

/// Uniform values in [-1, 1], shape [T, H, W, C].
inline STSequence random_sequence(const std::string& id, int64_t t, int64_t h, int64_t w, int64_t c,
                                  std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  STSequence s;
  s.frames = torch::rand({t, h, w, c}, gen, torch::kFloat32) * 2.0 - 1.0;
  s.raw_range = {0.0, 2.0};
  s.source_id = id;
  return s;
}

/// eps(x, t) = a x + b t: deterministic, reports itself as trained. Lets the
/// sampler run without a fitted network.
class AffinePredictor : public diffusion::NoisePredictor {
 public:
  AffinePredictor(double a = 0.1, double b = 0.01) : a_(a), b_(b) {}
  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& steps) override {
    auto t = steps.to(x_t.scalar_type()).view({-1, 1, 1, 1});
    return x_t * a_ + t * b_;
  }
  bool trained() const override { return true; }
  double a() const { return a_; }
  double b() const { return b_; }

 private:
  double a_, b_;
};

inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace capaint::test
