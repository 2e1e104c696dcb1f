#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <vector>

#include "capaint/core/sequence.hpp"
#include "capaint/diffusion/schedule.hpp"

namespace capaint::diffusion {

/// epsilon_theta(x_t, t): predicts the noise in x_t. x_t is [B, C, H, W],
/// steps is an int64 [B] tensor of 1-based diffusion steps.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& steps) = 0;
  virtual bool trained() const { return true; }
};

struct DenoiserConfig {
  int64_t channels = 1;
  int64_t base_channels = 8;
  std::vector<int64_t> channel_mults{1, 2, 4};
  int64_t time_dim = 32;
  int64_t groups = 8;

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_embedding);

  torch::nn::GroupNorm norm1{nullptr};
  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Linear time_proj{nullptr};
  torch::nn::GroupNorm norm2{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Small U-shaped convolutional network with a sinusoidal step embedding.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const DenoiserConfig& config);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& steps);

  const DenoiserConfig& config() const { return config_; }

 private:
  DenoiserConfig config_;
  torch::nn::Linear time1{nullptr}, time2{nullptr};
  torch::nn::Conv2d conv_in{nullptr};
  torch::nn::ModuleList down_blocks{nullptr}, downsamples{nullptr};
  ResidualBlock mid{nullptr};
  torch::nn::ModuleList up_blocks{nullptr}, upsamples{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(UNet);

/// Sinusoidal embedding of (possibly fractional) step values, [B] -> [B, dim].
torch::Tensor step_embedding(const torch::Tensor& steps, int64_t dim);

/// The learned noise predictor together with the schedule it was fit under.
class DenoiserModel : public NoisePredictor {
 public:
  DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule, std::uint64_t seed);

  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& steps) override;
  bool trained() const override { return trained_steps_ > 0; }

  UNet& network() { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const DenoiserConfig& config() const { return net_->config(); }
  std::uint64_t seed() const { return seed_; }
  int64_t trained_steps() const { return trained_steps_; }
  void set_trained_steps(int64_t steps) { trained_steps_ = steps; }

 private:
  UNet net_{nullptr};
  NoiseSchedule schedule_;
  std::uint64_t seed_;
  int64_t trained_steps_ = 0;
};

struct DenoiserTrainConfig {
  int64_t steps = 3000;
  int64_t batch_size = 32;
  double learning_rate = 2e-3;
  int64_t probe_size = 64;
  int64_t log_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserTrainConfig from_json(const nlohmann::json& j);
};

/// L_simple on one batch: || eps - eps_theta(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t) ||^2,
/// averaged over elements. x0 [B, C, H, W], steps [B], noise like x0.
torch::Tensor simple_loss(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                          const torch::Tensor& steps, const torch::Tensor& noise);

struct DenoiserTrainResult {
  std::vector<double> losses;  // running mean per log interval
  double initial_probe_loss = 0.0;
  double final_probe_loss = 0.0;
};

/// Fits epsilon_theta on every frame of `sequences`: per step draw frames,
/// uniform t, Gaussian noise; Adam on L_simple. Deterministic under seed.
DenoiserTrainResult train_denoiser(DenoiserModel& model, const std::vector<STSequence>& sequences,
                                   const DenoiserTrainConfig& config);

void save_denoiser(const std::filesystem::path& path, DenoiserModel& model);
std::unique_ptr<DenoiserModel> load_denoiser(const std::filesystem::path& path);

}  // namespace capaint::diffusion
