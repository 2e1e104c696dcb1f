#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "capaint/augment/baselines.hpp"
#include "capaint/augment/repository.hpp"
#include "capaint/augment/sampler.hpp"
#include "capaint/core/sequence.hpp"
#include "capaint/metrics/metrics.hpp"

namespace capaint::predictor {

struct ForecastTask {
  int64_t context_len = 10;   // T_in
  int64_t forecast_len = 10;  // K_f
  int64_t channels_in = 1;
  int64_t channels_out = 1;

  void validate() const;
  /// Throws a data error naming `source_id` when the sequence is too short.
  void check_sequence(const STSequence& sequence) const;
  nlohmann::json to_json() const;
  static ForecastTask from_json(const nlohmann::json& j);
};

struct BackboneConfig {
  int64_t hidden_spatial = 16;
  int64_t hidden_temporal = 64;
  int64_t translator_depth = 2;
  int64_t groups = 4;
  double learning_rate = 0.004;
  int64_t batch_size = 4;
  int64_t epochs = 20;
  std::uint64_t seed = 0;
  bool keep_best = true;  // restore the weights with the lowest val loss

  void validate() const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

/// Any backbone the harness can train and evaluate. Sequences are
/// [B, T, H, W, C]; the first context_len frames are inputs, the next
/// forecast_len frames are targets.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual const ForecastTask& task() const = 0;
  /// context [T_in, H, W, C_in] -> [K_f, H, W, C_out], clamped to [-1, 1].
  virtual torch::Tensor forecast(const torch::Tensor& context) = 0;
  /// One optimisation step on a batch; returns the batch loss before the step.
  virtual double train_step(const torch::Tensor& sequences) = 0;
  virtual void set_learning_rate(double) {}
  /// Mean squared error on a batch without updating anything.
  virtual double evaluate_loss(const torch::Tensor& sequences);
  virtual std::string name() const = 0;
};

/// Repeats the last context frame K_f times; the accuracy floor.
class PersistenceForecaster : public Forecaster {
 public:
  explicit PersistenceForecaster(ForecastTask task);
  const ForecastTask& task() const override { return task_; }
  torch::Tensor forecast(const torch::Tensor& context) override;
  double train_step(const torch::Tensor& sequences) override { return evaluate_loss(sequences); }
  std::string name() const override { return "persistence"; }

 private:
  ForecastTask task_;
};

/// Convolutional encoder -> temporal translator over the stacked time axis
/// -> decoder, predicting a residual on top of the last context frame.
class SimVPNetImpl : public torch::nn::Module {
 public:
  SimVPNetImpl(const ForecastTask& task, const BackboneConfig& config);
  /// context [B, T_in, C, H, W] -> [B, K_f, C_out, H, W] (unclamped).
  torch::Tensor forward(const torch::Tensor& context);

 private:
  ForecastTask task_;
  int64_t hidden_spatial_;
  torch::nn::Conv2d enc1{nullptr}, enc2{nullptr};
  torch::nn::GroupNorm enc_norm1{nullptr}, enc_norm2{nullptr};
  torch::nn::Conv2d trans_in{nullptr};
  torch::nn::GroupNorm trans_norm_in{nullptr};
  torch::nn::ModuleList trans_blocks{nullptr}, trans_norms{nullptr};
  torch::nn::Conv2d trans_out{nullptr};
  torch::nn::Conv2d dec1{nullptr};
  torch::nn::GroupNorm dec_norm1{nullptr};
  torch::nn::Conv2d dec_out{nullptr};
};
TORCH_MODULE(SimVPNet);

class SimVPForecaster : public Forecaster {
 public:
  SimVPForecaster(ForecastTask task, BackboneConfig config);

  const ForecastTask& task() const override { return task_; }
  torch::Tensor forecast(const torch::Tensor& context) override;
  double train_step(const torch::Tensor& sequences) override;
  void set_learning_rate(double lr) override;
  double evaluate_loss(const torch::Tensor& sequences) override;
  std::string name() const override { return "simvp"; }

  /// Differentiable loss on a batch (used by training and gradient checks).
  torch::Tensor loss(const torch::Tensor& sequences);
  SimVPNet& network() { return net_; }
  const BackboneConfig& config() const { return config_; }

 private:
  ForecastTask task_;
  BackboneConfig config_;
  SimVPNet net_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
};

/// Learning rate at `step` of `total` under a one-cycle policy: cosine warm-up
/// from max/25 over the first 30% of steps, cosine decay to max/(25 * 1e4).
double one_cycle_lr(int64_t step, int64_t total, double max_lr);

/// Supplies the training sequence for (source index, epoch).
class TrainingSource {
 public:
  virtual ~TrainingSource() = default;
  virtual std::size_t size() const = 0;
  virtual STSequence draw(std::size_t index, int64_t epoch) const = 0;
  virtual std::string mode() const = 0;
};

class OriginalSource : public TrainingSource {
 public:
  explicit OriginalSource(std::vector<STSequence> sequences) : sequences_(std::move(sequences)) {}
  std::size_t size() const override { return sequences_.size(); }
  STSequence draw(std::size_t index, int64_t) const override { return sequences_.at(index); }
  std::string mode() const override { return "baseline"; }

 private:
  std::vector<STSequence> sequences_;
};

/// Fresh X' = Sample(X, p, r) per epoch per source.
class CapaintSource : public TrainingSource {
 public:
  CapaintSource(augment::SequenceRepository repository, augment::SampleParams params,
                std::vector<std::string> source_ids);
  std::size_t size() const override { return ids_.size(); }
  STSequence draw(std::size_t index, int64_t epoch) const override;
  std::string mode() const override { return "capaint"; }

 private:
  augment::SequenceRepository repo_;
  augment::SampleParams params_;
  std::vector<std::string> ids_;
};

/// Applies a flip/rotate/crop baseline with probability `apply_prob` per
/// source per epoch.
class BaselineAugmentSource : public TrainingSource {
 public:
  BaselineAugmentSource(std::vector<STSequence> sequences, augment::BaselineKind kind, double apply_prob,
                        std::uint64_t seed);
  std::size_t size() const override { return sequences_.size(); }
  STSequence draw(std::size_t index, int64_t epoch) const override;
  std::string mode() const override { return augment::to_string(kind_); }

 private:
  std::vector<STSequence> sequences_;
  augment::BaselineKind kind_;
  double apply_prob_;
  std::uint64_t seed_;
};

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;

  nlohmann::json to_json() const;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double initial_val_loss = 0.0;
  int64_t best_epoch = -1;
};

/// Trains `model` for config.epochs passes over `source` with a one-cycle
/// schedule; batch order and window offsets come from config.seed, so two runs
/// whose sources return identical data produce identical losses.
TrainHistory train_backbone(Forecaster& model, const TrainingSource& source, const std::vector<STSequence>& val,
                            const BackboneConfig& config);

/// Forecasts every test sequence from its first context_len frames and scores
/// the next forecast_len frames in physical units (data range = raw span).
metrics::RunMetrics evaluate_forecaster(Forecaster& model, const std::vector<STSequence>& test);

void save_forecaster(const std::filesystem::path& path, SimVPForecaster& model);
std::unique_ptr<SimVPForecaster> load_forecaster(const std::filesystem::path& path);

}  // namespace capaint::predictor
