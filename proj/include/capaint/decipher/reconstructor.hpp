#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>
#include <vector>

#include "capaint/core/patch.hpp"
#include "capaint/core/sequence.hpp"

namespace capaint::decipher {

enum class AttentionLayers { kFinal, kMean };

struct ReconstructorConfig {
  int64_t embed_dim = 32;
  int64_t num_layers = 2;
  int64_t num_heads = 2;
  int64_t mlp_ratio = 2;
  int64_t patch_size = 4;
  bool positional_embedding = true;
  double learning_rate = 1e-3;
  int64_t epochs = 4;
  int64_t batch_size = 32;
  std::uint64_t seed = 0;
  // Which blocks feed the importance scores.
  AttentionLayers score_layers = AttentionLayers::kFinal;

  int64_t head_dim() const { return embed_dim / num_heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static ReconstructorConfig from_json(const nlohmann::json& j);
};

/// Multi-head self-attention that also hands back its softmax maps.
class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t embed_dim, int64_t num_heads);

  /// x: [B, N, D]. Returns the attended tokens; writes [B, heads, N, N] maps
  /// into `maps` when non-null.
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* maps = nullptr);

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};

 private:
  int64_t num_heads_;
  int64_t head_dim_;
};
TORCH_MODULE(SelfAttention);

/// Pre-norm block: x' = x + MSA(LN(x)); out = x' + MLP(LN(x')).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t embed_dim, int64_t num_heads, int64_t mlp_hidden);

  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* maps = nullptr);

  torch::nn::LayerNorm norm1{nullptr};
  SelfAttention attention{nullptr};
  torch::nn::LayerNorm norm2{nullptr};
  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Patch-token autoencoder without a class token: linear patch embedding plus
/// learned positions, L transformer blocks, linear read-out back to pixels.
class ReconstructorImpl : public torch::nn::Module {
 public:
  ReconstructorImpl(const ReconstructorConfig& config, const PatchGeometry& geometry);

  /// frames: [B, H, W, C] -> reconstruction of the same shape.
  torch::Tensor forward(const torch::Tensor& frames);

  /// Same as forward, additionally returns one [B, heads, N, N] map per layer.
  /// Throws NumericError naming the layer whose activations went non-finite.
  torch::Tensor forward_with_attention(const torch::Tensor& frames, std::vector<torch::Tensor>& maps);

  const ReconstructorConfig& config() const { return config_; }
  const PatchGeometry& geometry() const { return geometry_; }

  torch::nn::Linear embed{nullptr};
  torch::Tensor position;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  torch::Tensor run(const torch::Tensor& frames, std::vector<torch::Tensor>* maps);

  ReconstructorConfig config_;
  PatchGeometry geometry_;
};
TORCH_MODULE(Reconstructor);

Reconstructor make_reconstructor(const ReconstructorConfig& config, const PatchGeometry& geometry);

/// Mean squared per-pixel reconstruction error of a frame batch.
torch::Tensor reconstruction_loss(Reconstructor& model, const torch::Tensor& frames);

struct ReconstructorTrainResult {
  std::vector<double> epoch_loss;
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
};

/// Full-frame autoencoding on every frame of `sequences`, Adam, fixed seed.
/// The held-out batch is drawn from `holdout` (or from the training frames if
/// empty). Throws TrainingError when the loss goes non-finite.
ReconstructorTrainResult train_reconstructor(Reconstructor& model, const std::vector<STSequence>& sequences,
                                             const std::vector<STSequence>& holdout);

void save_reconstructor(const std::filesystem::path& path, Reconstructor& model);
Reconstructor load_reconstructor(const std::filesystem::path& path);

}  // namespace capaint::decipher
