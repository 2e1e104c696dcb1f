#include "capaint/decipher/reconstructor.hpp"

#include <cmath>

#include "capaint/core/checkpoint.hpp"
#include "capaint/error.hpp"

namespace capaint::decipher {

void ReconstructorConfig::validate() const {
  if (embed_dim < 1 || num_layers < 1 || num_heads < 1 || mlp_ratio < 1 || patch_size < 1)
    throw ConfigError("reconstructor sizes must be >= 1");
  if (embed_dim % num_heads != 0) throw ConfigError("embed_dim must be divisible by num_heads");
  if (epochs < 1 || batch_size < 1) throw ConfigError("reconstructor epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("reconstructor learning_rate must be positive");
}

nlohmann::json ReconstructorConfig::to_json() const {
  return {{"embed_dim", embed_dim},
          {"num_layers", num_layers},
          {"num_heads", num_heads},
          {"mlp_ratio", mlp_ratio},
          {"patch_size", patch_size},
          {"positional_embedding", positional_embedding},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"score_layers", score_layers == AttentionLayers::kFinal ? "final" : "mean"}};
}

ReconstructorConfig ReconstructorConfig::from_json(const nlohmann::json& j) {
  ReconstructorConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("embed_dim", c.embed_dim);
  get("num_layers", c.num_layers);
  get("num_heads", c.num_heads);
  get("mlp_ratio", c.mlp_ratio);
  get("patch_size", c.patch_size);
  get("positional_embedding", c.positional_embedding);
  get("learning_rate", c.learning_rate);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  if (j.contains("score_layers")) {
    const auto mode = j.at("score_layers").get<std::string>();
    if (mode == "final")
      c.score_layers = AttentionLayers::kFinal;
    else if (mode == "mean")
      c.score_layers = AttentionLayers::kMean;
    else
      throw ConfigError("score_layers must be 'final' or 'mean'");
  }
  return c;
}

SelfAttentionImpl::SelfAttentionImpl(int64_t embed_dim, int64_t num_heads)
    : num_heads_(num_heads), head_dim_(embed_dim / num_heads) {
  qkv = register_module("qkv", torch::nn::Linear(embed_dim, 3 * embed_dim));
  proj = register_module("proj", torch::nn::Linear(embed_dim, embed_dim));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, torch::Tensor* maps) {
  const int64_t b = x.size(0), n = x.size(1), d = x.size(2);
  // [B, N, 3, heads, Dh] -> 3 x [B, heads, N, Dh]
  auto parts = qkv->forward(x).reshape({b, n, 3, num_heads_, head_dim_}).permute({2, 0, 3, 1, 4});
  auto q = parts[0], k = parts[1], v = parts[2];
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
  auto attn = torch::softmax(scores, -1);
  if (maps != nullptr) *maps = attn;
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, n, d});
  return proj->forward(out);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t embed_dim, int64_t num_heads, int64_t mlp_hidden) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
  attention = register_module("attention", SelfAttention(embed_dim, num_heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
  fc1 = register_module("fc1", torch::nn::Linear(embed_dim, mlp_hidden));
  fc2 = register_module("fc2", torch::nn::Linear(mlp_hidden, embed_dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, torch::Tensor* maps) {
  auto mid = x + attention->forward(norm1->forward(x), maps);
  return mid + fc2->forward(torch::gelu(fc1->forward(norm2->forward(mid))));
}

ReconstructorImpl::ReconstructorImpl(const ReconstructorConfig& config, const PatchGeometry& geometry)
    : config_(config), geometry_(geometry) {
  config.validate();
  const int64_t d = config.embed_dim;
  embed = register_module("embed", torch::nn::Linear(geometry.patch_dim(), d));
  position = register_parameter("position", torch::randn({1, geometry.num_patches(), d}) * 0.02,
                                config.positional_embedding);
  if (!config.positional_embedding) position.zero_();
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t l = 0; l < config.num_layers; ++l)
    blocks->push_back(TransformerBlock(d, config.num_heads, d * config.mlp_ratio));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  head = register_module("head", torch::nn::Linear(d, geometry.patch_dim()));
}

torch::Tensor ReconstructorImpl::run(const torch::Tensor& frames, std::vector<torch::Tensor>* maps) {
  auto tokens = embed->forward(patchify(frames, geometry_)) + position;
  int64_t layer = 0;
  for (const auto& module : *blocks) {
    torch::Tensor attn;
    tokens = module->as<TransformerBlock>()->forward(tokens, maps ? &attn : nullptr);
    if (maps) {
      if (!torch::isfinite(tokens).all().item<bool>())
        throw NumericError("non-finite activations in transformer block " + std::to_string(layer));
      maps->push_back(attn);
    }
    ++layer;
  }
  return unpatchify(head->forward(norm->forward(tokens)), geometry_);
}

torch::Tensor ReconstructorImpl::forward(const torch::Tensor& frames) { return run(frames, nullptr); }

torch::Tensor ReconstructorImpl::forward_with_attention(const torch::Tensor& frames, std::vector<torch::Tensor>& maps) {
  maps.clear();
  return run(frames, &maps);
}

Reconstructor make_reconstructor(const ReconstructorConfig& config, const PatchGeometry& geometry) {
  config.validate();
  torch::manual_seed(config.seed);
  return Reconstructor(config, geometry);
}

torch::Tensor reconstruction_loss(Reconstructor& model, const torch::Tensor& frames) {
  return torch::mse_loss(model->forward(frames), frames);
}

namespace {

torch::Tensor stack_frames(const std::vector<STSequence>& sequences) {
  std::vector<torch::Tensor> parts;
  for (const auto& s : sequences) parts.push_back(s.frames);
  return torch::cat(parts, 0);
}

double holdout_loss(Reconstructor& model, const torch::Tensor& batch) {
  torch::NoGradGuard no_grad;
  return reconstruction_loss(model, batch).item<double>();
}

}  // namespace

ReconstructorTrainResult train_reconstructor(Reconstructor& model, const std::vector<STSequence>& sequences,
                                             const std::vector<STSequence>& holdout) {
  if (sequences.empty()) throw UsageError("reconstructor training needs at least one sequence");
  const auto& cfg = model->config();
  auto frames = stack_frames(sequences);
  const int64_t n = frames.size(0);

  auto gen = at::detail::createCPUGenerator(cfg.seed);
  auto probe_source = holdout.empty() ? frames : stack_frames(holdout);
  const int64_t probe_n = std::min<int64_t>(probe_source.size(0), 256);
  auto probe = probe_source.index_select(0, torch::randperm(probe_source.size(0), gen, torch::kLong).slice(0, 0, probe_n));

  ReconstructorTrainResult result;
  result.initial_holdout_loss = holdout_loss(model, probe);

  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  model->train();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = torch::randperm(n, gen, torch::kLong);
    double total = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      auto idx = order.slice(0, start, std::min(n, start + cfg.batch_size));
      auto batch = frames.index_select(0, idx);
      optimizer.zero_grad();
      auto loss = reconstruction_loss(model, batch);
      const double value = loss.item<double>();
      if (!std::isfinite(value))
        throw TrainingError("reconstructor loss diverged in epoch " + std::to_string(epoch),
                            static_cast<int>(epoch) - 1);
      loss.backward();
      optimizer.step();
      total += value;
      ++batches;
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  model->eval();
  result.final_holdout_loss = holdout_loss(model, probe);
  return result;
}

void save_reconstructor(const std::filesystem::path& path, Reconstructor& model) {
  const auto& g = model->geometry();
  save_checkpoint(path, *model,
                  {"reconstructor", model->config().to_json(),
                   {{"height", g.height()}, {"width", g.width()}, {"channels", g.channels()}}});
}

Reconstructor load_reconstructor(const std::filesystem::path& path) {
  auto header = read_checkpoint_header(path);
  if (header.kind != "reconstructor") throw IntegrityError(path.string() + " is not a reconstructor checkpoint");
  auto config = ReconstructorConfig::from_json(header.config);
  PatchGeometry geometry(header.meta.at("height").get<int64_t>(), header.meta.at("width").get<int64_t>(),
                         header.meta.at("channels").get<int64_t>(), config.patch_size);
  Reconstructor model(config, geometry);
  load_checkpoint(path, *model);
  model->eval();
  return model;
}

}  // namespace capaint::decipher
