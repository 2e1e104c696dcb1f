#include "capaint/diffusion/denoiser.hpp"

#include <cmath>
#include <numeric>

#include "capaint/core/checkpoint.hpp"
#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::diffusion {

namespace nn = torch::nn;

void DenoiserConfig::validate() const {
  if (channels < 1 || base_channels < 1 || time_dim < 2 || groups < 1)
    throw ConfigError("denoiser sizes must be positive (time_dim >= 2)");
  if (time_dim % 2 != 0) throw ConfigError("denoiser time_dim must be even");
  if (channel_mults.empty()) throw ConfigError("denoiser needs at least one resolution level");
  for (auto m : channel_mults)
    if (m < 1) throw ConfigError("channel multipliers must be >= 1");
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"channels", channels},
          {"base_channels", base_channels},
          {"channel_mults", channel_mults},
          {"time_dim", time_dim},
          {"groups", groups}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("channels", c.channels);
  get("base_channels", c.base_channels);
  get("channel_mults", c.channel_mults);
  get("time_dim", c.time_dim);
  get("groups", c.groups);
  return c;
}

namespace {

int64_t group_count(int64_t groups, int64_t channels) { return std::gcd(groups, channels); }

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim, int64_t groups) {
  norm1 = register_module("norm1", nn::GroupNorm(group_count(groups, in_channels), in_channels));
  conv1 = register_module("conv1", conv3x3(in_channels, out_channels));
  time_proj = register_module("time_proj", nn::Linear(time_dim, out_channels));
  norm2 = register_module("norm2", nn::GroupNorm(group_count(groups, out_channels), out_channels));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels)
    skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_embedding) {
  auto h = conv1->forward(torch::silu(norm1->forward(x)));
  h = h + time_proj->forward(time_embedding).unsqueeze(-1).unsqueeze(-1);
  h = conv2->forward(torch::silu(norm2->forward(h)));
  return h + (skip ? skip->forward(x) : x);
}

torch::Tensor step_embedding(const torch::Tensor& steps, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kFloat64) * (-std::log(10000.0) / static_cast<double>(half)));
  auto args = steps.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

UNetImpl::UNetImpl(const DenoiserConfig& config) : config_(config) {
  config.validate();
  const int64_t td = config.time_dim;
  time1 = register_module("time1", nn::Linear(td, td));
  time2 = register_module("time2", nn::Linear(td, td));
  conv_in = register_module("conv_in", conv3x3(config.channels, config.base_channels));

  std::vector<int64_t> widths;
  for (auto m : config.channel_mults) widths.push_back(config.base_channels * m);
  const auto levels = widths.size();

  down_blocks = register_module("down_blocks", nn::ModuleList());
  downsamples = register_module("downsamples", nn::ModuleList());
  int64_t current = config.base_channels;
  for (std::size_t i = 0; i < levels; ++i) {
    down_blocks->push_back(ResidualBlock(current, widths[i], td, config.groups));
    current = widths[i];
    if (i + 1 < levels) downsamples->push_back(conv3x3(current, current, 2));
  }
  mid = register_module("mid", ResidualBlock(current, current, td, config.groups));

  up_blocks = register_module("up_blocks", nn::ModuleList());
  upsamples = register_module("upsamples", nn::ModuleList());
  for (std::size_t k = 0; k < levels; ++k) {
    const std::size_t i = levels - 1 - k;
    up_blocks->push_back(ResidualBlock(current + widths[i], widths[i], td, config.groups));
    current = widths[i];
    if (i > 0) {
      upsamples->push_back(conv3x3(current, widths[i - 1]));
      current = widths[i - 1];
    }
  }
  norm_out = register_module("norm_out", nn::GroupNorm(group_count(config.groups, current), current));
  conv_out = register_module("conv_out", conv3x3(current, config.channels));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& steps) {
  auto temb = step_embedding(steps, config_.time_dim).to(x.scalar_type());
  temb = time2->forward(torch::silu(time1->forward(temb)));

  auto h = conv_in->forward(x);
  std::vector<torch::Tensor> skips;
  const auto levels = config_.channel_mults.size();
  for (std::size_t i = 0; i < levels; ++i) {
    h = down_blocks[i]->as<ResidualBlock>()->forward(h, temb);
    skips.push_back(h);
    if (i + 1 < levels) h = downsamples[i]->as<nn::Conv2d>()->forward(h);
  }
  h = mid->forward(h, temb);
  std::size_t up_index = 0;
  for (std::size_t k = 0; k < levels; ++k) {
    const std::size_t i = levels - 1 - k;
    h = up_blocks[k]->as<ResidualBlock>()->forward(torch::cat({h, skips[i]}, 1), temb);
    if (i > 0) {
      h = torch::nn::functional::interpolate(
          h, torch::nn::functional::InterpolateFuncOptions()
                 .size(std::vector<int64_t>{skips[i - 1].size(2), skips[i - 1].size(3)})
                 .mode(torch::kNearest));
      h = upsamples[up_index++]->as<nn::Conv2d>()->forward(h);
    }
  }
  return conv_out->forward(torch::silu(norm_out->forward(h)));
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule, std::uint64_t seed)
    : schedule_(std::move(schedule)), seed_(seed) {
  torch::manual_seed(seed);
  net_ = UNet(config);
}

torch::Tensor DenoiserModel::predict(const torch::Tensor& x_t, const torch::Tensor& steps) {
  return net_->forward(x_t, steps);
}

void DenoiserTrainConfig::validate() const {
  if (steps < 1 || batch_size < 1 || probe_size < 1 || log_every < 1)
    throw ConfigError("denoiser training counts must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("denoiser learning_rate must be positive");
}

nlohmann::json DenoiserTrainConfig::to_json() const {
  return {{"steps", steps},         {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"probe_size", probe_size}, {"log_every", log_every},   {"seed", seed}};
}

DenoiserTrainConfig DenoiserTrainConfig::from_json(const nlohmann::json& j) {
  DenoiserTrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("steps", c.steps);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("probe_size", c.probe_size);
  get("log_every", c.log_every);
  get("seed", c.seed);
  return c;
}

torch::Tensor simple_loss(NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                          const torch::Tensor& steps, const torch::Tensor& noise) {
  std::vector<double> root_ab(static_cast<std::size_t>(schedule.num_steps()));
  std::vector<double> root_one_minus(root_ab.size());
  for (int64_t t = 1; t <= schedule.num_steps(); ++t) {
    root_ab[static_cast<std::size_t>(t - 1)] = std::sqrt(schedule.alpha_bar(t));
    root_one_minus[static_cast<std::size_t>(t - 1)] = std::sqrt(1.0 - schedule.alpha_bar(t));
  }
  auto idx = steps.to(torch::kLong) - 1;
  auto a = torch::tensor(root_ab, torch::kFloat64).index_select(0, idx).to(x0.scalar_type()).view({-1, 1, 1, 1});
  auto b = torch::tensor(root_one_minus, torch::kFloat64).index_select(0, idx).to(x0.scalar_type()).view({-1, 1, 1, 1});
  auto x_t = a * x0 + b * noise;
  return torch::mse_loss(model.predict(x_t, steps), noise);
}

DenoiserTrainResult train_denoiser(DenoiserModel& model, const std::vector<STSequence>& sequences,
                                   const DenoiserTrainConfig& config) {
  config.validate();
  if (sequences.empty()) throw UsageError("denoiser training needs at least one sequence");
  std::vector<torch::Tensor> parts;
  for (const auto& s : sequences) parts.push_back(to_channels_first(s.frames));
  auto frames = torch::cat(parts, 0);
  const int64_t n = frames.size(0);
  const int64_t steps_total = model.schedule().num_steps();

  auto probe_gen = at::detail::createCPUGenerator(derive_seed(config.seed, {1}));
  const int64_t probe_n = std::min(config.probe_size, n);
  auto probe_x0 = frames.index_select(0, torch::randperm(n, probe_gen, torch::kLong).slice(0, 0, probe_n));
  auto probe_t = torch::randint(1, steps_total + 1, {probe_n}, probe_gen, torch::kLong);
  auto probe_noise = torch::randn(probe_x0.sizes(), probe_gen, torch::kFloat32);
  auto probe_loss = [&]() {
    torch::NoGradGuard no_grad;
    return simple_loss(model, model.schedule(), probe_x0, probe_t, probe_noise).item<double>();
  };

  DenoiserTrainResult result;
  auto& net = model.network();
  net->eval();
  result.initial_probe_loss = probe_loss();

  auto gen = at::detail::createCPUGenerator(derive_seed(config.seed, {2}));
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  net->train();
  double running = 0.0;
  int64_t running_count = 0;
  for (int64_t step = 0; step < config.steps; ++step) {
    auto idx = torch::randint(0, n, {config.batch_size}, gen, torch::kLong);
    auto x0 = frames.index_select(0, idx);
    auto t = torch::randint(1, steps_total + 1, {config.batch_size}, gen, torch::kLong);
    auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
    optimizer.zero_grad();
    auto loss = simple_loss(model, model.schedule(), x0, t, noise);
    const double value = loss.item<double>();
    if (!std::isfinite(value))
      throw TrainingError("denoiser loss became non-finite at step " + std::to_string(step),
                          static_cast<int>(step) - 1);
    loss.backward();
    torch::nn::utils::clip_grad_norm_(net->parameters(), 1.0);
    optimizer.step();
    running += value;
    ++running_count;
    if (running_count == config.log_every || step + 1 == config.steps) {
      result.losses.push_back(running / static_cast<double>(running_count));
      running = 0.0;
      running_count = 0;
    }
  }
  net->eval();
  model.set_trained_steps(model.trained_steps() + config.steps);
  result.final_probe_loss = probe_loss();
  return result;
}

void save_denoiser(const std::filesystem::path& path, DenoiserModel& model) {
  save_checkpoint(path, *model.network(),
                  {"denoiser", model.config().to_json(),
                   {{"schedule", model.schedule().to_json()},
                    {"seed", model.seed()},
                    {"trained_steps", model.trained_steps()}}});
}

std::unique_ptr<DenoiserModel> load_denoiser(const std::filesystem::path& path) {
  auto header = read_checkpoint_header(path);
  if (header.kind != "denoiser") throw IntegrityError(path.string() + " is not a denoiser checkpoint");
  auto model = std::make_unique<DenoiserModel>(DenoiserConfig::from_json(header.config),
                                               schedule_from_json(header.meta.at("schedule")),
                                               header.meta.at("seed").get<std::uint64_t>());
  load_checkpoint(path, *model->network());
  model->set_trained_steps(header.meta.at("trained_steps").get<int64_t>());
  model->network()->eval();
  return model;
}

}  // namespace capaint::diffusion
