#include "capaint/predictor/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "capaint/core/checkpoint.hpp"
#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::predictor {

namespace F = torch::nn::functional;

void ForecastTask::validate() const {
  if (context_len < 1 || forecast_len < 1) throw ConfigError("context_len and forecast_len must be >= 1");
  if (channels_in < 1 || channels_out < 1) throw ConfigError("forecast channel counts must be >= 1");
}

void ForecastTask::check_sequence(const STSequence& sequence) const {
  if (sequence.length() < context_len + forecast_len)
    throw IntegrityError("sequence '" + sequence.source_id + "' has " + std::to_string(sequence.length()) +
                         " frames, the forecast task needs " + std::to_string(context_len + forecast_len));
  if (sequence.channels() != channels_in)
    throw DimensionError("sequence '" + sequence.source_id + "' has " + std::to_string(sequence.channels()) +
                         " channels, the forecast task expects " + std::to_string(channels_in));
}

nlohmann::json ForecastTask::to_json() const {
  return {{"context_len", context_len},
          {"forecast_len", forecast_len},
          {"channels_in", channels_in},
          {"channels_out", channels_out}};
}

ForecastTask ForecastTask::from_json(const nlohmann::json& j) {
  ForecastTask t;
  if (j.contains("context_len")) j.at("context_len").get_to(t.context_len);
  if (j.contains("forecast_len")) j.at("forecast_len").get_to(t.forecast_len);
  if (j.contains("channels_in")) j.at("channels_in").get_to(t.channels_in);
  t.channels_out = t.channels_in;
  if (j.contains("channels_out")) j.at("channels_out").get_to(t.channels_out);
  t.validate();
  return t;
}

void BackboneConfig::validate() const {
  if (hidden_spatial < 1 || hidden_temporal < 1 || translator_depth < 1 || groups < 1)
    throw ConfigError("backbone widths, depth and groups must be >= 1");
  if (batch_size < 1 || epochs < 1) throw ConfigError("backbone batch_size and epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("backbone learning_rate must be positive");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"hidden_spatial", hidden_spatial}, {"hidden_temporal", hidden_temporal},
          {"translator_depth", translator_depth}, {"groups", groups},
          {"learning_rate", learning_rate},   {"batch_size", batch_size},
          {"epochs", epochs},                 {"seed", seed},
          {"keep_best", keep_best}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden_spatial", c.hidden_spatial);
  get("hidden_temporal", c.hidden_temporal);
  get("translator_depth", c.translator_depth);
  get("groups", c.groups);
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("seed", c.seed);
  get("keep_best", c.keep_best);
  c.validate();
  return c;
}

namespace {

// [B, T, H, W, C] -> ([B, T_in, C, H, W], [B, K_f, C, H, W])
std::pair<torch::Tensor, torch::Tensor> split_batch(const torch::Tensor& sequences, const ForecastTask& task) {
  if (sequences.dim() != 5) throw DimensionError("forecaster batches must be [B, T, H, W, C]");
  if (sequences.size(1) < task.context_len + task.forecast_len)
    throw IntegrityError("batch has " + std::to_string(sequences.size(1)) + " frames, the forecast task needs " +
                         std::to_string(task.context_len + task.forecast_len));
  auto cf = sequences.permute({0, 1, 4, 2, 3});
  return {cf.slice(1, 0, task.context_len),
          cf.slice(1, task.context_len, task.context_len + task.forecast_len)};
}

torch::nn::GroupNorm group_norm(int64_t groups, int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::gcd(groups, channels), channels));
}

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

double Forecaster::evaluate_loss(const torch::Tensor& sequences) {
  const auto& t = task();
  auto [context, target] = split_batch(sequences, t);
  std::vector<torch::Tensor> preds;
  for (int64_t b = 0; b < sequences.size(0); ++b)
    preds.push_back(forecast(sequences[b].slice(0, 0, t.context_len)).permute({0, 3, 1, 2}));
  return torch::mse_loss(torch::stack(preds).to(target.dtype()), target).item<double>();
}

PersistenceForecaster::PersistenceForecaster(ForecastTask task) : task_(task) { task_.validate(); }

torch::Tensor PersistenceForecaster::forecast(const torch::Tensor& context) {
  if (context.dim() != 4 || context.size(0) != task_.context_len)
    throw DimensionError("context must be [T_in, H, W, C]");
  auto last = context[context.size(0) - 1].slice(2, 0, task_.channels_out);
  return last.unsqueeze(0).expand({task_.forecast_len, -1, -1, -1}).clamp(-1.0, 1.0).contiguous();
}

SimVPNetImpl::SimVPNetImpl(const ForecastTask& task, const BackboneConfig& config)
    : task_(task), hidden_spatial_(config.hidden_spatial) {
  const int64_t hs = config.hidden_spatial, ht = config.hidden_temporal, g = config.groups;
  enc1 = register_module("enc1", conv3(task.channels_in, hs));
  enc_norm1 = register_module("enc_norm1", group_norm(g, hs));
  enc2 = register_module("enc2", conv3(hs, hs, 2));
  enc_norm2 = register_module("enc_norm2", group_norm(g, hs));
  trans_in = register_module("trans_in", conv3(task.context_len * hs, ht));
  trans_norm_in = register_module("trans_norm_in", group_norm(g, ht));
  trans_blocks = register_module("trans_blocks", torch::nn::ModuleList());
  trans_norms = register_module("trans_norms", torch::nn::ModuleList());
  for (int64_t i = 1; i < config.translator_depth; ++i) {
    trans_blocks->push_back(conv3(ht, ht));
    trans_norms->push_back(group_norm(g, ht));
  }
  trans_out = register_module("trans_out", conv3(ht, task.forecast_len * hs));
  dec1 = register_module("dec1", conv3(hs, hs));
  dec_norm1 = register_module("dec_norm1", group_norm(g, hs));
  dec_out = register_module("dec_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(hs, task.channels_out, 1)));
}

torch::Tensor SimVPNetImpl::forward(const torch::Tensor& context) {
  const int64_t b = context.size(0), t_in = context.size(1), c = context.size(2);
  const int64_t h = context.size(3), w = context.size(4);
  if (t_in != task_.context_len || c != task_.channels_in)
    throw DimensionError("context must be [B, " + std::to_string(task_.context_len) + ", " +
                         std::to_string(task_.channels_in) + ", H, W]");
  const int64_t hs = hidden_spatial_, k = task_.forecast_len;

  auto x = context.reshape({b * t_in, c, h, w});
  x = torch::silu(enc_norm1->forward(enc1->forward(x)));
  x = torch::silu(enc_norm2->forward(enc2->forward(x)));
  const int64_t h2 = x.size(2), w2 = x.size(3);

  auto z = x.reshape({b, t_in * hs, h2, w2});
  z = torch::silu(trans_norm_in->forward(trans_in->forward(z)));
  for (std::size_t i = 0; i < trans_blocks->size(); ++i) {
    auto conv = trans_blocks[i]->as<torch::nn::Conv2d>();
    auto norm = trans_norms[i]->as<torch::nn::GroupNorm>();
    z = z + torch::silu(norm->forward(conv->forward(z)));
  }
  z = trans_out->forward(z).reshape({b * k, hs, h2, w2});

  auto y = F::interpolate(z, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
  y = torch::silu(dec_norm1->forward(dec1->forward(y)));
  y = dec_out->forward(y).reshape({b, k, task_.channels_out, h, w});
  if (task_.channels_out == task_.channels_in) y = y + context.select(1, t_in - 1).unsqueeze(1);
  return y;
}

SimVPForecaster::SimVPForecaster(ForecastTask task, BackboneConfig config) : task_(task), config_(config) {
  task_.validate();
  config_.validate();
  torch::manual_seed(config_.seed);
  net_ = SimVPNet(task_, config_);
  optimizer_ = std::make_unique<torch::optim::Adam>(net_->parameters(),
                                                    torch::optim::AdamOptions(config_.learning_rate));
}

torch::Tensor SimVPForecaster::forecast(const torch::Tensor& context) {
  if (context.dim() != 4 || context.size(0) != task_.context_len)
    throw DimensionError("context must be [T_in, H, W, C]");
  torch::NoGradGuard no_grad;
  const bool was_training = net_->is_training();
  net_->eval();
  auto dtype = net_->parameters().front().scalar_type();
  auto out = net_->forward(context.permute({0, 3, 1, 2}).unsqueeze(0).to(dtype));
  if (was_training) net_->train();
  return out[0].permute({0, 2, 3, 1}).clamp(-1.0, 1.0).to(torch::kFloat32).contiguous();
}

torch::Tensor SimVPForecaster::loss(const torch::Tensor& sequences) {
  auto [context, target] = split_batch(sequences, task_);
  auto dtype = net_->parameters().front().scalar_type();
  return torch::mse_loss(net_->forward(context.to(dtype)), target.to(dtype));
}

double SimVPForecaster::train_step(const torch::Tensor& sequences) {
  net_->train();
  optimizer_->zero_grad();
  auto l = loss(sequences);
  const double value = l.item<double>();
  if (!std::isfinite(value)) return value;
  l.backward();
  optimizer_->step();
  return value;
}

void SimVPForecaster::set_learning_rate(double lr) {
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double SimVPForecaster::evaluate_loss(const torch::Tensor& sequences) {
  torch::NoGradGuard no_grad;
  const bool was_training = net_->is_training();
  net_->eval();
  const double value = loss(sequences).item<double>();
  if (was_training) net_->train();
  return value;
}

double one_cycle_lr(int64_t step, int64_t total, double max_lr) {
  constexpr double kWarmFraction = 0.3;
  const double initial = max_lr / 25.0;
  const double final_lr = initial / 1e4;
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (total <= 1) return max_lr;
  const double warm_end = kWarmFraction * static_cast<double>(total) - 1.0;
  const double s = static_cast<double>(std::clamp<int64_t>(step, 0, total - 1));
  if (warm_end > 0.0 && s <= warm_end) return cosine(initial, max_lr, s / warm_end);
  const double span = static_cast<double>(total - 1) - std::max(warm_end, 0.0);
  return cosine(max_lr, final_lr, span > 0.0 ? (s - std::max(warm_end, 0.0)) / span : 1.0);
}

CapaintSource::CapaintSource(augment::SequenceRepository repository, augment::SampleParams params,
                             std::vector<std::string> source_ids)
    : repo_(std::move(repository)), params_(params), ids_(std::move(source_ids)) {
  params_.validate();
  for (const auto& id : ids_)
    if (!repo_.contains(id)) throw IntegrityError("repository holds no sequence '" + id + "'");
}

STSequence CapaintSource::draw(std::size_t index, int64_t epoch) const {
  const auto& id = ids_.at(index);
  return augment::sample_sequence(repo_.group(id), params_, augment::epoch_draw_seed(params_.seed, epoch, id))
      .sequence;
}

BaselineAugmentSource::BaselineAugmentSource(std::vector<STSequence> sequences, augment::BaselineKind kind,
                                             double apply_prob, std::uint64_t seed)
    : sequences_(std::move(sequences)), kind_(kind), apply_prob_(apply_prob), seed_(seed) {
  if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) throw ConfigError("augmentation probability must lie in [0, 1]");
}

STSequence BaselineAugmentSource::draw(std::size_t index, int64_t epoch) const {
  const auto& original = sequences_.at(index);
  const auto draw = augment::epoch_draw_seed(seed_, epoch, original.source_id);
  Rng rng(draw);
  if (!rng.bernoulli(apply_prob_)) return original;
  return augment::baseline_augment(original, kind_, rng.next());
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}, {"lr", learning_rate}};
}

namespace {

torch::Tensor window(const STSequence& s, int64_t start, int64_t length) {
  return s.frames.slice(0, start, start + length);
}

double mean_loss(Forecaster& model, const std::vector<STSequence>& sequences, int64_t batch_size) {
  const int64_t length = model.task().context_len + model.task().forecast_len;
  double total = 0.0;
  int64_t count = 0;
  for (std::size_t start = 0; start < sequences.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<torch::Tensor> parts;
    const auto end = std::min(sequences.size(), start + static_cast<std::size_t>(batch_size));
    for (auto i = start; i < end; ++i) parts.push_back(window(sequences[i], 0, length));
    const auto n = static_cast<int64_t>(parts.size());
    total += model.evaluate_loss(torch::stack(parts)) * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

using Snapshot = std::vector<torch::Tensor>;

Snapshot snapshot(torch::nn::Module& module) {
  Snapshot out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(torch::nn::Module& module, const Snapshot& state) {
  torch::NoGradGuard no_grad;
  std::size_t i = 0;
  for (auto& p : module.parameters()) p.copy_(state[i++]);
  for (auto& b : module.buffers()) b.copy_(state[i++]);
}

}  // namespace

TrainHistory train_backbone(Forecaster& model, const TrainingSource& source, const std::vector<STSequence>& val,
                            const BackboneConfig& config) {
  config.validate();
  const auto& task = model.task();
  const auto n = source.size();
  if (n == 0) throw UsageError("backbone training needs at least one sequence");
  for (const auto& s : val) task.check_sequence(s);
  const int64_t length = task.context_len + task.forecast_len;
  const int64_t batches_per_epoch = (static_cast<int64_t>(n) + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = batches_per_epoch * config.epochs;

  auto* trainable = dynamic_cast<SimVPForecaster*>(&model);
  TrainHistory history;
  Rng order_rng(derive_seed(config.seed, {0x6f72646572ULL}));
  int64_t step = 0;
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_state;

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<STSequence> drawn;
    drawn.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      drawn.push_back(source.draw(i, epoch));
      task.check_sequence(drawn.back());
    }
    if (epoch == 0) history.initial_val_loss = val.empty() ? mean_loss(model, drawn, config.batch_size)
                                                           : mean_loss(model, val, config.batch_size);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

    EpochRecord record;
    record.epoch = epoch;
    double total = 0.0;
    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<torch::Tensor> parts;
      const auto first = static_cast<std::size_t>(b * config.batch_size);
      const auto last = std::min(n, first + static_cast<std::size_t>(config.batch_size));
      for (auto i = first; i < last; ++i) {
        const auto& s = drawn[order[i]];
        const auto offset = static_cast<int64_t>(order_rng.below(static_cast<std::uint64_t>(s.length() - length + 1)));
        parts.push_back(window(s, offset, length));
      }
      const double lr = one_cycle_lr(step++, total_steps, config.learning_rate);
      model.set_learning_rate(lr);
      record.learning_rate = lr;
      const double value = model.train_step(torch::stack(parts));
      if (!std::isfinite(value))
        throw TrainingError("backbone loss diverged in epoch " + std::to_string(epoch), static_cast<int>(epoch) - 1);
      total += value * static_cast<double>(last - first);
    }
    record.train_loss = total / static_cast<double>(n);
    record.val_loss = val.empty() ? mean_loss(model, drawn, config.batch_size) : mean_loss(model, val, config.batch_size);
    if (!std::isfinite(record.val_loss))
      throw TrainingError("backbone validation loss diverged in epoch " + std::to_string(epoch),
                          static_cast<int>(epoch) - 1);
    if (record.val_loss < best) {
      best = record.val_loss;
      history.best_epoch = epoch;
      if (trainable && config.keep_best) best_state = snapshot(*trainable->network());
    }
    history.epochs.push_back(record);
  }
  if (trainable && config.keep_best && !best_state.empty()) restore(*trainable->network(), best_state);
  return history;
}

metrics::RunMetrics evaluate_forecaster(Forecaster& model, const std::vector<STSequence>& test) {
  if (test.empty()) throw UsageError("evaluation needs at least one test sequence");
  const auto& task = model.task();
  double abs_sum = 0.0, sq_sum = 0.0, ssim_sum = 0.0, psnr_sum = 0.0;
  std::size_t elements = 0;
  bool fallback = false;
  for (const auto& s : test) {
    task.check_sequence(s);
    auto context = s.frames.slice(0, 0, task.context_len);
    auto truth = s.frames.slice(0, task.context_len, task.context_len + task.forecast_len)
                     .slice(3, 0, task.channels_out);
    auto pred = model.forecast(context);
    auto pred_raw = denormalize(pred, s.raw_range).to(torch::kFloat64).contiguous();
    auto truth_raw = denormalize(truth, s.raw_range).to(torch::kFloat64).contiguous();
    const auto count = static_cast<std::size_t>(pred_raw.numel());
    std::span<const double> p(pred_raw.data_ptr<double>(), count), y(truth_raw.data_ptr<double>(), count);
    const double seq_mse = metrics::mse(p, y);
    abs_sum += metrics::mae(p, y) * static_cast<double>(count);
    sq_sum += seq_mse * static_cast<double>(count);
    elements += count;
    const metrics::ImageShape shape{s.height(), s.width(), task.channels_out};
    auto sim = metrics::ssim_frames(p, y, task.forecast_len, shape, s.raw_range.span());
    ssim_sum += sim.value;
    fallback = fallback || sim.global_fallback;
    psnr_sum += metrics::psnr_from_mse(seq_mse, s.raw_range.span());
  }
  metrics::RunMetrics out;
  const auto n = static_cast<double>(test.size());
  out.mae = abs_sum / static_cast<double>(elements);
  out.mse = sq_sum / static_cast<double>(elements);
  out.ssim = ssim_sum / n;
  out.psnr = psnr_sum / n;
  out.ssim_global_fallback = fallback;
  return out;
}

void save_forecaster(const std::filesystem::path& path, SimVPForecaster& model) {
  save_checkpoint(path, *model.network(), {"forecaster", model.config().to_json(), {{"task", model.task().to_json()}}});
}

std::unique_ptr<SimVPForecaster> load_forecaster(const std::filesystem::path& path) {
  auto header = read_checkpoint_header(path);
  if (header.kind != "forecaster") throw IntegrityError(path.string() + " is not a forecaster checkpoint");
  auto model = std::make_unique<SimVPForecaster>(ForecastTask::from_json(header.meta.at("task")),
                                                 BackboneConfig::from_json(header.config));
  load_checkpoint(path, *model->network());
  model->network()->eval();
  return model;
}

}  // namespace capaint::predictor
