#include "capaint/pipeline/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "capaint/augment/repository.hpp"
#include "capaint/core/rng.hpp"
#include "capaint/decipher/importance.hpp"
#include "capaint/diffusion/sampling.hpp"
#include "capaint/error.hpp"

namespace capaint::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IntegrityError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IntegrityError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

bool stage_current(const fs::path& dir, const std::string& hash) {
  const auto marker = dir / "stage.json";
  if (!fs::exists(marker)) return false;
  try {
    return read_json(marker).value("hash", std::string{}) == hash;
  } catch (const IntegrityError&) {
    return false;
  }
}

void begin_stage(const fs::path& dir, const ExperimentConfig& config, const json& seeds) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_json(dir / "config.json", config.to_json());
  write_json(dir / "seeds.json", seeds);
}

void finish_stage(const fs::path& dir, const std::string& stage, const std::string& hash, json extra = json::object()) {
  extra["stage"] = stage;
  extra["hash"] = hash;
  write_json(dir / "stage.json", extra);
}

std::string ids_digest(const std::vector<std::string>& ids) {
  std::string joined;
  for (const auto& id : ids) joined += id + '\n';
  return hex64(fnv1a64(joined));
}

std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::vector<STSequence> select(const Dataset& data, const std::vector<std::string>& ids) {
  std::vector<STSequence> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(data.at(id));
  return out;
}

PatchGeometry geometry_of(const Dataset& data, int64_t patch_size) {
  const auto& s = data.manifest().shape;
  return PatchGeometry(s[1], s[2], s[3], patch_size);
}

// Originals first, then the members of `extra`.
class ConcatSource : public predictor::TrainingSource {
 public:
  ConcatSource(const predictor::TrainingSource& first, const predictor::TrainingSource& second)
      : first_(first), second_(second) {}
  std::size_t size() const override { return first_.size() + second_.size(); }
  STSequence draw(std::size_t index, int64_t epoch) const override {
    return index < first_.size() ? first_.draw(index, epoch) : second_.draw(index - first_.size(), epoch);
  }
  std::string mode() const override { return first_.mode() + "+" + second_.mode(); }

 private:
  const predictor::TrainingSource& first_;
  const predictor::TrainingSource& second_;
};

std::uint64_t sampler_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {fnv1a64("sampler")}); }

}  // namespace

Pipeline::Pipeline(ExperimentConfig config, std::ostream& log) : config_(std::move(config)), log_(log) {
  config_.validate();
}

StageResult Pipeline::dataset_stage() {
  if (!config_.dataset.path.empty()) {
    const auto dir = config_.dataset.path;
    const auto manifest = read_json(dir / "manifest.json");
    return {dir, hex64(json_hash(manifest)), true};
  }
  const auto dir = out_dir() / "dataset";
  const json identity = {{"name", config_.dataset.name},
                         {"num_sequences", config_.dataset.num_sequences},
                         {"generator", config_.dataset.generator.to_json()}};
  const auto hash = hex64(json_hash(identity));
  if (stage_current(dir, hash)) return {dir, hash, true};

  begin_stage(dir, config_, {{"init_seed", config_.dataset.generator.init_seed}});
  auto data = generate_reaction_diffusion(config_.dataset.generator, config_.dataset.num_sequences);
  auto manifest = data.manifest();
  manifest.name = config_.dataset.name;
  data = Dataset(manifest, data.sequences());
  save_dataset(dir, data);
  finish_stage(dir, "generate", hash);

  const auto& m = data.manifest();
  log_ << "generate: " << m.num_sequences << " sequences of shape [" << m.shape[0] << ", " << m.shape[1] << ", "
       << m.shape[2] << ", " << m.shape[3] << "], raw range [" << fmt(m.normalization.min) << ", "
       << fmt(m.normalization.max) << "], split " << m.assignment.train.size() << "/" << m.assignment.val.size()
       << "/" << m.assignment.test.size() << " -> " << dir.string() << "\n";
  dataset_ = std::move(data);
  dataset_hash_ = hash;
  return {dir, hash, false};
}

StageResult Pipeline::generate() {
  auto result = dataset_stage();
  if (result.cached) log_ << "generate: up to date (" << result.dir.string() << ")\n";
  dataset_hash_ = result.hash;
  return result;
}

const Dataset& Pipeline::dataset() {
  if (!dataset_) {
    auto stage = dataset_stage();
    dataset_hash_ = stage.hash;
    if (!dataset_) dataset_ = load_dataset(stage.dir);
  }
  return *dataset_;
}

Workspace Pipeline::full_workspace() { return {out_dir(), dataset().manifest().assignment.train, "full"}; }

Workspace Pipeline::subset_workspace(double fraction) {
  const auto n = dataset().manifest().assignment.train.size();
  if (fraction >= 1.0) return full_workspace();
  return subset_of_size(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

Workspace Pipeline::subset_of_size(std::size_t count) {
  const auto& train = dataset().manifest().assignment.train;
  const auto n = train.size();
  const auto keep = std::clamp<std::size_t>(count, 1, n);
  if (keep == n) return full_workspace();
  const auto order = seeded_permutation(n, config_.scarcity.order_seed);
  std::vector<bool> chosen(n, false);
  for (std::size_t i = 0; i < keep; ++i) chosen[order[i]] = true;
  Workspace ws;
  ws.root = out_dir() / "subsets" / ("n_" + std::to_string(keep));
  ws.label = std::to_string(keep) + " of " + std::to_string(n) + " training sequences";
  for (std::size_t i = 0; i < n; ++i)
    if (chosen[i]) ws.train_ids.push_back(train[i]);
  return ws;
}

StageResult Pipeline::decipher(const Workspace& ws) {
  const auto& data = dataset();
  const auto dir = ws.root / "decipher";
  const auto& dc = config_.decipher;
  const json identity = {{"dataset", dataset_hash_},
                         {"train", ids_digest(ws.train_ids)},
                         {"causal_fraction", dc.causal_fraction},
                         {"aggregate", dc.aggregate},
                         {"preview_sequences", dc.preview_sequences},
                         {"reconstructor", dc.reconstructor.to_json()}};
  const auto hash = hex64(json_hash(identity));
  if (stage_current(dir, hash)) {
    log_ << "decipher [" << ws.label << "]: up to date\n";
    return {dir, hash, true};
  }
  begin_stage(dir, config_, {{"reconstructor", dc.reconstructor.seed}});

  const auto train = select(data, ws.train_ids);
  const auto val = data.split(Split::kVal);
  const auto geometry = geometry_of(data, dc.reconstructor.patch_size);
  auto model = decipher::make_reconstructor(dc.reconstructor, geometry);
  const auto fit = decipher::train_reconstructor(model, train, val);
  {
    std::ofstream log(dir / "log.jsonl");
    for (std::size_t e = 0; e < fit.epoch_loss.size(); ++e)
      log << json{{"epoch", e}, {"train_loss", fit.epoch_loss[e]}}.dump() << "\n";
  }
  decipher::save_reconstructor(dir / "reconstructor.ckpt", model);

  const auto partitions = decipher::decipher_dataset(model, train, dc.causal_fraction, dc.aggregate);
  for (const auto& [id, p] : partitions) decipher::save_partitions(dir / "partitions", p);
  const auto previews = std::min<std::size_t>(static_cast<std::size_t>(dc.preview_sequences), ws.train_ids.size());
  for (std::size_t i = 0; i < previews; ++i) {
    const auto& p = partitions.at(ws.train_ids[i]);
    for (const auto& frame : p.frames)
      export_mask(mask_from_partition(frame.environmental, geometry), dir / "masks", p.source_id, frame.frame_index);
  }
  finish_stage(dir, "decipher", hash,
               {{"initial_holdout_loss", fit.initial_holdout_loss},
                {"final_holdout_loss", fit.final_holdout_loss},
                {"sequences", partitions.size()}});
  log_ << "decipher [" << ws.label << "]: reconstructor holdout loss " << fmt(fit.initial_holdout_loss, 5) << " -> "
       << fmt(fit.final_holdout_loss, 5) << ", partitions for " << partitions.size() << " sequences\n";
  return {dir, hash, false};
}

StageResult Pipeline::train_diffusion(const Workspace& ws) {
  const auto& data = dataset();
  const auto dir = ws.root / "diffusion";
  const auto& df = config_.diffusion;
  const json identity = {{"dataset", dataset_hash_},         {"train", ids_digest(ws.train_ids)},
                         {"num_steps", df.num_steps},         {"beta_start", df.beta_start},
                         {"beta_end", df.beta_end},           {"denoiser", df.denoiser.to_json()},
                         {"model_seed", df.model_seed},       {"train_config", df.train.to_json()}};
  const auto hash = hex64(json_hash(identity));
  if (stage_current(dir, hash)) {
    log_ << "train-diffusion [" << ws.label << "]: up to date\n";
    return {dir, hash, true};
  }
  begin_stage(dir, config_, {{"model", df.model_seed}, {"train", df.train.seed}});

  const auto train = select(data, ws.train_ids);
  diffusion::DenoiserModel model(df.denoiser, diffusion::linear_schedule(df.num_steps, df.beta_start, df.beta_end),
                                 df.model_seed);
  const auto fit = diffusion::train_denoiser(model, train, df.train);
  {
    std::ofstream log(dir / "log.jsonl");
    for (std::size_t i = 0; i < fit.losses.size(); ++i)
      log << json{{"step", static_cast<int64_t>(i + 1) * df.train.log_every}, {"loss", fit.losses[i]}}.dump() << "\n";
  }
  diffusion::save_denoiser(dir / "denoiser.ckpt", model);
  finish_stage(dir, "train-diffusion", hash,
               {{"initial_probe_loss", fit.initial_probe_loss}, {"final_probe_loss", fit.final_probe_loss}});
  log_ << "train-diffusion [" << ws.label << "]: probe loss " << fmt(fit.initial_probe_loss, 5) << " -> "
       << fmt(fit.final_probe_loss, 5) << "\n";
  return {dir, hash, false};
}

StageResult Pipeline::augment(const Workspace& ws) {
  const auto deciphered = decipher(ws);
  const auto denoiser = train_diffusion(ws);
  const auto& data = dataset();
  const auto dir = ws.root / "augment";
  const auto& au = config_.augment;
  const json identity = {{"decipher", deciphered.hash},
                         {"diffusion", denoiser.hash},
                         {"num_copies", au.num_copies},
                         {"resample_count", config_.diffusion.resample_count},
                         {"inpaint_seed", config_.diffusion.inpaint_seed}};
  const auto hash = hex64(json_hash(identity));
  if (stage_current(dir, hash)) {
    log_ << "augment [" << ws.label << "]: up to date\n";
    return {dir, hash, true};
  }
  begin_stage(dir, config_, {{"inpaint", config_.diffusion.inpaint_seed}});

  const auto train = select(data, ws.train_ids);
  std::map<std::string, decipher::SequencePartitions> partitions;
  for (const auto& id : ws.train_ids) partitions.emplace(id, decipher::load_partitions(deciphered.dir / "partitions", id));
  auto model = diffusion::load_denoiser(denoiser.dir / "denoiser.ckpt");

  augment::BuildOptions options;
  options.num_copies = au.num_copies;
  options.inpaint.resample_count = config_.diffusion.resample_count;
  options.inpaint.seed = config_.diffusion.inpaint_seed;
  options.workers = au.workers;
  options.batch_frames = au.batch_frames;

  const auto before = diffusion::inpaint_call_count();
  auto repo = augment::build_repository(train, partitions, *model, model->schedule(), options);
  const auto calls = diffusion::inpaint_call_count() - before;
  const auto expected = static_cast<std::uint64_t>(au.num_copies) * train.size() *
                        static_cast<std::uint64_t>(data.manifest().shape[0]);
  if (calls != expected)
    throw IntegrityError("augment issued " + std::to_string(calls) + " inpaint calls, expected r*S*T = " +
                         std::to_string(expected));
  augment::save_repository(dir / "repository", repo);
  finish_stage(dir, "augment", hash,
               {{"inpaint_calls", calls}, {"sequences", repo.num_sources()}, {"entries", repo.size()}});
  log_ << "augment [" << ws.label << "]: " << repo.num_sources() << " sources x " << (au.num_copies + 1)
       << " entries, " << calls << " inpaint calls\n";
  return {dir, hash, false};
}

RunResult Pipeline::run_backbone(const fs::path& dir, json identity, const predictor::TrainingSource& source,
                                 std::uint64_t seed, std::size_t train_sequences) {
  auto backbone = config_.backbone;
  backbone.seed = seed;
  identity["task"] = config_.task.to_json();
  identity["backbone"] = backbone.to_json();
  identity["dataset"] = dataset_hash_;
  const auto hash = hex64(json_hash(identity));
  if (stage_current(dir, hash)) {
    RunResult cached{dir, metrics::RunMetrics::from_json(read_json(dir / "metrics.json")), seed, train_sequences, true};
    log_ << "train-predict " << dir.string() << ": up to date\n";
    return cached;
  }
  begin_stage(dir, config_, {{"run", seed}, {"sampler", sampler_seed(seed)}});

  const auto& data = dataset();
  const auto val = data.split(Split::kVal);
  const auto test = data.split(Split::kTest);
  predictor::SimVPForecaster model(config_.task, backbone);
  const auto history = predictor::train_backbone(model, source, val, backbone);
  {
    std::ofstream log(dir / "log.jsonl");
    for (const auto& e : history.epochs) {
      auto line = e.to_json();
      line["mode"] = source.mode();
      line["seed"] = seed;
      log << line.dump() << "\n";
    }
  }
  predictor::save_forecaster(dir / "model.ckpt", model);

  auto result = predictor::evaluate_forecaster(model, test);
  result.run_id = dir.parent_path().filename().string() + "/" + dir.filename().string();
  result.seed = seed;
  predictor::PersistenceForecaster floor(config_.task);
  auto persistence = predictor::evaluate_forecaster(floor, test);
  persistence.run_id = "persistence";

  auto metrics_json = result.to_json();
  metrics_json["persistence"] = persistence.to_json();
  metrics_json["train_sequences"] = train_sequences;
  metrics_json["initial_val_loss"] = history.initial_val_loss;
  metrics_json["final_val_loss"] = history.epochs.back().val_loss;
  metrics_json["best_epoch"] = history.best_epoch;
  metrics_json["ssim_reduction"] = "per-frame SSIM averaged over the horizon";
  write_json(dir / "metrics.json", metrics_json);
  finish_stage(dir, "train-predict", hash, {{"mode", source.mode()}, {"seed", seed}});
  log_ << "train-predict " << result.run_id << ": MAE " << fmt(result.mae) << " MSE " << fmt(result.mse) << " SSIM "
       << fmt(result.ssim) << " PSNR " << fmt(result.psnr, 2) << " (persistence MAE " << fmt(persistence.mae) << ")\n";
  return {dir, result, seed, train_sequences, false};
}

RunResult Pipeline::train_predict(const Workspace& ws, const std::string& mode, std::uint64_t seed) {
  if (std::find(kPredictModes.begin(), kPredictModes.end(), mode) == kPredictModes.end())
    throw UsageError("unknown mode '" + mode + "'; expected baseline, capaint, flip, rotate or crop");
  const auto& data = dataset();
  const auto dir = ws.root / "predict" / mode / ("seed_" + std::to_string(seed));
  json identity = {{"mode", mode}, {"train", ids_digest(ws.train_ids)}, {"seed", seed}};

  if (mode == "baseline") {
    predictor::OriginalSource source(select(data, ws.train_ids));
    return run_backbone(dir, identity, source, seed, ws.train_ids.size());
  }
  if (mode == "capaint") {
    const auto stage = augment(ws);
    augment::SampleParams params{config_.augment.sample_prob, config_.augment.num_copies, sampler_seed(seed)};
    identity["augment"] = stage.hash;
    identity["sample_prob"] = params.sample_prob;
    identity["num_copies"] = params.num_copies;
    predictor::CapaintSource source(augment::load_repository(stage.dir / "repository"), params, ws.train_ids);
    return run_backbone(dir, identity, source, seed, ws.train_ids.size());
  }
  identity["apply_prob"] = config_.augment.baseline_apply_prob;
  predictor::BaselineAugmentSource source(select(data, ws.train_ids), augment::baseline_kind_from_string(mode),
                                          config_.augment.baseline_apply_prob, sampler_seed(seed));
  return run_backbone(dir, identity, source, seed, ws.train_ids.size());
}

std::vector<RunResult> Pipeline::train_predict_all(const std::string& mode) {
  std::vector<RunResult> out;
  const auto ws = full_workspace();
  for (auto seed : config_.seeds) out.push_back(train_predict(ws, mode, seed));
  return out;
}

namespace {

std::vector<metrics::RunMetrics> collect_runs(const fs::path& mode_dir) {
  std::vector<std::pair<std::string, metrics::RunMetrics>> found;
  if (!fs::is_directory(mode_dir)) return {};
  for (const auto& entry : fs::directory_iterator(mode_dir)) {
    const auto metrics_file = entry.path() / "metrics.json";
    if (entry.is_directory() && fs::exists(entry.path() / "stage.json") && fs::exists(metrics_file))
      found.emplace_back(entry.path().filename().string(), metrics::RunMetrics::from_json(read_json(metrics_file)));
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.second.seed < b.second.seed; });
  std::vector<metrics::RunMetrics> out;
  for (auto& [name, m] : found) out.push_back(std::move(m));
  return out;
}

std::string mean_std(const metrics::MetricSummary& s, double scale) {
  return fmt(s.mean * scale) + "," + fmt(s.std * scale);
}

}  // namespace

json Pipeline::report() {
  const auto predict = out_dir() / "predict";
  std::map<std::string, std::vector<metrics::RunMetrics>> arms;
  for (const auto& mode : kPredictModes) {
    auto runs = collect_runs(predict / mode);
    if (!runs.empty()) arms.emplace(mode, std::move(runs));
  }
  if (arms.empty()) throw UsageError("no completed run directories under " + predict.string());
  if (!arms.count("baseline"))
    throw UsageError("report needs baseline runs under " + (predict / "baseline").string());

  const auto dir = out_dir() / "report";
  fs::create_directories(dir);
  json out;
  out["ssim_reduction"] = "per-frame SSIM averaged over the horizon";
  out["comparisons"] = json::array();
  const auto& baseline = arms.at("baseline");
  for (const auto& [mode, runs] : arms) {
    if (mode == "baseline") continue;
    auto report = metrics::build_report(baseline, runs, mode == "capaint" ? "+CaP" : mode);
    auto entry = report.to_json();
    entry["mode"] = mode;
    out["comparisons"].push_back(entry);
    write_text(dir / ("table_" + mode + ".csv"), report.to_csv());
  }

  std::ostringstream arms_csv;
  arms_csv << "arm,runs,mae_x100_mean,mae_x100_std,mse_x100_mean,mse_x100_std,ssim_mean,ssim_std,psnr_mean,psnr_std\n";
  out["arms"] = json::array();
  for (const auto& [mode, runs] : arms) {
    auto summary = metrics::ArmSummary::of(mode, runs);
    out["arms"].push_back(summary.to_json());
    arms_csv << mode << "," << runs.size() << "," << mean_std(summary.mae, 100.0) << ","
             << mean_std(summary.mse, 100.0) << "," << mean_std(summary.ssim, 1.0) << ","
             << mean_std(summary.psnr, 1.0) << "\n";
  }
  write_text(dir / "arms.csv", arms_csv.str());

  if (const auto curve = out_dir() / "scarcity" / "scarcity.json"; fs::exists(curve)) {
    const auto s = read_json(curve);
    out["scarcity"] = s;
    std::ostringstream csv;
    csv << "fraction,seed,ssim_improvement_percent\n";
    for (const auto& row : s.at("improvement"))
      csv << row.at("fraction").get<double>() << "," << row.at("seed").get<std::uint64_t>() << ","
          << row.at("ssim_improvement_percent").get<double>() << "\n";
    write_text(dir / "scarcity_curve.csv", csv.str());
  }
  if (const auto ev = out_dir() / "equal_volume" / "equal_volume.json"; fs::exists(ev)) out["equal_volume"] = read_json(ev);

  write_json(dir / "report.json", out);
  for (const auto& c : out["comparisons"])
    log_ << "report: " << c.at("mode").get<std::string>() << " vs baseline: dMAE " << c.at("delta_percent").at("mae")
         << "% dMSE " << c.at("delta_percent").at("mse") << "% dSSIM " << c.at("delta_percent").at("ssim") << "%\n";
  log_ << "report: written to " << dir.string() << "\n";
  return out;
}

json Pipeline::scarcity() {
  const auto dir = out_dir() / "scarcity";
  json rows = json::array();
  json improvement = json::array();
  std::ostringstream csv;
  csv << "fraction,train_sequences,seed,arm,mae,mse,ssim,psnr\n";
  for (double fraction : config_.scarcity.fractions) {
    const auto ws = subset_workspace(fraction);
    for (auto seed : config_.seeds) {
      const auto base = train_predict(ws, "baseline", seed);
      const auto cap = train_predict(ws, "capaint", seed);
      for (const auto* run : {&base, &cap}) {
        const auto& m = run->metrics;
        const char* arm = run == &base ? "baseline" : "capaint";
        rows.push_back({{"fraction", fraction},
                        {"train_sequences", run->train_sequences},
                        {"seed", seed},
                        {"arm", arm},
                        {"metrics", m.to_json()}});
        csv << fraction << "," << run->train_sequences << "," << seed << "," << arm << "," << fmt(m.mae, 6) << ","
            << fmt(m.mse, 6) << "," << fmt(m.ssim, 6) << "," << fmt(m.psnr, 4) << "\n";
      }
      improvement.push_back({{"fraction", fraction},
                             {"seed", seed},
                             {"ssim_improvement_percent", metrics::increase_percent(base.metrics.ssim, cap.metrics.ssim)},
                             {"mae_reduction_percent", metrics::reduction_percent(base.metrics.mae, cap.metrics.mae)}});
    }
  }
  json out = {{"fractions", config_.scarcity.fractions},
              {"seeds", config_.seeds},
              {"order_seed", config_.scarcity.order_seed},
              {"rows", rows},
              {"improvement", improvement}};
  write_text(dir / "scarcity.csv", csv.str());
  write_json(dir / "scarcity.json", out);
  for (const auto& row : improvement)
    log_ << "scarcity: fraction " << row.at("fraction").get<double>() << " seed " << row.at("seed") << ": SSIM improvement "
         << fmt(row.at("ssim_improvement_percent").get<double>(), 3) << "%\n";
  return out;
}

json Pipeline::equal_volume() {
  const auto& data = dataset();
  const auto small = subset_workspace(config_.equal_volume.fraction);
  const auto large = subset_of_size(2 * small.train_ids.size());
  const auto stage = augment(small);
  const auto repo = augment::load_repository(stage.dir / "repository");
  const auto dir = out_dir() / "equal_volume";

  json runs = json::array();
  std::ostringstream csv;
  csv << "arm,seed,arm_seed,train_items,mae,mse,ssim,psnr\n";
  for (auto seed : config_.seeds) {
    const auto aug_seed = derive_seed(seed, {fnv1a64("equal_volume/augmented")});
    const auto ori_seed = derive_seed(seed, {fnv1a64("equal_volume/original")});

    predictor::OriginalSource originals(select(data, small.train_ids));
    predictor::CapaintSource generated(repo, {config_.augment.sample_prob, config_.augment.num_copies,
                                              sampler_seed(aug_seed)},
                                       small.train_ids);
    ConcatSource mixed(originals, generated);
    const json aug_identity = {{"arm", "augmented"},
                               {"train", ids_digest(small.train_ids)},
                               {"augment", stage.hash},
                               {"sample_prob", config_.augment.sample_prob},
                               {"num_copies", config_.augment.num_copies},
                               {"seed", aug_seed}};
    const auto a = run_backbone(dir / "augmented" / ("seed_" + std::to_string(seed)), aug_identity, mixed, aug_seed,
                                mixed.size());

    predictor::OriginalSource doubled(select(data, large.train_ids));
    const json ori_identity = {{"arm", "original"}, {"train", ids_digest(large.train_ids)}, {"seed", ori_seed}};
    const auto b = run_backbone(dir / "original" / ("seed_" + std::to_string(seed)), ori_identity, doubled, ori_seed,
                                doubled.size());

    for (const auto* run : {&a, &b}) {
      const char* arm = run == &a ? "augmented" : "original";
      const auto& m = run->metrics;
      runs.push_back({{"arm", arm},
                      {"seed", seed},
                      {"arm_seed", run->seed},
                      {"train_items", run->train_sequences},
                      {"metrics", m.to_json()}});
      csv << arm << "," << seed << "," << run->seed << "," << run->train_sequences << "," << fmt(m.mae, 6) << ","
          << fmt(m.mse, 6) << "," << fmt(m.ssim, 6) << "," << fmt(m.psnr, 4) << "\n";
    }
    log_ << "equal-volume seed " << seed << ": augmented MAE " << fmt(a.metrics.mae) << " MSE " << fmt(a.metrics.mse)
         << " | original MAE " << fmt(b.metrics.mae) << " MSE " << fmt(b.metrics.mse) << "\n";
  }
  json out = {{"fraction", config_.equal_volume.fraction},
              {"augmented_originals", small.train_ids.size()},
              {"original_sequences", large.train_ids.size()},
              {"runs", runs}};
  write_text(dir / "equal_volume.csv", csv.str());
  write_json(dir / "equal_volume.json", out);
  return out;
}

void run_command(const std::string& command, const CommandOptions& options, std::ostream& log) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw UsageError("unknown command '" + command + "'");
  std::ifstream in(options.config_path);
  if (!in) throw ConfigError("cannot open config " + options.config_path.string());
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + options.config_path.string() + ": " + e.what());
  }
  const bool run_command_kind =
      command == "train-predict" || command == "scarcity" || command == "equal-volume" || command == "report";
  if (options.seed) {
    if (!raw.is_object()) throw ConfigError("config must be a JSON object");
    if (run_command_kind)
      raw["seeds"] = json::array({*options.seed});
    else
      raw["seed"] = *options.seed;
  }
  ExperimentConfig config;
  try {
    config = ExperimentConfig::from_json(raw, fs::absolute(options.config_path).parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + options.config_path.string() + ": " + e.what());
  }
  config.validate();
  if (command == "train-predict" &&
      std::find(kPredictModes.begin(), kPredictModes.end(), options.mode) == kPredictModes.end())
    throw UsageError("unknown mode '" + options.mode + "'; expected baseline, capaint, flip, rotate or crop");

  Pipeline pipeline(config, log);
  if (command == "generate") {
    pipeline.generate();
  } else if (command == "decipher") {
    pipeline.decipher(pipeline.full_workspace());
  } else if (command == "train-diffusion") {
    pipeline.train_diffusion(pipeline.full_workspace());
  } else if (command == "augment") {
    pipeline.augment(pipeline.full_workspace());
  } else if (command == "train-predict") {
    pipeline.train_predict_all(options.mode);
  } else if (command == "report") {
    pipeline.report();
  } else if (command == "scarcity") {
    pipeline.scarcity();
  } else if (command == "equal-volume") {
    pipeline.equal_volume();
  }
}

}  // namespace capaint::pipeline
