#include "capaint/pipeline/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("'" + section + "' must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in '" + section + "'");
}

std::set<std::string> keys_of(const json& defaults) {
  std::set<std::string> out;
  for (const auto& [key, value] : defaults.items()) out.insert(key);
  return out;
}

const json& section(const json& j, const char* key) {
  static const json kEmpty = json::object();
  return j.contains(key) ? j.at(key) : kEmpty;
}

template <typename T>
void get(const json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

// Sub-seed tags; stable so resolved configs stay reproducible.
enum SeedTag : std::uint64_t {
  kReconstructorSeed = 1,
  kDenoiserModelSeed = 2,
  kDenoiserTrainSeed = 3,
  kInpaintSeed = 4,
  kScarcityOrderSeed = 5,
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  check_keys(j, "config",
             {"output_root", "seed", "seeds", "dataset", "decipher", "diffusion", "augment", "task", "backbone",
              "scarcity", "equal_volume"});
  if (j.contains("output_root")) c.output_root = resolve(j.at("output_root").get<std::string>(), base_dir);
  get(j, "seed", c.seed);
  get(j, "seeds", c.seeds);

  const auto& ds = section(j, "dataset");
  check_keys(ds, "dataset", {"path", "name", "num_sequences", "generator"});
  if (ds.contains("path")) c.dataset.path = resolve(ds.at("path").get<std::string>(), base_dir);
  get(ds, "name", c.dataset.name);
  get(ds, "num_sequences", c.dataset.num_sequences);
  const auto& gen = section(ds, "generator");
  check_keys(gen, "dataset.generator", keys_of(ReactionDiffusionConfig{}.to_json()));
  c.dataset.generator = ReactionDiffusionConfig::from_json(gen);

  const auto& dc = section(j, "decipher");
  check_keys(dc, "decipher", {"causal_fraction", "aggregate", "preview_sequences", "reconstructor"});
  get(dc, "causal_fraction", c.decipher.causal_fraction);
  get(dc, "aggregate", c.decipher.aggregate);
  get(dc, "preview_sequences", c.decipher.preview_sequences);
  const auto& rc = section(dc, "reconstructor");
  check_keys(rc, "decipher.reconstructor", keys_of(decipher::ReconstructorConfig{}.to_json()));
  c.decipher.reconstructor = decipher::ReconstructorConfig::from_json(rc);
  if (!rc.contains("seed")) c.decipher.reconstructor.seed = derive_seed(c.seed, {kReconstructorSeed});

  const auto& df = section(j, "diffusion");
  check_keys(df, "diffusion",
             {"num_steps", "beta_start", "beta_end", "resample_count", "inpaint_seed", "denoiser", "model_seed",
              "train"});
  get(df, "num_steps", c.diffusion.num_steps);
  get(df, "beta_start", c.diffusion.beta_start);
  get(df, "beta_end", c.diffusion.beta_end);
  get(df, "resample_count", c.diffusion.resample_count);
  c.diffusion.inpaint_seed = derive_seed(c.seed, {kInpaintSeed});
  get(df, "inpaint_seed", c.diffusion.inpaint_seed);
  const auto& dn = section(df, "denoiser");
  check_keys(dn, "diffusion.denoiser", keys_of(diffusion::DenoiserConfig{}.to_json()));
  c.diffusion.denoiser = diffusion::DenoiserConfig::from_json(dn);
  c.diffusion.model_seed = derive_seed(c.seed, {kDenoiserModelSeed});
  get(df, "model_seed", c.diffusion.model_seed);
  const auto& tr = section(df, "train");
  check_keys(tr, "diffusion.train", keys_of(diffusion::DenoiserTrainConfig{}.to_json()));
  c.diffusion.train = diffusion::DenoiserTrainConfig::from_json(tr);
  if (!tr.contains("seed")) c.diffusion.train.seed = derive_seed(c.seed, {kDenoiserTrainSeed});

  const auto& au = section(j, "augment");
  check_keys(au, "augment", {"sample_prob", "num_copies", "workers", "batch_frames", "baseline_apply_prob"});
  get(au, "sample_prob", c.augment.sample_prob);
  get(au, "num_copies", c.augment.num_copies);
  get(au, "workers", c.augment.workers);
  get(au, "batch_frames", c.augment.batch_frames);
  get(au, "baseline_apply_prob", c.augment.baseline_apply_prob);

  const auto& tk = section(j, "task");
  check_keys(tk, "task", keys_of(predictor::ForecastTask{}.to_json()));
  c.task = predictor::ForecastTask::from_json(tk);
  const auto& bb = section(j, "backbone");
  check_keys(bb, "backbone", keys_of(predictor::BackboneConfig{}.to_json()));
  c.backbone = predictor::BackboneConfig::from_json(bb);

  const auto& sc = section(j, "scarcity");
  check_keys(sc, "scarcity", {"fractions", "order_seed"});
  get(sc, "fractions", c.scarcity.fractions);
  c.scarcity.order_seed = derive_seed(c.seed, {kScarcityOrderSeed});
  get(sc, "order_seed", c.scarcity.order_seed);

  const auto& ev = section(j, "equal_volume");
  check_keys(ev, "equal_volume", {"fraction"});
  get(ev, "fraction", c.equal_volume.fraction);
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["output_root"] = output_root.string();
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["dataset"] = {{"name", dataset.name},
                  {"num_sequences", dataset.num_sequences},
                  {"generator", dataset.generator.to_json()}};
  if (!dataset.path.empty()) j["dataset"]["path"] = dataset.path.string();
  j["decipher"] = {{"causal_fraction", decipher.causal_fraction},
                   {"aggregate", decipher.aggregate},
                   {"preview_sequences", decipher.preview_sequences},
                   {"reconstructor", decipher.reconstructor.to_json()}};
  j["diffusion"] = {{"num_steps", diffusion.num_steps},         {"beta_start", diffusion.beta_start},
                    {"beta_end", diffusion.beta_end},           {"resample_count", diffusion.resample_count},
                    {"inpaint_seed", diffusion.inpaint_seed},   {"denoiser", diffusion.denoiser.to_json()},
                    {"model_seed", diffusion.model_seed},       {"train", diffusion.train.to_json()}};
  j["augment"] = {{"sample_prob", augment.sample_prob},
                  {"num_copies", augment.num_copies},
                  {"workers", augment.workers},
                  {"batch_frames", augment.batch_frames},
                  {"baseline_apply_prob", augment.baseline_apply_prob}};
  j["task"] = task.to_json();
  j["backbone"] = backbone.to_json();
  j["scarcity"] = {{"fractions", scarcity.fractions}, {"order_seed", scarcity.order_seed}};
  j["equal_volume"] = {{"fraction", equal_volume.fraction}};
  return j;
}

void ExperimentConfig::validate() const {
  if (output_root.empty() && std::getenv("CAPAINT_OUT") == nullptr) throw ConfigError("output_root is empty");
  if (seeds.empty()) throw ConfigError("seeds must name at least one run seed");
  if (!dataset.path.empty()) {
    if (!fs::exists(dataset.path / "manifest.json"))
      throw ConfigError("dataset path " + dataset.path.string() + " holds no manifest.json");
  } else {
    if (dataset.num_sequences < 1) throw ConfigError("dataset.num_sequences must be >= 1");
    dataset.generator.validate();
  }
  if (!(decipher.causal_fraction > 0.0 && decipher.causal_fraction < 1.0))
    throw ConfigError("decipher.causal_fraction must lie strictly between 0 and 1");
  if (decipher.preview_sequences < 0) throw ConfigError("decipher.preview_sequences must be >= 0");
  decipher.reconstructor.validate();
  if (diffusion.num_steps < 1) throw ConfigError("diffusion.num_steps must be >= 1");
  if (!(diffusion.beta_start > 0.0 && diffusion.beta_start <= diffusion.beta_end && diffusion.beta_end < 1.0))
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  if (diffusion.resample_count < 1) throw ConfigError("diffusion.resample_count must be >= 1");
  diffusion.denoiser.validate();
  diffusion.train.validate();
  if (!(augment.sample_prob >= 0.0 && augment.sample_prob <= 1.0))
    throw ConfigError("augment.sample_prob must lie in [0, 1]");
  if (!(augment.baseline_apply_prob >= 0.0 && augment.baseline_apply_prob <= 1.0))
    throw ConfigError("augment.baseline_apply_prob must lie in [0, 1]");
  if (augment.num_copies < 0) throw ConfigError("augment.num_copies must be >= 0");
  if (augment.workers < 1 || augment.batch_frames < 1)
    throw ConfigError("augment.workers and augment.batch_frames must be >= 1");
  task.validate();
  if (dataset.path.empty()) {
    if (task.context_len + task.forecast_len > dataset.generator.frames)
      throw ConfigError("task needs " + std::to_string(task.context_len + task.forecast_len) +
                        " frames, generated sequences have " + std::to_string(dataset.generator.frames));
    if (task.channels_in != dataset.generator.channels)
      throw ConfigError("task.channels_in differs from the generator's channel count");
    const auto p = decipher.reconstructor.patch_size;
    if (dataset.generator.height % p != 0 || dataset.generator.width % p != 0)
      throw ConfigError("frame size is not divisible by decipher.reconstructor.patch_size");
    if (diffusion.denoiser.channels != dataset.generator.channels)
      throw ConfigError("diffusion.denoiser.channels differs from the generator's channel count");
  }
  backbone.validate();
  if (scarcity.fractions.empty()) throw ConfigError("scarcity.fractions must not be empty");
  for (double f : scarcity.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("scarcity fractions must lie in (0, 1]");
  if (!(equal_volume.fraction > 0.0 && equal_volume.fraction <= 0.5))
    throw ConfigError("equal_volume.fraction must lie in (0, 0.5]");
}

fs::path ExperimentConfig::out_dir() const {
  if (const char* env = std::getenv("CAPAINT_OUT"); env != nullptr && *env != '\0') return fs::path(env);
  return output_root;
}

fs::path ExperimentConfig::dataset_dir() const { return dataset.path.empty() ? out_dir() / "dataset" : dataset.path; }

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    const auto j = json::parse(in);
    auto config = ExperimentConfig::from_json(j, fs::absolute(path).parent_path());
    config.validate();
    return config;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

std::uint64_t json_hash(const json& value) { return fnv1a64(value.dump()); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace capaint::pipeline
