#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "capaint/core/reaction_diffusion.hpp"
#include "capaint/decipher/reconstructor.hpp"
#include "capaint/diffusion/denoiser.hpp"
#include "capaint/predictor/forecaster.hpp"

namespace capaint::pipeline {

struct DatasetSettings {
  std::filesystem::path path;  // existing dataset; empty = generate under the output root
  std::string name = "reaction_diffusion";
  int64_t num_sequences = 400;
  ReactionDiffusionConfig generator;
};

struct DecipherSettings {
  double causal_fraction = 0.75;  // epsilon
  bool aggregate = false;         // one partition per sequence instead of per frame
  int64_t preview_sequences = 4;  // mask previews written for the first n training sequences
  decipher::ReconstructorConfig reconstructor;
};

struct DiffusionSettings {
  int64_t num_steps = 200;  // T_diff
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int64_t resample_count = 1;  // U
  std::uint64_t inpaint_seed = 0;
  diffusion::DenoiserConfig denoiser;
  std::uint64_t model_seed = 0;
  diffusion::DenoiserTrainConfig train;
};

struct AugmentSettings {
  double sample_prob = 0.5;  // p
  int64_t num_copies = 1;    // r
  int64_t workers = 1;
  int64_t batch_frames = 64;
  double baseline_apply_prob = 0.5;  // chance a flip/rotate/crop is applied per sequence per epoch
};

struct ScarcitySettings {
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  std::uint64_t order_seed = 0;  // the shuffle whose prefixes define the subsets
};

struct EqualVolumeSettings {
  double fraction = 0.25;  // originals in the augmented arm; the other arm gets twice as many
};

/// Fully resolved experiment configuration. Missing keys take defaults,
/// unknown keys are rejected, and sub-seeds not given explicitly are derived
/// from `seed`, so the resolved form written into every run directory is
/// enough to reproduce a run.
struct ExperimentConfig {
  std::filesystem::path output_root = "capaint_runs";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};  // one backbone run per seed and arm
  DatasetSettings dataset;
  DecipherSettings decipher;
  DiffusionSettings diffusion;
  AugmentSettings augment;
  predictor::ForecastTask task;
  predictor::BackboneConfig backbone;
  ScarcitySettings scarcity;
  EqualVolumeSettings equal_volume;

  /// Paths in the file are resolved against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  /// Throws ConfigError on the first violated constraint.
  void validate() const;

  /// output_root, or $CAPAINT_OUT when set.
  std::filesystem::path out_dir() const;
  std::filesystem::path dataset_dir() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Stable 64-bit hash of a JSON value (key order normalized by dump()).
std::uint64_t json_hash(const nlohmann::json& value);
std::string hex64(std::uint64_t value);

}  // namespace capaint::pipeline
