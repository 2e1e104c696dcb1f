#pragma once

#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "capaint/core/dataset.hpp"
#include "capaint/metrics/metrics.hpp"
#include "capaint/pipeline/config.hpp"
#include "capaint/predictor/forecaster.hpp"

namespace capaint::pipeline {

/// Where the decipher, diffusion, augment and predict stages of one training
/// subset live. The full training split uses the output root itself.
struct Workspace {
  std::filesystem::path root;
  std::vector<std::string> train_ids;  // in dataset split order
  std::string label = "full";
};

struct StageResult {
  std::filesystem::path dir;
  std::string hash;
  bool cached = false;
};

struct RunResult {
  std::filesystem::path dir;
  metrics::RunMetrics metrics;
  std::uint64_t seed = 0;
  std::size_t train_sequences = 0;
  bool cached = false;
};

inline const std::vector<std::string> kPredictModes{"baseline", "capaint", "flip", "rotate", "crop"};

/// Stage runner. Every stage writes its outputs under a directory holding
/// `config.json` (the resolved configuration), `seeds.json` and, once
/// complete, `stage.json` with the stage's content hash. A stage whose hash
/// matches the stored one is skipped. Upstream stages run on demand.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig config, std::ostream& log);

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path out_dir() const { return config_.out_dir(); }

  StageResult generate();
  const Dataset& dataset();

  Workspace full_workspace();
  /// Training ids in the first round(fraction * n) positions of a seeded
  /// shuffle, kept in split order. Subsets of growing fractions are nested.
  Workspace subset_workspace(double fraction);
  /// The first `count` ids of the same shuffle.
  Workspace subset_of_size(std::size_t count);

  StageResult decipher(const Workspace& ws);
  StageResult train_diffusion(const Workspace& ws);
  StageResult augment(const Workspace& ws);
  RunResult train_predict(const Workspace& ws, const std::string& mode, std::uint64_t seed);
  std::vector<RunResult> train_predict_all(const std::string& mode);

  /// Ori vs every other arm found under predict/; writes report/.
  nlohmann::json report();
  nlohmann::json scarcity();
  nlohmann::json equal_volume();

 private:
  StageResult dataset_stage();
  RunResult run_backbone(const std::filesystem::path& dir, nlohmann::json identity, const predictor::TrainingSource& source,
                         std::uint64_t seed, std::size_t train_sequences);

  ExperimentConfig config_;
  std::ostream& log_;
  std::optional<Dataset> dataset_;
  std::string dataset_hash_;
};

struct CommandOptions {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;
  std::string mode = "baseline";
};

inline const std::vector<std::string> kCommands{"generate", "decipher",  "train-diffusion", "augment",
                                                "train-predict", "report", "scarcity", "equal-volume"};

/// Loads and validates the config (applying --seed), then runs `command`.
/// Errors propagate as capaint::Error subclasses.
void run_command(const std::string& command, const CommandOptions& options, std::ostream& log);

}  // namespace capaint::pipeline
