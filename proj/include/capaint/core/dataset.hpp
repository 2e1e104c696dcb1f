#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "capaint/core/sequence.hpp"

namespace capaint {

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;
};

enum class Split { kTrain, kVal, kTest };

/// Deterministic assignment of sequence ids to splits. Counts come from the
/// largest-remainder rounding of fraction * n; membership from a seeded
/// permutation of the id list.
struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  const std::vector<std::string>& of(Split split) const;
};

SplitAssignment assign_splits(const std::vector<std::string>& ids, const SplitFractions& fractions,
                              std::uint64_t seed);

/// Layout: `manifest.json` plus one `seq_<id>.f32` per sequence holding
/// row-major [T, H, W, C] little-endian float32 samples.
struct DatasetManifest {
  std::string name;
  int64_t num_sequences = 0;
  std::array<int64_t, 4> shape{};  // T, H, W, C
  RawRange normalization;
  SplitFractions split;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  SplitAssignment assignment;
  nlohmann::json generator;  // provenance of synthetic data, may be null

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, std::vector<STSequence> sequences);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<STSequence>& sequences() const { return sequences_; }
  const STSequence& at(const std::string& id) const;
  std::vector<STSequence> split(Split which) const;
  bool empty() const { return sequences_.empty(); }

 private:
  DatasetManifest manifest_;
  std::vector<STSequence> sequences_;
};

std::string sequence_file_name(const std::string& id);

void write_sequence_file(const std::filesystem::path& path, const torch::Tensor& frames);
/// Reads exactly prod(shape) floats; a short or oversized file is an
/// IntegrityError.
torch::Tensor read_sequence_file(const std::filesystem::path& path, const std::array<int64_t, 4>& shape);

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

/// Builds a manifest for in-memory sequences (shape and ids taken from them).
Dataset make_dataset(std::string name, std::vector<STSequence> sequences, const RawRange& range,
                     const SplitFractions& fractions, std::uint64_t seed);

}  // namespace capaint
