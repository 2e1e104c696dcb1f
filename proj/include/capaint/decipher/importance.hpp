#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "capaint/decipher/reconstructor.hpp"

namespace capaint::decipher {

/// One layer's attention: [heads, N, N] float64, each row a distribution.
struct AttentionRecord {
  torch::Tensor maps;

  int64_t num_heads() const { return maps.size(0); }
  int64_t num_patches() const { return maps.size(1); }
  /// Throws DimensionError / NumericError unless rows are non-negative and
  /// sum to 1 within `tolerance`.
  void validate(double tolerance = 1e-5) const;
};

/// Per-layer attention records for a single frame [H, W, C].
std::vector<AttentionRecord> attention_maps(Reconstructor& model, const torch::Tensor& frame);
/// Batched form: frames [B, H, W, C] -> records[b][layer].
std::vector<std::vector<AttentionRecord>> attention_maps_batch(Reconstructor& model, const torch::Tensor& frames);

/// The record that feeds scoring under `mode`: the final layer, or the
/// element-wise mean over layers.
AttentionRecord scoring_record(const std::vector<AttentionRecord>& layers, AttentionLayers mode);

/// softmax over patches of the attention each patch receives, summed over
/// query rows and heads.
std::vector<double> importance_scores(const AttentionRecord& record);

struct CausalPartition {
  std::vector<int64_t> causal;         // ascending patch indices
  std::vector<int64_t> environmental;  // ascending patch indices
  double causal_fraction = 0.0;
  int64_t frame_index = 0;
  std::vector<double> scores;
};

/// ceil(N * causal_fraction), with products within 1e-9 of an integer
/// treated as that integer.
int64_t causal_count(int64_t num_patches, double causal_fraction);

/// Causal set = the causal_count() highest scores; equal scores prefer the
/// lower patch index. Throws ConfigError unless 0 < causal_fraction < 1.
CausalPartition partition(const std::vector<double>& scores, double causal_fraction, int64_t frame_index = 0);

struct SequencePartitions {
  std::string source_id;
  int64_t patch_size = 0;
  double causal_fraction = 0.0;
  bool aggregated = false;
  std::vector<CausalPartition> frames;
};

/// Partitions for every frame of every sequence. With `aggregate`, scores are
/// averaged over a sequence's frames and the same partition is repeated.
std::map<std::string, SequencePartitions> decipher_dataset(Reconstructor& model,
                                                           const std::vector<STSequence>& sequences,
                                                           double causal_fraction, bool aggregate = false);

std::filesystem::path partition_file(const std::filesystem::path& dir, const std::string& source_id);
void save_partitions(const std::filesystem::path& dir, const SequencePartitions& partitions);
SequencePartitions load_partitions(const std::filesystem::path& dir, const std::string& source_id);

}  // namespace capaint::decipher
