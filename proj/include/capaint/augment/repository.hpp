#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "capaint/core/sequence.hpp"
#include "capaint/decipher/importance.hpp"
#include "capaint/diffusion/sampling.hpp"

namespace capaint::augment {

struct Provenance {
  std::uint64_t seed = 0;
  double causal_fraction = 0.0;
  int64_t resample_count = 0;
};

struct RepositoryEntry {
  int64_t copy_index = 0;  // 0 = original
  STSequence sequence;
  Provenance provenance;
};

/// Originals plus their generated copies, grouped by source id. Entries are
/// immutable once inserted; inserts are serialized.
class SequenceRepository {
 public:
  SequenceRepository() = default;
  SequenceRepository(const SequenceRepository& other);
  SequenceRepository& operator=(const SequenceRepository& other);

  /// Throws UsageError on a duplicate (source, copy) key, a copy inserted
  /// before its original, or a shape that differs from the original's.
  void insert(const STSequence& sequence, int64_t copy_index, const Provenance& provenance = {});

  const std::vector<std::string>& source_ids() const { return order_; }
  /// Sequences of one source ordered by copy index; element 0 is the original.
  std::vector<STSequence> group(const std::string& source_id) const;
  const std::vector<RepositoryEntry>& entries(const std::string& source_id) const;
  bool contains(const std::string& source_id) const { return groups_.count(source_id) > 0; }

  std::size_t num_sources() const { return order_.size(); }
  std::size_t size() const;
  /// Smallest number of generated copies over all sources.
  int64_t min_copies() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<RepositoryEntry>> groups_;
};

/// [T, H, W] mask stack for one sequence; throws ConfigError when a frame has
/// no partition.
torch::Tensor masks_for_sequence(const decipher::SequencePartitions& partitions, const PatchGeometry& geometry,
                                 int64_t length);

struct BuildOptions {
  int64_t num_copies = 1;  // r
  diffusion::InpaintParams inpaint;  // seed is the base seed for all copies
  int64_t workers = 1;
  int64_t batch_frames = 64;  // frames per denoiser batch
};

/// Seed of generated copy `copy_index` of `source_id`.
std::uint64_t copy_seed(std::uint64_t base_seed, const std::string& source_id, int64_t copy_index);

/// Stores every training sequence plus r inpainted copies. Only the
/// sequences passed in are augmented; callers pass the training split.
/// Results are merged in source order regardless of worker completion order.
SequenceRepository build_repository(const std::vector<STSequence>& train,
                                    const std::map<std::string, decipher::SequencePartitions>& partitions,
                                    diffusion::NoisePredictor& model, const diffusion::NoiseSchedule& schedule,
                                    const BuildOptions& options);

/// On disk: copy_<k>/seq_<id>.f32, provenance_<id>.json, repository.json.
void save_repository(const std::filesystem::path& dir, const SequenceRepository& repo);
SequenceRepository load_repository(const std::filesystem::path& dir);

}  // namespace capaint::augment
