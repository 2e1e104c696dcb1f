#include "capaint/augment/repository.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

#include "capaint/core/dataset.hpp"
#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint::augment {

namespace fs = std::filesystem;

SequenceRepository::SequenceRepository(const SequenceRepository& other) {
  std::lock_guard lock(other.mutex_);
  order_ = other.order_;
  groups_ = other.groups_;
}

SequenceRepository& SequenceRepository::operator=(const SequenceRepository& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  order_ = other.order_;
  groups_ = other.groups_;
  return *this;
}

void SequenceRepository::insert(const STSequence& sequence, int64_t copy_index, const Provenance& provenance) {
  std::lock_guard lock(mutex_);
  auto it = groups_.find(sequence.source_id);
  if (copy_index == 0) {
    if (it != groups_.end()) throw UsageError("original of '" + sequence.source_id + "' already stored");
    order_.push_back(sequence.source_id);
    groups_[sequence.source_id].push_back({0, sequence, provenance});
    return;
  }
  if (it == groups_.end())
    throw UsageError("copy " + std::to_string(copy_index) + " of '" + sequence.source_id + "' precedes its original");
  auto& group = it->second;
  for (const auto& e : group)
    if (e.copy_index == copy_index)
      throw UsageError("copy " + std::to_string(copy_index) + " of '" + sequence.source_id + "' already stored");
  if (sequence.frames.sizes() != group.front().sequence.frames.sizes())
    throw UsageError("copy shape of '" + sequence.source_id + "' differs from its original");
  group.push_back({copy_index, sequence, provenance});
  std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) { return a.copy_index < b.copy_index; });
}

std::vector<STSequence> SequenceRepository::group(const std::string& source_id) const {
  std::vector<STSequence> out;
  for (const auto& e : entries(source_id)) out.push_back(e.sequence);
  return out;
}

const std::vector<RepositoryEntry>& SequenceRepository::entries(const std::string& source_id) const {
  std::lock_guard lock(mutex_);
  auto it = groups_.find(source_id);
  if (it == groups_.end()) throw UsageError("repository has no source '" + source_id + "'");
  return it->second;
}

std::size_t SequenceRepository::size() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [id, g] : groups_) n += g.size();
  return n;
}

int64_t SequenceRepository::min_copies() const {
  std::lock_guard lock(mutex_);
  int64_t best = -1;
  for (const auto& [id, g] : groups_) {
    const auto copies = static_cast<int64_t>(g.size()) - 1;
    best = best < 0 ? copies : std::min(best, copies);
  }
  return std::max<int64_t>(best, 0);
}

torch::Tensor masks_for_sequence(const decipher::SequencePartitions& partitions, const PatchGeometry& geometry,
                                 int64_t length) {
  if (static_cast<int64_t>(partitions.frames.size()) < length)
    throw ConfigError("sequence '" + partitions.source_id + "' has partitions for " +
                      std::to_string(partitions.frames.size()) + " of " + std::to_string(length) + " frames");
  std::vector<torch::Tensor> masks;
  for (int64_t t = 0; t < length; ++t) {
    const auto& p = partitions.frames[static_cast<std::size_t>(t)];
    if (p.frame_index != t) throw ConfigError("partition frames of '" + partitions.source_id + "' are out of order");
    masks.push_back(mask_from_partition(p.environmental, geometry).values());
  }
  return torch::stack(masks, 0);
}

std::uint64_t copy_seed(std::uint64_t base_seed, const std::string& source_id, int64_t copy_index) {
  return derive_seed(base_seed, {fnv1a64(source_id), static_cast<std::uint64_t>(copy_index)});
}

namespace {

struct Job {
  std::size_t source = 0;
  int64_t copy_index = 0;
};

}  // namespace

SequenceRepository build_repository(const std::vector<STSequence>& train,
                                    const std::map<std::string, decipher::SequencePartitions>& partitions,
                                    diffusion::NoisePredictor& model, const diffusion::NoiseSchedule& schedule,
                                    const BuildOptions& options) {
  options.inpaint.validate();
  if (options.num_copies < 0) throw ConfigError("num_copies must be >= 0");
  if (options.workers < 1 || options.batch_frames < 1) throw ConfigError("workers and batch_frames must be >= 1");

  // Validate every partition before any generation work.
  std::vector<torch::Tensor> masks;
  for (const auto& seq : train) {
    auto it = partitions.find(seq.source_id);
    if (it == partitions.end()) throw ConfigError("missing partition for sequence '" + seq.source_id + "'");
    PatchGeometry geometry(seq.height(), seq.width(), seq.channels(), it->second.patch_size);
    masks.push_back(masks_for_sequence(it->second, geometry, seq.length()));
  }

  SequenceRepository repo;
  for (const auto& seq : train) repo.insert(seq, 0, {0, 0.0, 0});
  if (options.num_copies == 0 || train.empty()) return repo;

  std::vector<Job> jobs;
  for (std::size_t s = 0; s < train.size(); ++s)
    for (int64_t k = 1; k <= options.num_copies; ++k) jobs.push_back({s, k});

  const int64_t length = train.front().length();
  const std::size_t jobs_per_batch = static_cast<std::size_t>(std::max<int64_t>(1, options.batch_frames / length));
  std::vector<std::vector<Job>> batches;
  for (std::size_t i = 0; i < jobs.size(); i += jobs_per_batch)
    batches.emplace_back(jobs.begin() + static_cast<std::ptrdiff_t>(i),
                         jobs.begin() + static_cast<std::ptrdiff_t>(std::min(jobs.size(), i + jobs_per_batch)));

  std::vector<std::vector<STSequence>> results(batches.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    try {
      for (std::size_t b = next++; b < batches.size(); b = next++) {
        std::vector<torch::Tensor> x0, m;
        std::vector<std::uint64_t> seeds;
        for (const auto& job : batches[b]) {
          const auto& seq = train[job.source];
          x0.push_back(to_channels_first(seq.frames));
          m.push_back(masks[job.source]);
          const auto base = copy_seed(options.inpaint.seed, seq.source_id, job.copy_index);
          for (int64_t t = 0; t < seq.length(); ++t) seeds.push_back(diffusion::frame_seed(base, t));
        }
        auto out = diffusion::inpaint_batch(model, schedule, torch::cat(x0, 0), torch::cat(m, 0), seeds,
                                            options.inpaint.resample_count);
        auto frames = to_channels_last(out);
        for (std::size_t j = 0; j < batches[b].size(); ++j) {
          const auto& seq = train[batches[b][j].source];
          STSequence generated;
          generated.frames = frames.slice(0, static_cast<int64_t>(j) * length, static_cast<int64_t>(j + 1) * length).clone();
          generated.raw_range = seq.raw_range;
          generated.source_id = seq.source_id;
          generated.kind = SequenceKind::kGenerated;
          results[b].push_back(std::move(generated));
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = batches.size();
    }
  };
  const auto pool_size = static_cast<std::size_t>(std::min<int64_t>(options.workers, static_cast<int64_t>(batches.size())));
  if (pool_size <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < pool_size; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  const auto& first = partitions.at(train.front().source_id);
  for (std::size_t b = 0; b < batches.size(); ++b)
    for (std::size_t j = 0; j < batches[b].size(); ++j) {
      const auto& job = batches[b][j];
      repo.insert(results[b][j], job.copy_index,
                  {copy_seed(options.inpaint.seed, train[job.source].source_id, job.copy_index),
                   first.causal_fraction, options.inpaint.resample_count});
    }
  return repo;
}

void save_repository(const fs::path& dir, const SequenceRepository& repo) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& id : repo.source_ids()) {
    const auto& entries = repo.entries(id);
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& e : entries) {
      const auto copy_dir = dir / ("copy_" + std::to_string(e.copy_index));
      fs::create_directories(copy_dir);
      write_sequence_file(copy_dir / sequence_file_name(id), e.sequence.frames);
      prov.push_back({{"copy", e.copy_index},
                      {"kind", to_string(e.sequence.kind)},
                      {"seed", e.provenance.seed},
                      {"causal_fraction", e.provenance.causal_fraction},
                      {"resample_count", e.provenance.resample_count}});
    }
    const auto& orig = entries.front().sequence;
    nlohmann::json p{{"source_id", id},
                     {"shape", {orig.length(), orig.height(), orig.width(), orig.channels()}},
                     {"raw_range", {orig.raw_range.min, orig.raw_range.max}},
                     {"copies", prov}};
    std::ofstream out(dir / ("provenance_" + id + ".json"));
    out << p.dump(2) << '\n';
    if (!out) throw IntegrityError("failed to write provenance for " + id);
    index.push_back(id);
  }
  std::ofstream out(dir / "repository.json");
  out << nlohmann::json{{"sources", index}}.dump(2) << '\n';
  if (!out) throw IntegrityError("failed to write repository index");
}

SequenceRepository load_repository(const fs::path& dir) {
  std::ifstream in(dir / "repository.json");
  if (!in) throw IntegrityError("no repository.json in " + dir.string());
  SequenceRepository repo;
  try {
    nlohmann::json index;
    in >> index;
    for (const auto& id_json : index.at("sources")) {
      const auto id = id_json.get<std::string>();
      std::ifstream pin(dir / ("provenance_" + id + ".json"));
      if (!pin) throw IntegrityError("missing provenance for " + id);
      nlohmann::json p;
      pin >> p;
      const auto shape = p.at("shape").get<std::array<int64_t, 4>>();
      const auto range = p.at("raw_range").get<std::array<double, 2>>();
      for (const auto& c : p.at("copies")) {
        const auto k = c.at("copy").get<int64_t>();
        STSequence s;
        s.frames = read_sequence_file(dir / ("copy_" + std::to_string(k)) / sequence_file_name(id), shape);
        s.raw_range = {range[0], range[1]};
        s.source_id = id;
        s.kind = sequence_kind_from_string(c.at("kind").get<std::string>());
        repo.insert(s, k,
                    {c.at("seed").get<std::uint64_t>(), c.at("causal_fraction").get<double>(),
                     c.at("resample_count").get<int64_t>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed repository metadata: ") + e.what());
  }
  return repo;
}

}  // namespace capaint::augment
