#include "capaint/core/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "capaint/core/rng.hpp"
#include "capaint/error.hpp"

namespace capaint {

static_assert(std::endian::native == std::endian::little, "sequence files assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

void SplitFractions::validate() const {
  if (train < 0.0 || val < 0.0 || test < 0.0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

const std::vector<std::string>& SplitAssignment::of(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  throw UsageError("unknown split");
}

SplitAssignment assign_splits(const std::vector<std::string>& ids, const SplitFractions& fractions,
                              std::uint64_t seed) {
  fractions.validate();
  const std::size_t n = ids.size();
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // Largest remainder; ties go to the earlier split.
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainder[i] > remainder[best] + 1e-12) best = i;
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }

  const auto perm = seeded_permutation(n, seed);
  SplitAssignment out;
  std::size_t k = 0;
  for (; k < counts[0]; ++k) out.train.push_back(ids[perm[k]]);
  for (; k < counts[0] + counts[1]; ++k) out.val.push_back(ids[perm[k]]);
  for (; k < n; ++k) out.test.push_back(ids[perm[k]]);
  return out;
}

json DatasetManifest::to_json() const {
  return json{{"name", name},
              {"num_sequences", num_sequences},
              {"shape", shape},
              {"dtype", "float32-le"},
              {"normalization", {{"raw_min", normalization.min}, {"raw_max", normalization.max}}},
              {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
              {"seed", seed},
              {"ids", ids},
              {"assignment",
               {{"train", assignment.train}, {"val", assignment.val}, {"test", assignment.test}}},
              {"generator", generator}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.num_sequences = j.at("num_sequences").get<int64_t>();
    m.shape = j.at("shape").get<std::array<int64_t, 4>>();
    if (j.at("dtype").get<std::string>() != "float32-le")
      throw IntegrityError("unsupported dtype " + j.at("dtype").dump());
    m.normalization.min = j.at("normalization").at("raw_min").get<double>();
    m.normalization.max = j.at("normalization").at("raw_max").get<double>();
    m.split.train = j.at("split").at("train").get<double>();
    m.split.val = j.at("split").at("val").get<double>();
    m.split.test = j.at("split").at("test").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ids = j.at("ids").get<std::vector<std::string>>();
    const auto& a = j.at("assignment");
    m.assignment.train = a.at("train").get<std::vector<std::string>>();
    m.assignment.val = a.at("val").get<std::vector<std::string>>();
    m.assignment.test = a.at("test").get<std::vector<std::string>>();
    if (j.contains("generator")) m.generator = j.at("generator");
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what());
  }
  if (static_cast<int64_t>(m.ids.size()) != m.num_sequences)
    throw IntegrityError("manifest num_sequences disagrees with id list");
  if (m.assignment.train.size() + m.assignment.val.size() + m.assignment.test.size() != m.ids.size())
    throw IntegrityError("manifest split assignment does not cover every sequence");
  try {
    m.split.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  return m;
}

Dataset::Dataset(DatasetManifest manifest, std::vector<STSequence> sequences)
    : manifest_(std::move(manifest)), sequences_(std::move(sequences)) {}

const STSequence& Dataset::at(const std::string& id) const {
  auto it = std::find_if(sequences_.begin(), sequences_.end(),
                         [&](const STSequence& s) { return s.source_id == id; });
  if (it == sequences_.end()) throw UsageError("no sequence with id '" + id + "'");
  return *it;
}

std::vector<STSequence> Dataset::split(Split which) const {
  std::vector<STSequence> out;
  for (const auto& id : manifest_.assignment.of(which)) out.push_back(at(id));
  return out;
}

std::string sequence_file_name(const std::string& id) { return "seq_" + id + ".f32"; }

void write_sequence_file(const fs::path& path, const torch::Tensor& frames) {
  auto data = frames.to(torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
            static_cast<std::streamsize>(data.numel() * sizeof(float)));
  if (!out) throw IntegrityError("failed to write " + path.string());
}

torch::Tensor read_sequence_file(const fs::path& path, const std::array<int64_t, 4>& shape) {
  const int64_t count = shape[0] * shape[1] * shape[2] * shape[3];
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IntegrityError("missing sequence file " + path.string());
  if (size != static_cast<std::uintmax_t>(count) * sizeof(float))
    throw IntegrityError(path.filename().string() + ": expected " + std::to_string(count * 4) +
                         " bytes for shape [" + std::to_string(shape[0]) + "," + std::to_string(shape[1]) +
                         "," + std::to_string(shape[2]) + "," + std::to_string(shape[3]) + "], found " +
                         std::to_string(size));
  auto frames = torch::empty({shape[0], shape[1], shape[2], shape[3]}, torch::kFloat32);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(frames.data_ptr<float>()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IntegrityError("short read on " + path.string());
  return frames;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  const auto& m = dataset.manifest();
  for (const auto& seq : dataset.sequences()) {
    if (std::array<int64_t, 4>{seq.length(), seq.height(), seq.width(), seq.channels()} != m.shape)
      throw IntegrityError("sequence '" + seq.source_id + "' shape disagrees with manifest");
    write_sequence_file(dir / sequence_file_name(seq.source_id), seq.frames);
  }
  std::ofstream out(dir / "manifest.json");
  out << m.to_json().dump(2) << '\n';
  if (!out) throw IntegrityError("failed to write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IntegrityError("no manifest.json in " + dir.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("manifest is not valid JSON: ") + e.what());
  }
  auto manifest = DatasetManifest::from_json(j);
  std::vector<STSequence> sequences;
  sequences.reserve(manifest.ids.size());
  for (const auto& id : manifest.ids) {
    STSequence s;
    s.frames = read_sequence_file(dir / sequence_file_name(id), manifest.shape);
    s.raw_range = manifest.normalization;
    s.source_id = id;
    s.kind = SequenceKind::kOriginal;
    sequences.push_back(std::move(s));
  }
  return Dataset(std::move(manifest), std::move(sequences));
}

Dataset make_dataset(std::string name, std::vector<STSequence> sequences, const RawRange& range,
                     const SplitFractions& fractions, std::uint64_t seed) {
  if (sequences.empty()) throw UsageError("dataset needs at least one sequence");
  DatasetManifest m;
  m.name = std::move(name);
  m.num_sequences = static_cast<int64_t>(sequences.size());
  const auto& first = sequences.front();
  m.shape = {first.length(), first.height(), first.width(), first.channels()};
  m.normalization = range;
  m.split = fractions;
  m.seed = seed;
  for (auto& s : sequences) {
    if (std::array<int64_t, 4>{s.length(), s.height(), s.width(), s.channels()} != m.shape)
      throw DimensionError("sequence '" + s.source_id + "' shape differs from the first sequence");
    s.raw_range = range;
    m.ids.push_back(s.source_id);
  }
  m.assignment = assign_splits(m.ids, fractions, seed);
  return Dataset(std::move(m), std::move(sequences));
}

}  // namespace capaint
