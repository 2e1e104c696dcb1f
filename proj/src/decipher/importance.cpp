#include "capaint/decipher/importance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "capaint/error.hpp"

namespace capaint::decipher {

void AttentionRecord::validate(double tolerance) const {
  if (!maps.defined() || maps.dim() != 3 || maps.size(1) != maps.size(2))
    throw DimensionError("attention record must be [heads, N, N]");
  auto m = maps.to(torch::kFloat64);
  if ((m < 0).any().item<bool>()) throw NumericError("attention map has negative entries");
  auto row_error = (m.sum(-1) - 1.0).abs().max().item<double>();
  if (row_error > tolerance) throw NumericError("attention rows do not sum to 1");
}

std::vector<std::vector<AttentionRecord>> attention_maps_batch(Reconstructor& model, const torch::Tensor& frames) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> maps;
  model->forward_with_attention(frames, maps);
  std::vector<std::vector<AttentionRecord>> out(static_cast<std::size_t>(frames.size(0)));
  for (int64_t b = 0; b < frames.size(0); ++b)
    for (const auto& layer : maps) out[static_cast<std::size_t>(b)].push_back({layer[b].to(torch::kFloat64)});
  return out;
}

std::vector<AttentionRecord> attention_maps(Reconstructor& model, const torch::Tensor& frame) {
  return attention_maps_batch(model, frame.unsqueeze(0)).front();
}

AttentionRecord scoring_record(const std::vector<AttentionRecord>& layers, AttentionLayers mode) {
  if (layers.empty()) throw UsageError("no attention layers recorded");
  if (mode == AttentionLayers::kFinal) return layers.back();
  auto sum = torch::zeros_like(layers.front().maps);
  for (const auto& r : layers) sum += r.maps;
  return {sum / static_cast<double>(layers.size())};
}

std::vector<double> importance_scores(const AttentionRecord& record) {
  if (!record.maps.defined() || record.maps.dim() != 3) throw DimensionError("attention record must be [heads, N, N]");
  // Column sums (attention received), summed over heads.
  auto received = record.maps.to(torch::kFloat64).sum(0).sum(0);
  auto s = torch::softmax(received, 0).contiguous();
  return {s.data_ptr<double>(), s.data_ptr<double>() + s.numel()};
}

int64_t causal_count(int64_t num_patches, double causal_fraction) {
  const double product = static_cast<double>(num_patches) * causal_fraction;
  const double nearest = std::round(product);
  if (std::abs(product - nearest) < 1e-9) return static_cast<int64_t>(nearest);
  return static_cast<int64_t>(std::ceil(product));
}

CausalPartition partition(const std::vector<double>& scores, double causal_fraction, int64_t frame_index) {
  if (!(causal_fraction > 0.0 && causal_fraction < 1.0))
    throw ConfigError("causal_fraction must lie strictly between 0 and 1");
  const auto n = static_cast<int64_t>(scores.size());
  if (n == 0) throw UsageError("cannot partition an empty score vector");

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  const int64_t k = causal_count(n, causal_fraction);

  CausalPartition out;
  out.causal.assign(order.begin(), order.begin() + k);
  out.environmental.assign(order.begin() + k, order.end());
  std::sort(out.causal.begin(), out.causal.end());
  std::sort(out.environmental.begin(), out.environmental.end());
  out.causal_fraction = causal_fraction;
  out.frame_index = frame_index;
  out.scores = scores;
  return out;
}

std::map<std::string, SequencePartitions> decipher_dataset(Reconstructor& model,
                                                           const std::vector<STSequence>& sequences,
                                                           double causal_fraction, bool aggregate) {
  model->eval();
  const auto mode = model->config().score_layers;
  std::map<std::string, SequencePartitions> store;
  for (const auto& seq : sequences) {
    auto records = attention_maps_batch(model, seq.frames);
    std::vector<std::vector<double>> frame_scores;
    for (const auto& layers : records) frame_scores.push_back(importance_scores(scoring_record(layers, mode)));

    SequencePartitions sp;
    sp.source_id = seq.source_id;
    sp.patch_size = model->config().patch_size;
    sp.causal_fraction = causal_fraction;
    sp.aggregated = aggregate;
    if (aggregate) {
      std::vector<double> mean(frame_scores.front().size(), 0.0);
      for (const auto& s : frame_scores)
        for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i] / static_cast<double>(frame_scores.size());
      for (int64_t t = 0; t < seq.length(); ++t) sp.frames.push_back(partition(mean, causal_fraction, t));
    } else {
      for (int64_t t = 0; t < seq.length(); ++t)
        sp.frames.push_back(partition(frame_scores[static_cast<std::size_t>(t)], causal_fraction, t));
    }
    store.emplace(seq.source_id, std::move(sp));
  }
  return store;
}

std::filesystem::path partition_file(const std::filesystem::path& dir, const std::string& source_id) {
  return dir / ("partition_" + source_id + ".json");
}

void save_partitions(const std::filesystem::path& dir, const SequencePartitions& partitions) {
  std::filesystem::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& p : partitions.frames)
    frames.push_back({{"t", p.frame_index}, {"scores", p.scores}, {"environmental", p.environmental}});
  nlohmann::json j{{"source_id", partitions.source_id},
                   {"patch_size", partitions.patch_size},
                   {"causal_fraction", partitions.causal_fraction},
                   {"aggregated", partitions.aggregated},
                   {"frames", frames}};
  std::ofstream out(partition_file(dir, partitions.source_id));
  out << j.dump() << '\n';
  if (!out) throw IntegrityError("failed to write partitions for " + partitions.source_id);
}

SequencePartitions load_partitions(const std::filesystem::path& dir, const std::string& source_id) {
  std::ifstream in(partition_file(dir, source_id));
  if (!in) throw ConfigError("missing partition file for sequence " + source_id);
  try {
    nlohmann::json j;
    in >> j;
    SequencePartitions sp;
    sp.source_id = j.at("source_id").get<std::string>();
    sp.patch_size = j.at("patch_size").get<int64_t>();
    sp.causal_fraction = j.at("causal_fraction").get<double>();
    sp.aggregated = j.at("aggregated").get<bool>();
    for (const auto& f : j.at("frames")) {
      CausalPartition p;
      p.frame_index = f.at("t").get<int64_t>();
      p.scores = f.at("scores").get<std::vector<double>>();
      p.environmental = f.at("environmental").get<std::vector<int64_t>>();
      p.causal_fraction = sp.causal_fraction;
      std::vector<bool> env(p.scores.size(), false);
      for (auto i : p.environmental) {
        if (i < 0 || i >= static_cast<int64_t>(env.size())) throw IntegrityError("patch index out of range");
        env[static_cast<std::size_t>(i)] = true;
      }
      for (std::size_t i = 0; i < env.size(); ++i)
        if (!env[i]) p.causal.push_back(static_cast<int64_t>(i));
      sp.frames.push_back(std::move(p));
    }
    return sp;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed partition file for " + source_id + ": " + e.what());
  }
}

}  // namespace capaint::decipher
