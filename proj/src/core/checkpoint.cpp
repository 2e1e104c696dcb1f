#include "capaint/core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "capaint/error.hpp"

namespace capaint {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'C', 'K', 'P', 'T', '\x01'};

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

nlohmann::json read_header_json(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IntegrityError(path.string() + " is not a capaint checkpoint");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || length > (1ULL << 30)) throw IntegrityError("corrupt checkpoint header length in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IntegrityError("truncated checkpoint header in " + path.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint header is not JSON: " + std::string(e.what()));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointHeader& header) {
  auto state = named_state(module);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> payload;
  for (auto& [name, tensor] : state) {
    auto data = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    tensors.push_back({{"name", name}, {"shape", data.sizes().vec()}, {"offset", offset}, {"numel", data.numel()}});
    offset += static_cast<std::uint64_t>(data.numel()) * sizeof(float);
    payload.push_back(std::move(data));
  }
  nlohmann::json j{{"kind", header.kind}, {"config", header.config}, {"meta", header.meta}, {"tensors", tensors}};
  const std::string text = j.dump();
  const std::uint64_t length = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(length));
  for (const auto& t : payload)
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw IntegrityError("failed to write checkpoint " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  auto j = read_header_json(in, path);
  return {j.value("kind", ""), j.value("config", nlohmann::json{}), j.value("meta", nlohmann::json{})};
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  auto j = read_header_json(in, path);
  const auto payload_start = in.tellg();

  auto state = named_state(module);
  const auto& entries = j.at("tensors");
  if (entries.size() != state.size())
    throw IntegrityError("checkpoint holds " + std::to_string(entries.size()) + " tensors, module expects " +
                         std::to_string(state.size()));
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& [name, target] = state[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != name)
      throw IntegrityError("checkpoint tensor " + e.at("name").get<std::string>() + " where " + name + " expected");
    if (e.at("shape").get<std::vector<int64_t>>() != target.sizes().vec())
      throw IntegrityError("checkpoint tensor " + name + " has mismatched shape");
    auto buffer = torch::empty(target.sizes(), torch::kFloat32);
    in.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(buffer.data_ptr<float>()), static_cast<std::streamsize>(buffer.numel() * sizeof(float)));
    if (!in) throw IntegrityError("truncated checkpoint payload for " + name);
    target.copy_(buffer);
  }
  return {j.value("kind", ""), j.value("config", nlohmann::json{}), j.value("meta", nlohmann::json{})};
}

}  // namespace capaint
