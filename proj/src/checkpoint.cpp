#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "clmlf/training.hpp"

namespace clmlf {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'L', 'M', 'L', 'F', 'C', 'K', 'P'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocab& vocab,
                     const TrainConfig& config, const std::string& rng_state) {
  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& p : model.params().all()) {
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"count", p.value.size()}});
    for (float v : p.value) put_f32(blob, v);
    offset += p.value.size();
  }
  const nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                                   {"params", params},
                                   {"blob_bytes", blob.size()},
                                   {"model", to_json(model.config())},
                                   {"train_config", to_json(config)},
                                   {"vocab", vocab.tokens()},
                                   {"rng_state", rng_state}};
  const std::string text = manifest.dump();
  std::string out(kMagic.begin(), kMagic.end());
  put_u64(out, text.size());
  out += text;
  out += blob;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    corrupt(path, "not a checkpoint file (bad magic)");
  }
  const std::uint64_t manifest_len = get_u64(raw + 8);
  if (manifest_len > bytes.size() - 16) corrupt(path, "manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("malformed manifest: ") + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointVersion) {
    corrupt(path, "format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t blob_start = 16 + manifest_len;
  const std::size_t blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
  const std::size_t actual = bytes.size() - blob_start;
  if (actual != blob_bytes) {
    corrupt(path, "size mismatch: manifest declares " + std::to_string(blob_bytes) + " blob bytes, file holds " +
                      std::to_string(actual));
  }

  ModelConfig mc = model_config_from_json(manifest.at("model"));
  Checkpoint ck{Model<float>(mc), Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>()),
                train_config_from_json(manifest.at("train_config")), manifest.value("rng_state", std::string())};
  auto& blocks = ck.model.params().all();
  const auto& entries = manifest.at("params");
  if (entries.size() != blocks.size()) {
    corrupt(path, "manifest lists " + std::to_string(entries.size()) + " parameter blocks, model has " +
                      std::to_string(blocks.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& p = blocks[i];
    const auto& e = entries[i];
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t count = e.at("count").get<std::size_t>();
    if (name != p.name || shape != p.shape || count != p.value.size()) {
      corrupt(path, "parameter " + name + " " + shape_string(shape) + " does not match model block " + p.name + " " +
                        shape_string(p.shape));
    }
    if (offset != expected_offset) corrupt(path, "manifest offsets do not tile the blob at " + name);
    for (std::size_t k = 0; k < count; ++k) p.value[k] = get_f32(raw + blob_start + 4 * (offset + k));
    expected_offset += count;
  }
  if (expected_offset * 4 != blob_bytes) {
    corrupt(path, "size mismatch: parameters cover " + std::to_string(expected_offset * 4) + " bytes, blob has " +
                      std::to_string(blob_bytes));
  }
  return ck;
}

}  // namespace clmlf
