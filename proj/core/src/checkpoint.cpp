#include "rest/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

namespace rest {

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::kTrained: return "trained";
    case Phase::kPruned: return "pruned";
    case Phase::kRetrained: return "retrained";
  }
  return "unknown";
}

Phase phase_from_string(const std::string& name) {
  if (name == "trained") return Phase::kTrained;
  if (name == "pruned") return Phase::kPruned;
  if (name == "retrained") return Phase::kRetrained;
  throw CheckpointError(CheckpointError::Kind::kCorruptIndex, "unknown provenance phase '" + name + "'");
}

std::filesystem::path manifest_path(const std::filesystem::path& prefix) {
  return std::filesystem::path(prefix.string() + ".manifest.json");
}

std::filesystem::path weights_path(const std::filesystem::path& prefix) {
  return std::filesystem::path(prefix.string() + ".weights.bin");
}

namespace {

void write_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_file_atomically(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

void save_checkpoint(const Network& net, const CheckpointMeta& meta,
                     const std::filesystem::path& prefix) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const NamedTensor& t : net.named_tensors()) {
    for (double v : t.tensor.data()) write_f64_le(blob, v);
    index.push_back({{"name", t.name},
                     {"shape", t.tensor.shape()},
                     {"offset", offset},
                     {"count", t.tensor.numel()},
                     {"learnable", t.learnable}});
    offset += t.tensor.numel() * sizeof(double);
  }
  nlohmann::json manifest{
      {"format_version", kCheckpointFormatVersion},
      {"spec", net.spec()},
      {"config", meta.config},
      {"provenance",
       {{"phase", to_string(meta.provenance.phase)},
        {"seed", meta.provenance.seed},
        {"epoch", meta.provenance.epoch}}},
      {"weights_file", weights_path(prefix).filename().string()},
      {"weights_bytes", blob.size()},
      {"tensors", index},
  };
  write_file_atomically(weights_path(prefix), blob);
  write_file_atomically(manifest_path(prefix), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& prefix) {
  using Kind = CheckpointError::Kind;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path(prefix)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorruptIndex,
                          "manifest " + manifest_path(prefix).string() + " is not valid JSON: " + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(Kind::kVersionMismatch,
                          "checkpoint format_version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));
  }

  const std::string blob = read_file(weights_path(prefix));
  try {
    NetworkSpec spec = manifest.at("spec").get<NetworkSpec>();
    spec.validate();
    std::map<std::string, nlohmann::json> entries;
    for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    const auto declared = manifest.at("weights_bytes").get<std::size_t>();
    if (blob.size() != declared) {
      throw CheckpointError(Kind::kCorruptIndex, "weights file holds " + std::to_string(blob.size()) +
                                                     " bytes, manifest declares " +
                                                     std::to_string(declared));
    }

    // A freshly built network provides the expected tensor names and shapes.
    Network net = Network::build(spec, 0);
    for (NamedTensor& t : net.named_tensors()) {
      auto it = entries.find(t.name);
      if (it == entries.end()) {
        throw CheckpointError(Kind::kMissingTensor, "checkpoint is missing tensor '" + t.name + "'");
      }
      const auto shape = it->second.at("shape").get<Shape>();
      if (shape != t.tensor.shape()) {
        throw CheckpointError(Kind::kCorruptIndex, "tensor '" + t.name + "' has shape " +
                                                       shape_to_string(shape) + ", spec requires " +
                                                       shape_to_string(t.tensor.shape()));
      }
      const auto offset = it->second.at("offset").get<std::size_t>();
      const std::size_t bytes = t.tensor.numel() * sizeof(double);
      if (offset > blob.size() || blob.size() - offset < bytes) {
        throw CheckpointError(Kind::kCorruptIndex,
                              "tensor '" + t.name + "' lies outside the weights file");
      }
      const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset);
      auto data = t.tensor.data();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_f64_le(p + 8 * i);
    }

    Checkpoint ck{std::move(net), {}};
    const auto& prov = manifest.at("provenance");
    ck.meta.provenance.phase = phase_from_string(prov.at("phase").get<std::string>());
    ck.meta.provenance.seed = prov.at("seed").get<std::uint64_t>();
    ck.meta.provenance.epoch = prov.at("epoch").get<int>();
    ck.meta.config = manifest.value("config", nlohmann::json::object());
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorruptIndex, std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kCorruptIndex, std::string("invalid network spec: ") + e.what());
  }
}

}  // namespace rest
