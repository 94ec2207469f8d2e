#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rest/error.hpp"
#include "rest/network.hpp"

namespace rest {

// A checkpoint is a file pair sharing one prefix:
//   <prefix>.manifest.json  spec, config, provenance and the tensor index
//   <prefix>.weights.bin    little-endian f64 values, concatenated
inline constexpr int kCheckpointFormatVersion = 1;

enum class Phase { kTrained, kPruned, kRetrained };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& name);

struct Provenance {
  Phase phase = Phase::kTrained;
  std::uint64_t seed = 0;
  int epoch = 0;
};

struct CheckpointMeta {
  Provenance provenance;
  nlohmann::json config = nlohmann::json::object();
};

struct Checkpoint {
  Network network;
  CheckpointMeta meta;
};

class CheckpointError : public FormatError {
 public:
  enum class Kind { kVersionMismatch, kCorruptIndex, kMissingTensor, kIo };
  CheckpointError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::filesystem::path manifest_path(const std::filesystem::path& prefix);
std::filesystem::path weights_path(const std::filesystem::path& prefix);

void save_checkpoint(const Network& net, const CheckpointMeta& meta,
                     const std::filesystem::path& prefix);
// Either returns a complete network or throws; never a partial one.
Checkpoint load_checkpoint(const std::filesystem::path& prefix);

}  // namespace rest
