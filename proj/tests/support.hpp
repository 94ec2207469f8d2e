#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rest/network.hpp"
#include "rest/random.hpp"
#include "rest/tensor.hpp"

namespace rest::fixtures {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rest_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// conv-bn-relu x2, flatten, linear: the smallest shape with two prunable units
// and a flatten consumer.
inline NetworkSpec small_spec(std::size_t c1, std::size_t c2, std::size_t length = 24,
                              std::size_t classes = 5) {
  NetworkSpec spec;
  spec.name = "small";
  spec.input_channels = 1;
  spec.input_length = length;
  spec.layers = {LayerSpec::conv1d(1, c1, 5, 2), LayerSpec::batch_norm(c1), LayerSpec::relu(),
                 LayerSpec::conv1d(c1, c2, 3, 1), LayerSpec::batch_norm(c2), LayerSpec::relu(),
                 LayerSpec::flatten()};
  const std::size_t l1 = (length - 5) / 2 + 1;
  const std::size_t l2 = l1 - 3 + 1;
  spec.layers.push_back(LayerSpec::linear(c2 * l2, classes));
  spec.prunable = spec.derive_prunable_units();
  return spec;
}

// Randomises batchnorm parameters and running statistics so that masking
// and eval-mode paths are exercised away from the identity initialisation.
inline void scramble_norms(Network& net, Rng& rng) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (net.spec().layers[i].kind != LayerKind::kBatchNorm1d) continue;
    LayerParams& p = net.layer(i);
    for (double& v : p.gamma.data()) v = rng.uniform(0.2, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (double& v : p.beta.data()) v = rng.uniform(-0.5, 0.5);
    for (double& v : p.running_mean.data()) v = rng.uniform(-0.3, 0.3);
    for (double& v : p.running_var.data()) v = rng.uniform(0.5, 2.0);
  }
}

}  // namespace rest::fixtures
