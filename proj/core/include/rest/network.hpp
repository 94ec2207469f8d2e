#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rest/ops.hpp"
#include "rest/tensor.hpp"

namespace rest {

enum class LayerKind { kConv1d, kBatchNorm1d, kReLU, kFlatten, kLinear };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kReLU;
  std::size_t in_channels = 0;   // conv K_in / linear K_in / batchnorm C
  std::size_t out_channels = 0;  // conv K_out / linear K_out / batchnorm C
  std::size_t kernel = 0;        // conv only
  std::size_t stride = 1;        // conv only
  bool bias = true;              // conv / linear

  static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          bool bias = true);
  static LayerSpec batch_norm(std::size_t channels);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec linear(std::size_t in, std::size_t out, bool bias = true);

  bool has_weight() const { return kind == LayerKind::kConv1d || kind == LayerKind::kLinear; }
  bool operator==(const LayerSpec&) const = default;
};

// A conv/linear layer together with the batchnorm that scales its filters.
struct PrunableUnit {
  std::size_t layer = 0;
  std::size_t norm = 0;
  bool operator==(const PrunableUnit&) const = default;
};

struct NetworkSpec {
  std::string name;
  std::size_t input_channels = 1;
  std::size_t input_length = 0;
  std::vector<LayerSpec> layers;
  std::vector<PrunableUnit> prunable;

  // Throws ConfigError describing the first inconsistency found.
  void validate() const;
  // Per-item output shape after every layer (no batch axis); index i is the
  // output of layers[i].
  std::vector<Shape> infer_shapes() const;
  std::size_t num_classes() const;
  // Every conv/linear immediately followed by a batchnorm whose output feeds
  // another conv/linear.
  std::vector<PrunableUnit> derive_prunable_units() const;

  bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const LayerSpec& spec);
void from_json(const nlohmann::json& j, LayerSpec& spec);
void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

// 4 conv (widths 16-32) + 1 linear head over a 1 x input_length input, 5 classes.
NetworkSpec tiny_preset(std::size_t input_length = 256);
// 12 conv + 2 linear at reduced width over a 1 x input_length input.
NetworkSpec sors_like_preset(std::size_t input_length = 256);
NetworkSpec preset_by_name(const std::string& name, std::size_t input_length = 256);

struct LayerParams {
  Tensor weight;  // conv [K_out, K_in, K_l] / linear [K_out, K_in]
  Tensor bias;    // [K_out]
  Tensor gamma;   // batchnorm [C]
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool learnable = true;
};

enum class StatsUpdate { kUpdate, kFrozen };

class Network {
 public:
  static constexpr double kBatchNormMomentum = 0.1;
  static constexpr double kBatchNormEps = 1e-5;

  Network() = default;
  // Takes ownership of externally constructed parameters; validates every
  // shape against the spec.
  Network(NetworkSpec spec, std::vector<LayerParams> params);

  // Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases and beta,
  // unit gamma, running mean 0 and running variance 1.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  // Copies are deep.
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return params_.size(); }
  LayerParams& layer(std::size_t i) { return params_.at(i); }
  const LayerParams& layer(std::size_t i) const { return params_.at(i); }

  // x: [B, input_channels, input_length] -> logits [B, num_classes].
  // Train mode normalises with batch statistics; running statistics are
  // blended in unless stats == kFrozen.
  Tensor forward(const Tensor& x, Mode mode, StatsUpdate stats = StatsUpdate::kUpdate);

  // Stable names "layers.<i>.<field>", learnable tensors flagged.
  std::vector<NamedTensor> named_tensors() const;
  // weights, biases, gamma and beta
  std::vector<Tensor> parameters() const;
  void zero_grad();

 private:
  NetworkSpec spec_;
  std::vector<LayerParams> params_;
};

bool bitwise_equal(const Network& a, const Network& b);

struct LayerCount {
  std::size_t index = 0;
  LayerKind kind = LayerKind::kReLU;
  std::size_t learnable = 0;
  std::size_t buffers = 0;
};

struct ParamCount {
  std::vector<LayerCount> per_layer;
  std::size_t total = 0;  // learnable only
  std::size_t bytes = 0;  // learnable + running statistics at f64
  double kilobytes() const { return static_cast<double>(bytes) / 1024.0; }
};

ParamCount count_params(const NetworkSpec& spec);
inline ParamCount count_params(const Network& net) { return count_params(net.spec()); }

struct FlopCount {
  std::vector<std::uint64_t> per_layer;
  std::uint64_t total = 0;  // multiply and add counted separately, per batch item
  double mflops() const { return static_cast<double>(total) / 1e6; }
};

// Per batch item: conv 2*K_out*K_in*K_l*L_out (+K_out*L_out bias),
// linear 2*K_in*K_out (+K_out), batchnorm 2*C*L, relu C*L, flatten 0.
FlopCount count_flops(const NetworkSpec& spec);
inline FlopCount count_flops(const Network& net) { return count_flops(net.spec()); }

}  // namespace rest
