#include "rest/network.hpp"

#include <cmath>
#include <random>

#include "rest/error.hpp"

namespace rest {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kBatchNorm1d: return "batchnorm1d";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kLinear: return "linear";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (LayerKind k : {LayerKind::kConv1d, LayerKind::kBatchNorm1d, LayerKind::kReLU,
                      LayerKind::kFlatten, LayerKind::kLinear}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            bool bias) {
  return {LayerKind::kConv1d, in, out, kernel, stride, bias};
}
LayerSpec LayerSpec::batch_norm(std::size_t channels) {
  return {LayerKind::kBatchNorm1d, channels, channels, 0, 1, false};
}
LayerSpec LayerSpec::relu() { return {LayerKind::kReLU, 0, 0, 0, 1, false}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::kFlatten, 0, 0, 0, 1, false}; }
LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, bool bias) {
  return {LayerKind::kLinear, in, out, 0, 1, bias};
}

std::vector<Shape> NetworkSpec::infer_shapes() const {
  if (input_channels == 0 || input_length == 0) {
    throw ConfigError("network '" + name + "': input shape must be positive");
  }
  std::vector<Shape> shapes;
  Shape cur{input_channels, input_length};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "network '" + name + "' layer " + std::to_string(i) + " (" +
                              to_string(l.kind) + "): ";
    switch (l.kind) {
      case LayerKind::kConv1d:
        if (cur.size() != 2) throw ConfigError(where + "expects [C, L] input");
        if (l.in_channels != cur[0]) {
          throw ConfigError(where + "K_in " + std::to_string(l.in_channels) + " but incoming channels " +
                            std::to_string(cur[0]));
        }
        if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
          throw ConfigError(where + "extents must be positive");
        }
        if (cur[1] < l.kernel) {
          throw ConfigError(where + "input length " + std::to_string(cur[1]) + " shorter than kernel " +
                            std::to_string(l.kernel));
        }
        cur = {l.out_channels, (cur[1] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::kBatchNorm1d:
        if (l.in_channels != cur[0] || l.out_channels != cur[0]) {
          throw ConfigError(where + "channel count " + std::to_string(l.in_channels) +
                            " but incoming channels " + std::to_string(cur[0]));
        }
        break;
      case LayerKind::kReLU:
        break;
      case LayerKind::kFlatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::kLinear:
        if (cur.size() != 1) throw ConfigError(where + "expects flattened input");
        if (l.in_channels != cur[0]) {
          throw ConfigError(where + "K_in " + std::to_string(l.in_channels) + " but incoming features " +
                            std::to_string(cur[0]));
        }
        if (l.out_channels == 0) throw ConfigError(where + "K_out must be positive");
        cur = {l.out_channels};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t NetworkSpec::num_classes() const {
  const auto shapes = infer_shapes();
  if (shapes.empty() || shapes.back().size() != 1) {
    throw ConfigError("network '" + name + "' does not end in a [classes] output");
  }
  return shapes.back()[0];
}

namespace {

// Index of the conv/linear that consumes the output of layer `from`, skipping
// relu/flatten. Returns layers.size() if none.
std::size_t next_consumer(const NetworkSpec& spec, std::size_t from) {
  for (std::size_t i = from + 1; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k == LayerKind::kReLU || k == LayerKind::kFlatten) continue;
    if (k == LayerKind::kConv1d || k == LayerKind::kLinear) return i;
    return spec.layers.size();
  }
  return spec.layers.size();
}

}  // namespace

std::vector<PrunableUnit> NetworkSpec::derive_prunable_units() const {
  std::vector<PrunableUnit> units;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (!layers[i].has_weight() || layers[i + 1].kind != LayerKind::kBatchNorm1d) continue;
    if (next_consumer(*this, i + 1) == layers.size()) continue;
    units.push_back({i, i + 1});
  }
  return units;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network '" + name + "' has no layers");
  const auto shapes = infer_shapes();
  if (shapes.back().size() != 1) {
    throw ConfigError("network '" + name + "' must end with a flattened [classes] output");
  }
  std::size_t prev = 0;
  for (std::size_t u = 0; u < prunable.size(); ++u) {
    const PrunableUnit& unit = prunable[u];
    const std::string where = "network '" + name + "' prunable unit " + std::to_string(u) + ": ";
    if (unit.layer >= layers.size() || !layers[unit.layer].has_weight()) {
      throw ConfigError(where + "layer " + std::to_string(unit.layer) + " is not conv1d/linear");
    }
    if (unit.norm != unit.layer + 1 || unit.norm >= layers.size() ||
        layers[unit.norm].kind != LayerKind::kBatchNorm1d) {
      throw ConfigError(where + "conv1d/linear must be immediately followed by batchnorm1d");
    }
    if (next_consumer(*this, unit.norm) == layers.size()) {
      throw ConfigError(where + "output layer cannot be pruned");
    }
    if (u > 0 && unit.layer <= prev) throw ConfigError(where + "units must be in layer order");
    prev = unit.layer;
  }
}

void to_json(nlohmann::json& j, const LayerSpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)}};
  switch (spec.kind) {
    case LayerKind::kConv1d:
      j["in_channels"] = spec.in_channels;
      j["out_channels"] = spec.out_channels;
      j["kernel"] = spec.kernel;
      j["stride"] = spec.stride;
      j["bias"] = spec.bias;
      break;
    case LayerKind::kLinear:
      j["in_features"] = spec.in_channels;
      j["out_features"] = spec.out_channels;
      j["bias"] = spec.bias;
      break;
    case LayerKind::kBatchNorm1d:
      j["channels"] = spec.in_channels;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& spec) {
  const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::kConv1d:
      spec = LayerSpec::conv1d(j.at("in_channels"), j.at("out_channels"), j.at("kernel"),
                               j.at("stride"), j.value("bias", true));
      break;
    case LayerKind::kLinear:
      spec = LayerSpec::linear(j.at("in_features"), j.at("out_features"), j.value("bias", true));
      break;
    case LayerKind::kBatchNorm1d:
      spec = LayerSpec::batch_norm(j.at("channels"));
      break;
    case LayerKind::kReLU:
      spec = LayerSpec::relu();
      break;
    case LayerKind::kFlatten:
      spec = LayerSpec::flatten();
      break;
  }
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  nlohmann::json units = nlohmann::json::array();
  for (const PrunableUnit& u : spec.prunable) units.push_back({{"layer", u.layer}, {"norm", u.norm}});
  j = nlohmann::json{{"name", spec.name},
                     {"input_channels", spec.input_channels},
                     {"input_length", spec.input_length},
                     {"layers", spec.layers},
                     {"prunable", units}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec.name = j.at("name").get<std::string>();
  spec.input_channels = j.at("input_channels");
  spec.input_length = j.at("input_length");
  spec.layers = j.at("layers").get<std::vector<LayerSpec>>();
  spec.prunable.clear();
  for (const auto& u : j.at("prunable")) spec.prunable.push_back({u.at("layer"), u.at("norm")});
}

namespace {

struct ConvBlock {
  std::size_t out;
  std::size_t kernel;
  std::size_t stride;
};

NetworkSpec conv_stack(std::string name, std::size_t input_length,
                       const std::vector<ConvBlock>& blocks, const std::vector<std::size_t>& hidden,
                       std::size_t classes) {
  NetworkSpec spec;
  spec.name = std::move(name);
  spec.input_channels = 1;
  spec.input_length = input_length;
  std::size_t channels = 1;
  std::size_t length = input_length;
  for (const ConvBlock& b : blocks) {
    if (length < b.kernel) {
      throw ConfigError("preset '" + spec.name + "': input length " + std::to_string(input_length) +
                        " too short for the conv stack");
    }
    spec.layers.push_back(LayerSpec::conv1d(channels, b.out, b.kernel, b.stride));
    spec.layers.push_back(LayerSpec::batch_norm(b.out));
    spec.layers.push_back(LayerSpec::relu());
    channels = b.out;
    length = (length - b.kernel) / b.stride + 1;
  }
  spec.layers.push_back(LayerSpec::flatten());
  std::size_t features = channels * length;
  for (std::size_t h : hidden) {
    spec.layers.push_back(LayerSpec::linear(features, h));
    spec.layers.push_back(LayerSpec::batch_norm(h));
    spec.layers.push_back(LayerSpec::relu());
    features = h;
  }
  spec.layers.push_back(LayerSpec::linear(features, classes));
  spec.prunable = spec.derive_prunable_units();
  spec.validate();
  return spec;
}

}  // namespace

NetworkSpec tiny_preset(std::size_t input_length) {
  return conv_stack("tiny", input_length, {{16, 8, 4}, {16, 5, 2}, {32, 3, 2}, {32, 3, 1}}, {}, 5);
}

NetworkSpec sors_like_preset(std::size_t input_length) {
  return conv_stack("sors-like", input_length,
                    {{8, 7, 2},
                     {8, 5, 1},
                     {16, 5, 2},
                     {16, 3, 1},
                     {16, 3, 2},
                     {16, 3, 1},
                     {32, 3, 1},
                     {32, 3, 2},
                     {32, 3, 1},
                     {32, 3, 1},
                     {32, 3, 1},
                     {32, 3, 1}},
                    {32}, 5);
}

NetworkSpec preset_by_name(const std::string& name, std::size_t input_length) {
  if (name == "tiny") return tiny_preset(input_length);
  if (name == "sors-like") return sors_like_preset(input_length);
  throw ConfigError("unknown network preset '" + name + "' (expected tiny or sors-like)");
}

namespace {

void check_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (!t.defined() || t.shape() != expected) {
    throw ShapeError(what + ": expected shape " + shape_to_string(expected) + ", got " +
                     (t.defined() ? shape_to_string(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

Network::Network(NetworkSpec spec, std::vector<LayerParams> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (params_.size() != spec_.layers.size()) {
    throw ShapeError("network '" + spec_.name + "': " + std::to_string(params_.size()) +
                     " parameter groups for " + std::to_string(spec_.layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string where = "layers." + std::to_string(i);
    LayerParams& p = params_[i];
    switch (l.kind) {
      case LayerKind::kConv1d:
        check_shape(p.weight, {l.out_channels, l.in_channels, l.kernel}, where + ".weight");
        if (l.bias) check_shape(p.bias, {l.out_channels}, where + ".bias");
        break;
      case LayerKind::kLinear:
        check_shape(p.weight, {l.out_channels, l.in_channels}, where + ".weight");
        if (l.bias) check_shape(p.bias, {l.out_channels}, where + ".bias");
        break;
      case LayerKind::kBatchNorm1d:
        check_shape(p.gamma, {l.in_channels}, where + ".gamma");
        check_shape(p.beta, {l.in_channels}, where + ".beta");
        check_shape(p.running_mean, {l.in_channels}, where + ".running_mean");
        check_shape(p.running_var, {l.in_channels}, where + ".running_var");
        break;
      default:
        break;
    }
  }
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<LayerParams> params(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams& p = params[i];
    if (l.has_weight()) {
      const std::size_t fan_in = l.kind == LayerKind::kConv1d ? l.in_channels * l.kernel : l.in_channels;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Shape shape = l.kind == LayerKind::kConv1d ? Shape{l.out_channels, l.in_channels, l.kernel}
                                                  : Shape{l.out_channels, l.in_channels};
      p.weight = Tensor(shape);
      for (double& w : p.weight.data()) w = dist(rng);
      p.weight.set_requires_grad(true);
      if (l.bias) p.bias = Tensor({l.out_channels}, 0.0).set_requires_grad(true);
    } else if (l.kind == LayerKind::kBatchNorm1d) {
      p.gamma = Tensor({l.in_channels}, 1.0).set_requires_grad(true);
      p.beta = Tensor({l.in_channels}, 0.0).set_requires_grad(true);
      p.running_mean = Tensor({l.in_channels}, 0.0);
      p.running_var = Tensor({l.in_channels}, 1.0);
    }
  }
  return Network(spec, std::move(params));
}

namespace {

LayerParams deep_copy(const LayerParams& p) {
  return {p.weight.clone(), p.bias.clone(), p.gamma.clone(),
          p.beta.clone(),   p.running_mean.clone(), p.running_var.clone()};
}

}  // namespace

Network::Network(const Network& other) : spec_(other.spec_) {
  params_.reserve(other.params_.size());
  for (const LayerParams& p : other.params_) params_.push_back(deep_copy(p));
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor Network::forward(const Tensor& x, Mode mode, StatsUpdate stats) {
  if (x.rank() != 3 || x.dim(1) != spec_.input_channels || x.dim(2) != spec_.input_length) {
    throw ShapeError("network '" + spec_.name + "': expected input [B, " +
                     std::to_string(spec_.input_channels) + ", " + std::to_string(spec_.input_length) +
                     "], got " + shape_to_string(x.shape()));
  }
  BatchNormOptions bn;
  bn.mode = mode;
  bn.momentum = kBatchNormMomentum;
  bn.eps = kBatchNormEps;
  bn.update_running_stats = stats == StatsUpdate::kUpdate;
  Tensor cur = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    LayerParams& p = params_[i];
    switch (l.kind) {
      case LayerKind::kConv1d:
        cur = conv1d(cur, p.weight, p.bias, l.stride);
        break;
      case LayerKind::kBatchNorm1d:
        cur = batch_norm1d(cur, p.gamma, p.beta, p.running_mean, p.running_var, bn);
        break;
      case LayerKind::kReLU:
        cur = relu(cur);
        break;
      case LayerKind::kFlatten:
        cur = flatten(cur);
        break;
      case LayerKind::kLinear:
        cur = linear(cur, p.weight, p.bias);
        break;
    }
  }
  return cur;
}

std::vector<NamedTensor> Network::named_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    const LayerParams& p = params_[i];
    if (p.weight.defined()) out.push_back({prefix + "weight", p.weight, true});
    if (p.bias.defined()) out.push_back({prefix + "bias", p.bias, true});
    if (p.gamma.defined()) out.push_back({prefix + "gamma", p.gamma, true});
    if (p.beta.defined()) out.push_back({prefix + "beta", p.beta, true});
    if (p.running_mean.defined()) out.push_back({prefix + "running_mean", p.running_mean, false});
    if (p.running_var.defined()) out.push_back({prefix + "running_var", p.running_var, false});
  }
  return out;
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (const NamedTensor& t : named_tensors()) {
    if (t.learnable) out.push_back(t.tensor);
  }
  return out;
}

void Network::zero_grad() {
  for (Tensor& t : parameters()) t.zero_grad();
}

bool bitwise_equal(const Network& a, const Network& b) {
  if (!(a.spec() == b.spec())) return false;
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || !bitwise_equal(ta[i].tensor, tb[i].tensor)) return false;
  }
  return true;
}

ParamCount count_params(const NetworkSpec& spec) {
  ParamCount count;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerCount c{i, l.kind, 0, 0};
    switch (l.kind) {
      case LayerKind::kConv1d:
        c.learnable = l.out_channels * l.in_channels * l.kernel + (l.bias ? l.out_channels : 0);
        break;
      case LayerKind::kLinear:
        c.learnable = l.out_channels * l.in_channels + (l.bias ? l.out_channels : 0);
        break;
      case LayerKind::kBatchNorm1d:
        c.learnable = 2 * l.in_channels;
        c.buffers = 2 * l.in_channels;
        break;
      default:
        break;
    }
    count.total += c.learnable;
    count.bytes += (c.learnable + c.buffers) * sizeof(double);
    count.per_layer.push_back(c);
  }
  return count;
}

FlopCount count_flops(const NetworkSpec& spec) {
  const auto shapes = spec.infer_shapes();
  FlopCount count;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& out = shapes[i];
    std::uint64_t f = 0;
    switch (l.kind) {
      case LayerKind::kConv1d: {
        const std::uint64_t lout = out[1];
        f = 2ull * l.out_channels * l.in_channels * l.kernel * lout;
        if (l.bias) f += static_cast<std::uint64_t>(l.out_channels) * lout;
        break;
      }
      case LayerKind::kLinear:
        f = 2ull * l.in_channels * l.out_channels + (l.bias ? l.out_channels : 0);
        break;
      case LayerKind::kBatchNorm1d:
        f = 2ull * shape_numel(out);
        break;
      case LayerKind::kReLU:
        f = shape_numel(out);
        break;
      case LayerKind::kFlatten:
        break;
    }
    count.per_layer.push_back(f);
    count.total += f;
  }
  return count;
}

}  // namespace rest
