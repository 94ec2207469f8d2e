#include "rest/loss.hpp"

#include "rest/error.hpp"
#include "rest/perturb.hpp"

namespace rest {

Tensor layer_gram(const Tensor& weight) {
  if (weight.rank() != 2 && weight.rank() != 3) {
    throw ShapeError("layer_gram: weight must be [K_out, K_in] or [K_out, K_in, K_l], got " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.numel() / rows;
  Tensor w = weight.rank() == 2 ? weight : weight.reshape({rows, cols});
  // Gram over the smaller dimension; wide matrices cannot satisfy W^T W = I.
  return rows >= cols ? matmul(transpose(w), w) : matmul(w, transpose(w));
}

Tensor spectral_penalty(const Network& net) {
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (!net.spec().layers[i].has_weight()) continue;
    Tensor gram = layer_gram(net.layer(i).weight);
    const std::size_t n = gram.dim(0);
    Tensor eye({n, n}, 0.0);
    for (std::size_t d = 0; d < n; ++d) eye[d * n + d] = 1.0;
    total = add(total, frobenius_norm(sub(gram, eye)));
  }
  return total;
}

Tensor sparsity_penalty(const Network& net) {
  Tensor total = Tensor::scalar(0.0);
  for (const PrunableUnit& unit : net.spec().prunable) {
    total = add(total, l1_norm(net.layer(unit.norm).gamma));
  }
  return total;
}

LossBreakdown rest_objective(Network& net, const Tensor& x_p, std::span<const int> labels,
                             const TrainConfig& cfg) {
  LossBreakdown out;
  out.lambda_o = cfg.lambda_o;
  out.lambda_g = cfg.sparsity_term ? cfg.lambda_g : 0.0;

  Tensor ce = softmax_cross_entropy(net.forward(x_p, Mode::kTrain), labels);
  out.adversarial = ce.item();
  Tensor total = ce;
  if (out.lambda_o != 0.0) {
    Tensor spectral = spectral_penalty(net);
    out.spectral = spectral.item();
    total = add(total, scale(spectral, out.lambda_o));
  }
  if (out.lambda_g != 0.0) {
    Tensor sparsity = sparsity_penalty(net);
    out.sparsity = sparsity.item();
    total = add(total, scale(sparsity, out.lambda_g));
  }
  out.total = total;
  out.total_value = total.item();
  return out;
}

LossBreakdown rest_loss(Network& net, const Tensor& x, std::span<const int> labels,
                        const TrainConfig& cfg) {
  if (cfg.epsilon == 0.0) return rest_objective(net, x, labels, cfg);
  const Tensor x_p = pgd_attack(net, x, labels, cfg.pgd(), Mode::kTrain);
  return rest_objective(net, x_p, labels, cfg);
}

}  // namespace rest
