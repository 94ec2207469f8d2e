#pragma once

#include <span>

#include "rest/config.hpp"
#include "rest/network.hpp"

namespace rest {

// Soft orthogonality penalty summed over every conv/linear weight:
//   sum_l || G_l - I ||_F
// where conv weights are viewed as [K_out, K_in * K_l] and G_l is the Gram
// matrix over the smaller side (W^T W when K_out >= K_in * K_l, W W^T
// otherwise).
Tensor spectral_penalty(const Network& net);

// Weight matrix of a conv/linear layer reshaped to [K_out, fan_in] and its
// Gram matrix in the orientation used by spectral_penalty.
Tensor layer_gram(const Tensor& weight);

// Sum of |gamma| over the batchnorm of every prunable unit.
Tensor sparsity_penalty(const Network& net);

struct LossBreakdown {
  Tensor total;          // rank-0, recorded on the active tape
  double total_value = 0.0;
  double adversarial = 0.0;  // cross-entropy on the (perturbed) batch
  double spectral = 0.0;     // unweighted penalty
  double sparsity = 0.0;     // unweighted penalty, 0 when the term is off
  double lambda_o = 0.0;
  double lambda_g = 0.0;     // 0 when the sparsity term is off
};

// Objective on already-perturbed inputs:
//   CE(f(x_p), y) + lambda_o * spectral + lambda_g * sparsity
LossBreakdown rest_objective(Network& net, const Tensor& x_p, std::span<const int> labels,
                             const TrainConfig& cfg);

// Full training loss: builds x_p with a fresh PGD attack on the current
// weights (train-mode batchnorm, statistics frozen during the attack), then
// evaluates rest_objective in train mode. With epsilon == 0 the batch is used
// unperturbed.
LossBreakdown rest_loss(Network& net, const Tensor& x, std::span<const int> labels,
                        const TrainConfig& cfg);

}  // namespace rest
