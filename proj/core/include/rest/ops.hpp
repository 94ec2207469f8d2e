#pragma once

#include <span>

#include "rest/tensor.hpp"

// Differentiable primitives. Every function records itself on the active
// Tape when one of its inputs requires a gradient.
namespace rest {

enum class Mode { kTrain, kEval };

// ---- elementwise ----------------------------------------------------------

// Same-shape operands, or one operand of rank 0 broadcast against the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
// Not differentiable; sign(0) == 0. The result never requires a gradient.
Tensor sign(const Tensor& x);
// Gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions (all return rank-0 tensors) -------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l1_norm(const Tensor& x);  // subgradient 0 at 0
Tensor squared_frobenius(const Tensor& x);
// sqrt of the sum of squares; gradient defined as 0 when the norm is 0.
Tensor frobenius_norm(const Tensor& x);

// ---- linear algebra -------------------------------------------------------

Tensor transpose(const Tensor& m);                  // [r, c] -> [c, r]
Tensor matmul(const Tensor& a, const Tensor& b);    // [m, k] x [k, n]

// ---- layers ---------------------------------------------------------------

// input [B, K_in, L], weight [K_out, K_in, K_l], bias [K_out] (may be
// undefined). Valid cross-correlation, L_out = (L - K_l) / stride + 1.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride);

// input [B, K_in], weight [K_out, K_in], bias [K_out] (may be undefined).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct BatchNormOptions {
  Mode mode = Mode::kTrain;
  double momentum = 0.1;
  double eps = 1e-5;
  bool update_running_stats = true;
};

// input [B, C, L] or [B, C]. Train mode normalises with the minibatch
// statistics over (B, L) and, if requested, blends them into the running
// statistics (running variance uses the unbiased estimate). Eval mode uses
// the running statistics.
Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& options);

// [B, C, L] -> [B, C * L]
Tensor flatten(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise argmax of [B, C] logits.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace rest
