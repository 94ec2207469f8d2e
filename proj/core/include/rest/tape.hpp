#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rest/tensor.hpp"

namespace rest {

// Reverse-mode differentiation record.
//
// Constructing a Tape makes it the active tape of the calling thread until it
// is destroyed (tapes nest; the previous one is restored). Operations record
// themselves on the active tape whenever one of their inputs requires a
// gradient. Without an active tape nothing is recorded.
class Tape {
 public:
  // grad_out: gradient w.r.t. the op output. grad_in[i]: zero-initialised
  // accumulator for input i, or nullptr when that input needs no gradient.
  // Rules must accumulate (+=) into grad_in.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // Records an op if any input requires a gradient; marks the output as
  // requiring one in that case. Returns whether the op was recorded.
  bool record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);

  // Accumulates d(loss)/d(leaf) into the grad of every requires_grad leaf
  // reachable from loss.
  void backward(const Tensor& loss);

  // d(loss)/d(wrt) without touching any stored gradient.
  std::vector<double> gradient(const Tensor& loss, const Tensor& wrt);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

// Runs Tape::backward on the thread's active tape.
void backward(const Tensor& loss);

}  // namespace rest
