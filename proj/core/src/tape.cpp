#include "rest/tape.hpp"

#include <unordered_map>
#include <unordered_set>

#include "rest/error.hpp"

namespace rest {

namespace {

thread_local Tape* g_active_tape = nullptr;

using GradMap = std::unordered_map<const detail::TensorImpl*, std::vector<double>>;

}  // namespace

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

bool Tape::record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!any) return false;
  Entry entry;
  entry.inputs.reserve(inputs.size());
  for (Tensor& t : inputs) entry.inputs.push_back(std::move(t.impl_));
  output.impl_->requires_grad = true;
  entry.output = output.impl_;
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  std::unordered_set<const detail::TensorImpl*> produced;
  produced.reserve(entries_.size());
  for (const Entry& e : entries_) produced.insert(e.output.get());

  GradMap grads;
  grads[loss.impl_.get()] = {1.0};
  std::vector<double*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = grads.find(it->output.get());
    if (found == grads.end()) continue;
    const std::vector<double> grad_out = std::move(found->second);
    grads.erase(found);
    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const detail::TensorImpl* in = it->inputs[i].get();
      if (!in || !in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      slots[i] = buf.data();
    }
    it->backward(grad_out, slots);
  }

  for (auto& [impl, g] : grads) {
    if (produced.contains(impl) || !impl->requires_grad) continue;
    auto* leaf = const_cast<detail::TensorImpl*>(impl);
    if (leaf->grad.size() != leaf->data.size()) leaf->grad.assign(leaf->data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) leaf->grad[i] += g[i];
  }
}

std::vector<double> Tape::gradient(const Tensor& loss, const Tensor& wrt) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("gradient requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  // Only nodes downstream of wrt carry a gradient towards it.
  std::unordered_set<const detail::TensorImpl*> relevant{wrt.impl_.get()};
  for (const Entry& e : entries_) {
    for (const auto& in : e.inputs) {
      if (relevant.contains(in.get())) {
        relevant.insert(e.output.get());
        break;
      }
    }
  }

  std::vector<double> result(wrt.numel(), 0.0);
  if (loss.impl_ == wrt.impl_) {
    result[0] = 1.0;
    return result;
  }
  if (!relevant.contains(loss.impl_.get())) return result;

  GradMap grads;
  grads[loss.impl_.get()] = {1.0};
  std::vector<double*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = grads.find(it->output.get());
    if (found == grads.end()) continue;
    const std::vector<double> grad_out = std::move(found->second);
    grads.erase(found);
    slots.assign(it->inputs.size(), nullptr);
    bool any = false;
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const detail::TensorImpl* in = it->inputs[i].get();
      if (!relevant.contains(in)) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      slots[i] = buf.data();
      any = true;
    }
    if (any) it->backward(grad_out, slots);
  }
  if (auto found = grads.find(wrt.impl_.get()); found != grads.end()) {
    result = std::move(found->second);
  }
  return result;
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (!tape) throw Error("backward called without an active tape");
  tape->backward(loss);
}

}  // namespace rest
