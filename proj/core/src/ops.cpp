#include "rest/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rest/error.hpp"
#include "rest/tape.hpp"

namespace rest {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

enum class Broadcast { kNone, kScalarA, kScalarB };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 0) return Broadcast::kScalarA;
  if (b.rank() == 0) return Broadcast::kScalarB;
  throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                   shape_to_string(b.shape()) + " are not compatible");
}

// Applies fn(x_a, x_b) elementwise under scalar broadcasting.
template <typename Fn>
Tensor binary_forward(const Tensor& a, const Tensor& b, Broadcast kind, Fn fn) {
  const Shape& out_shape = kind == Broadcast::kScalarA ? b.shape() : a.shape();
  Tensor out(out_shape);
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = kind == Broadcast::kScalarA ? da[0] : da[i];
    const double y = kind == Broadcast::kScalarB ? db[0] : db[i];
    o[i] = fn(x, y);
  }
  return out;
}

// Accumulates a full-size gradient into a possibly-broadcast operand.
void accumulate(double* dst, bool is_scalar, std::size_t i, double v) {
  if (is_scalar) {
    dst[0] += v;
  } else {
    dst[i] += v;
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  Tensor out = binary_forward(a, b, kind, [](double x, double y) { return x + y; });
  if (recording({&a, &b})) {
    const bool sa = kind == Broadcast::kScalarA;
    const bool sb = kind == Broadcast::kScalarB;
    Tape::current()->record({a, b}, out, [sa, sb](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (gin[0]) accumulate(gin[0], sa, i, g[i]);
        if (gin[1]) accumulate(gin[1], sb, i, g[i]);
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "sub");
  Tensor out = binary_forward(a, b, kind, [](double x, double y) { return x - y; });
  if (recording({&a, &b})) {
    const bool sa = kind == Broadcast::kScalarA;
    const bool sb = kind == Broadcast::kScalarB;
    Tape::current()->record({a, b}, out, [sa, sb](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (gin[0]) accumulate(gin[0], sa, i, g[i]);
        if (gin[1]) accumulate(gin[1], sb, i, -g[i]);
      }
    });
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "hadamard");
  Tensor out = binary_forward(a, b, kind, [](double x, double y) { return x * y; });
  if (recording({&a, &b})) {
    const bool sa = kind == Broadcast::kScalarA;
    const bool sb = kind == Broadcast::kScalarB;
    Tape::current()->record({a, b}, out, [a, b, sa, sb](auto g, auto gin) {
      auto da = a.data();
      auto db = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = sa ? da[0] : da[i];
        const double y = sb ? db[0] : db[i];
        if (gin[0]) accumulate(gin[0], sa, i, g[i] * y);
        if (gin[1]) accumulate(gin[1], sb, i, g[i] * x);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (recording({&a})) {
    Tape::current()->record({a}, out, [factor](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += factor * g[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (recording({&x})) {
    Tape::current()->record({x}, out, [x](auto g, auto gin) {
      auto in = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) gin[0][i] += g[i];
      }
    });
  }
  return out;
}

Tensor sign(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? 1.0 : (in[i] < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(in[i], lo, hi);
  if (recording({&x})) {
    Tape::current()->record({x}, out, [x, lo, hi](auto g, auto gin) {
      auto in = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > lo && in[i] < hi) gin[0][i] += g[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (recording({&x})) {
    Tape::current()->record({x}, out, [n = x.numel()](auto g, auto gin) {
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor l1_norm(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += std::abs(v);
  Tensor out = Tensor::scalar(total);
  if (recording({&x})) {
    Tape::current()->record({x}, out, [x](auto g, auto gin) {
      auto in = x.data();
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double s = in[i] > 0.0 ? 1.0 : (in[i] < 0.0 ? -1.0 : 0.0);
        gin[0][i] += g[0] * s;
      }
    });
  }
  return out;
}

Tensor squared_frobenius(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v * v;
  Tensor out = Tensor::scalar(total);
  if (recording({&x})) {
    Tape::current()->record({x}, out, [x](auto g, auto gin) {
      auto in = x.data();
      for (std::size_t i = 0; i < in.size(); ++i) gin[0][i] += 2.0 * g[0] * in[i];
    });
  }
  return out;
}

Tensor frobenius_norm(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v * v;
  const double norm = std::sqrt(total);
  Tensor out = Tensor::scalar(norm);
  if (recording({&x})) {
    Tape::current()->record({x}, out, [x, norm](auto g, auto gin) {
      if (norm == 0.0) return;
      auto in = x.data();
      for (std::size_t i = 0; i < in.size(); ++i) gin[0][i] += g[0] * in[i] / norm;
    });
  }
  return out;
}

Tensor transpose(const Tensor& m) {
  require_rank(m, 2, "transpose", "input");
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  Tensor out({cols, rows});
  auto o = out.data();
  auto in = m.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) o[c * rows + r] = in[r * cols + c];
  }
  if (recording({&m})) {
    Tape::current()->record({m}, out, [rows, cols](auto g, auto gin) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gin[0][r * cols + c] += g[c * rows + r];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double v = da[i * k + p];
      const double* brow = db.data() + p * n;
      double* orow = o.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  if (recording({&a, &b})) {
    Tape::current()->record({a, b}, out, [a, b, m, k, n](auto g, auto gin) {
      auto da = a.data();
      auto db = b.data();
      if (double* ga = gin[0]) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * db[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (double* gb = gin[1]) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double v = da[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += v * g[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  require_rank(input, 3, "conv1d", "input");
  require_rank(weight, 3, "conv1d", "weight");
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  const std::size_t batch = input.dim(0);
  const std::size_t cin = input.dim(1);
  const std::size_t len = input.dim(2);
  const std::size_t cout = weight.dim(0);
  const std::size_t klen = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv1d: input channels " + std::to_string(cin) +
                     " do not match weight K_in " + std::to_string(weight.dim(1)));
  }
  if (len < klen) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(klen));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv1d: bias shape " + shape_to_string(bias.shape()) + " does not match K_out " +
                     std::to_string(cout));
  }
  const std::size_t lout = (len - klen) / stride + 1;
  Tensor out({batch, cout, lout});
  const double* in = input.data().data();
  const double* w = weight.data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* orow = o + (b * cout + co) * lout;
      if (bias.defined()) std::fill(orow, orow + lout, bias[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* irow = in + (b * cin + ci) * len;
        const double* wrow = w + (co * cin + ci) * klen;
        for (std::size_t k = 0; k < klen; ++k) {
          const double wk = wrow[k];
          const double* src = irow + k;
          if (stride == 1) {
            for (std::size_t t = 0; t < lout; ++t) orow[t] += wk * src[t];
          } else {
            for (std::size_t t = 0; t < lout; ++t) orow[t] += wk * src[t * stride];
          }
        }
      }
    }
  }
  if (recording({&input, &weight, &bias})) {
    Tape::current()->record(
        {input, weight, bias}, out,
        [input, weight, batch, cin, len, cout, klen, lout, stride](auto g, auto gin) {
          const double* in = input.data().data();
          const double* w = weight.data().data();
          double* gi = gin[0];
          double* gw = gin[1];
          double* gb = gin[2];
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t co = 0; co < cout; ++co) {
              const double* grow = g.data() + (b * cout + co) * lout;
              if (gb) {
                double acc = 0.0;
                for (std::size_t t = 0; t < lout; ++t) acc += grow[t];
                gb[co] += acc;
              }
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* irow = in + (b * cin + ci) * len;
                const double* wrow = w + (co * cin + ci) * klen;
                for (std::size_t k = 0; k < klen; ++k) {
                  if (gw) {
                    const double* src = irow + k;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < lout; ++t) acc += grow[t] * src[t * stride];
                    gw[(co * cin + ci) * klen + k] += acc;
                  }
                  if (gi) {
                    const double wk = wrow[k];
                    double* dst = gi + (b * cin + ci) * len + k;
                    for (std::size_t t = 0; t < lout; ++t) dst[t * stride] += wk * grow[t];
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::size_t batch = input.dim(0);
  const std::size_t kin = input.dim(1);
  const std::size_t kout = weight.dim(0);
  if (weight.dim(1) != kin) {
    throw ShapeError("linear: input features " + std::to_string(kin) +
                     " do not match weight K_in " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kout)) {
    throw ShapeError("linear: bias shape " + shape_to_string(bias.shape()) +
                     " does not match K_out " + std::to_string(kout));
  }
  Tensor out({batch, kout});
  const double* x = input.data().data();
  const double* w = weight.data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xrow = x + b * kin;
    for (std::size_t j = 0; j < kout; ++j) {
      const double* wrow = w + j * kin;
      double acc = bias.defined() ? bias[j] : 0.0;
      for (std::size_t i = 0; i < kin; ++i) acc += xrow[i] * wrow[i];
      o[b * kout + j] = acc;
    }
  }
  if (recording({&input, &weight, &bias})) {
    Tape::current()->record({input, weight, bias}, out,
                            [input, weight, batch, kin, kout](auto g, auto gin) {
                              const double* x = input.data().data();
                              const double* w = weight.data().data();
                              for (std::size_t b = 0; b < batch; ++b) {
                                const double* grow = g.data() + b * kout;
                                for (std::size_t j = 0; j < kout; ++j) {
                                  const double gv = grow[j];
                                  if (gin[0]) {
                                    double* gx = gin[0] + b * kin;
                                    const double* wrow = w + j * kin;
                                    for (std::size_t i = 0; i < kin; ++i) gx[i] += gv * wrow[i];
                                  }
                                  if (gin[1]) {
                                    double* gw = gin[1] + j * kin;
                                    const double* xrow = x + b * kin;
                                    for (std::size_t i = 0; i < kin; ++i) gw[i] += gv * xrow[i];
                                  }
                                  if (gin[2]) gin[2][j] += gv;
                                }
                              }
                            });
  }
  return out;
}

Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, const BatchNormOptions& options) {
  if (!input.defined() || (input.rank() != 3 && input.rank() != 2)) {
    throw ShapeError("batch_norm1d: input must be [B, C, L] or [B, C], got " +
                     shape_to_string(input.shape()));
  }
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t len = input.rank() == 3 ? input.dim(2) : 1;
  const Tensor* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor* t : per_channel) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batch_norm1d: per-channel tensor shape " + shape_to_string(t->shape()) +
                       " does not match channel count " + std::to_string(channels));
    }
  }
  const std::size_t count = batch * len;
  const bool train = options.mode == Mode::kTrain;
  if (train && count < 2) {
    throw ShapeError("batch_norm1d: degenerate batch, train mode needs B*L >= 2 per channel, got " +
                     std::to_string(count));
  }

  Tensor out(input.shape());
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  const double* x = input.data().data();
  double* o = out.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    double mu;
    double var;
    if (train) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = x + (b * channels + c) * len;
        for (std::size_t t = 0; t < len; ++t) acc += row[t];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = x + (b * channels + c) * len;
        for (std::size_t t = 0; t < len; ++t) sq += (row[t] - mu) * (row[t] - mu);
      }
      var = sq / static_cast<double>(count);
      if (options.update_running_stats) {
        const double m = options.momentum;
        const double unbiased = sq / static_cast<double>(count - 1);
        running_mean[c] = (1.0 - m) * running_mean[c] + m * mu;
        running_var[c] = (1.0 - m) * running_var[c] + m * unbiased;
      }
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + options.eps);
    (*inv_std)[c] = is;
    const double gc = gamma[c];
    const double bc = beta[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        const double h = (x[base + t] - mu) * is;
        (*xhat)[base + t] = h;
        o[base + t] = gc * h + bc;
      }
    }
  }

  if (recording({&input, &gamma, &beta})) {
    Tape::current()->record(
        {input, gamma, beta}, out,
        [gamma, xhat, inv_std, batch, channels, len, train](auto g, auto gin) {
          const double n = static_cast<double>(batch * len);
          for (std::size_t c = 0; c < channels; ++c) {
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
              const std::size_t base = (b * channels + c) * len;
              for (std::size_t t = 0; t < len; ++t) {
                sum_g += g[base + t];
                sum_gx += g[base + t] * (*xhat)[base + t];
              }
            }
            if (gin[1]) gin[1][c] += sum_gx;
            if (gin[2]) gin[2][c] += sum_g;
            if (double* gx = gin[0]) {
              const double k = gamma[c] * (*inv_std)[c];
              for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t base = (b * channels + c) * len;
                for (std::size_t t = 0; t < len; ++t) {
                  if (train) {
                    gx[base + t] +=
                        k * (g[base + t] - sum_g / n - (*xhat)[base + t] * sum_gx / n);
                  } else {
                    gx[base + t] += k * g[base + t];
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("flatten: input must have a batch axis, got " +
                                     shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t features = batch == 0 ? shape_numel(Shape(x.shape().begin() + 1, x.shape().end()))
                                          : x.numel() / batch;
  return x.reshape({batch, features});
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  }
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const double* z = logits.data().data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = z + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double acc = 0.0;
    for (std::size_t c = 0; c < classes; ++c) acc += std::exp(row[c] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - lse);
    total += lse - row[label];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  if (recording({&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    Tape::current()->record({logits}, out,
                            [probs, owned = std::move(owned), batch, classes](auto g, auto gin) {
                              const double k = g[0] / static_cast<double>(batch);
                              for (std::size_t b = 0; b < batch; ++b) {
                                for (std::size_t c = 0; c < classes; ++c) {
                                  double p = (*probs)[b * classes + c];
                                  if (static_cast<int>(c) == owned[b]) p -= 1.0;
                                  gin[0][b * classes + c] += k * p;
                                }
                              }
                            });
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows", "logits");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data().data() + b * classes;
    out[b] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace rest
