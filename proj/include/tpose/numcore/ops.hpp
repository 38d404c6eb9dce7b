#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tpose/numcore/graph.hpp"

namespace tpose::nc {

inline constexpr double kLogFloor = 1e-12;

using Segments = std::vector<std::size_t>;

inline void check_segments(const Segments& segments, std::size_t width) {
  std::size_t total = 0;
  for (auto s : segments) {
    if (s == 0) throw ConfigError("softmax segment of length 0");
    total += s;
  }
  if (total != width) {
    throw ShapeError("segment lengths sum to " + std::to_string(total) + " but logits have width " +
                     std::to_string(width));
  }
}

inline bool any_grad(const Graph& g, std::initializer_list<Var> vars) {
  for (auto v : vars) {
    if (g.needs_grad(v)) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Value-level kernels (no tape)
// ---------------------------------------------------------------------------

/// Per-segment softmax of each row of a [rows, width] (or [width]) tensor.
inline Tensor softmax(const Tensor& logits, const Segments& segments) {
  const std::size_t width = logits.shape().back();
  check_segments(segments, width);
  Tensor out(logits.shape());
  const std::size_t rows = logits.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data() + r * width;
    double* y = out.data() + r * width;
    std::size_t off = 0;
    for (auto len : segments) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[off + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        y[off + j] = std::exp(x[off + j] - mx);
        z += y[off + j];
      }
      for (std::size_t j = 0; j < len; ++j) y[off + j] /= z;
      off += len;
    }
  }
  return out;
}

inline Tensor log_softmax(const Tensor& logits, const Segments& segments) {
  const std::size_t width = logits.shape().back();
  check_segments(segments, width);
  Tensor out(logits.shape());
  const std::size_t rows = logits.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data() + r * width;
    double* y = out.data() + r * width;
    std::size_t off = 0;
    for (auto len : segments) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[off + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) z += std::exp(x[off + j] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < len; ++j) y[off + j] = x[off + j] - lse;
      off += len;
    }
  }
  return out;
}

struct CrossEntropy {
  double loss = 0.0;
  std::size_t saturated = 0;  ///< entries where the target probability hit the floor
};

/// Sum over rows and bins of -target * log(max(predicted, floor)).
inline CrossEntropy factored_cross_entropy(const Tensor& predicted, const Tensor& target,
                                           double floor = kLogFloor) {
  if (predicted.shape() != target.shape()) {
    throw ShapeError("cross-entropy predicted " + shape_string(predicted.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  CrossEntropy ce;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (target[i] == 0.0) continue;
    double p = predicted[i];
    if (!(p > floor)) {
      p = floor;
      ++ce.saturated;
    }
    ce.loss -= target[i] * std::log(p);
  }
  return ce;
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

/// x[B, in] * w[in, out] + b[out].
inline Var linear(Var x, Var w, Var b) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + " incompatible with weights " +
                     shape_string(wv.shape()));
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) {
    throw ShapeError("linear: bias " + shape_string(bv.shape()) + " incompatible with weights " +
                     shape_string(wv.shape()));
  }
  const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor y({batch, out});
  affine(xv.values(), batch, in, wv.values(), bv.values(), out, y.values());
  return g.op(std::move(y), any_grad(g, {x, w, b}), [x, w, b, batch, in, out](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    if (g.needs_grad(x)) gemm::add_dy_wt(dy.data(), batch, out, g.value(w).data(), in, g.grad(x.id).data());
    if (g.needs_grad(w)) gemm::add_xt_dy(g.value(x).data(), batch, in, dy.data(), out, g.grad(w.id).data());
    if (g.needs_grad(b)) {
      Tensor& db = g.grad(b.id);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < out; ++j) db[j] += dy[r * out + j];
      }
    }
  });
}

/// Same-padded 1-d convolution: x[B, Cin, L], kernel[Cout, Cin, 3], bias[Cout] -> [B, Cout, L].
inline Var conv1d(Var x, Var kernel, Var bias) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const Tensor& kv = g.value(kernel);
  const Tensor& bv = g.value(bias);
  if (kv.rank() != 3) throw ShapeError("conv1d: kernel must be [out, in, width], got " + shape_string(kv.shape()));
  if (kv.dim(2) != 3) {
    throw ConfigError("conv1d: unsupported kernel size " + std::to_string(kv.dim(2)) + " (only 3)");
  }
  if (xv.rank() != 3 || xv.dim(1) != kv.dim(1)) {
    throw ShapeError("conv1d: input " + shape_string(xv.shape()) + " incompatible with kernel " +
                     shape_string(kv.shape()));
  }
  if (xv.dim(2) < 1) throw ShapeError("conv1d: empty input length");
  if (bv.rank() != 1 || bv.dim(0) != kv.dim(0)) {
    throw ShapeError("conv1d: bias " + shape_string(bv.shape()) + " incompatible with kernel " +
                     shape_string(kv.shape()));
  }
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), len = xv.dim(2), cout = kv.dim(0);
  Tensor y({batch, cout, len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yr = y.data() + (b * cout + o) * len;
      std::fill(yr, yr + len, bv[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xr = xv.data() + (b * cin + c) * len;
        const double* kr = kv.data() + (o * cin + c) * 3;
        for (std::size_t t = 0; t < len; ++t) {
          double s = kr[1] * xr[t];
          if (t > 0) s += kr[0] * xr[t - 1];
          if (t + 1 < len) s += kr[2] * xr[t + 1];
          yr[t] += s;
        }
      }
    }
  }
  return g.op(std::move(y), any_grad(g, {x, kernel, bias}),
              [x, kernel, bias, batch, cin, len, cout](Graph& g, std::size_t self) {
                const Tensor& dy = g.grad(self);
                const Tensor& xv = g.value(x);
                const Tensor& kv = g.value(kernel);
                const bool gx = g.needs_grad(x), gk = g.needs_grad(kernel), gb = g.needs_grad(bias);
                Tensor* dx = gx ? &g.grad(x.id) : nullptr;
                Tensor* dk = gk ? &g.grad(kernel.id) : nullptr;
                Tensor* db = gb ? &g.grad(bias.id) : nullptr;
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t o = 0; o < cout; ++o) {
                    const double* dyr = dy.data() + (b * cout + o) * len;
                    if (db) {
                      for (std::size_t t = 0; t < len; ++t) (*db)[o] += dyr[t];
                    }
                    for (std::size_t c = 0; c < cin; ++c) {
                      const double* xr = xv.data() + (b * cin + c) * len;
                      const double* kr = kv.data() + (o * cin + c) * 3;
                      for (std::size_t t = 0; t < len; ++t) {
                        const double d = dyr[t];
                        if (dx) {
                          double* dxr = dx->data() + (b * cin + c) * len;
                          dxr[t] += kr[1] * d;
                          if (t > 0) dxr[t - 1] += kr[0] * d;
                          if (t + 1 < len) dxr[t + 1] += kr[2] * d;
                        }
                        if (dk) {
                          double* dkr = dk->data() + (o * cin + c) * 3;
                          dkr[1] += xr[t] * d;
                          if (t > 0) dkr[0] += xr[t - 1] * d;
                          if (t + 1 < len) dkr[2] += xr[t + 1] * d;
                        }
                      }
                    }
                  }
                }
              });
}

namespace detail {

template <typename F, typename DF>
Var unary(Var x, F f, DF df_from_y_x) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return g.op(std::move(y), g.needs_grad(x), [x, df_from_y_x](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& yv = g.value(self);
    const Tensor& xv = g.value(x);
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df_from_y_x(yv[i], xv[i]);
  });
}

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

}  // namespace detail

inline Var relu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double, double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double y, double) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double y, double) { return y; });
}

inline Var square(Var x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double, double v) { return 2.0 * v; });
}

/// a * x + c elementwise, constants a and c.
inline Var affine(Var x, double a, double c) {
  return detail::unary(
      x, [a, c](double v) { return a * v + c; }, [a](double, double) { return a; });
}

inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double, double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Var add(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::same_shape(av, bv, "add");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.op(std::move(y), any_grad(g, {a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    for (Var v : {a, b}) {
      if (!g.needs_grad(v)) continue;
      Tensor& d = g.grad(v.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::same_shape(av, bv, "sub");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return g.op(std::move(y), any_grad(g, {a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    if (g.needs_grad(a)) {
      Tensor& d = g.grad(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (g.needs_grad(b)) {
      Tensor& d = g.grad(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::same_shape(av, bv, "mul");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return g.op(std::move(y), any_grad(g, {a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.needs_grad(a)) {
      Tensor& d = g.grad(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * bv[i];
    }
    if (g.needs_grad(b)) {
      Tensor& d = g.grad(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

inline Var minimum(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::same_shape(av, bv, "minimum");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(av[i], bv[i]);
  return g.op(std::move(y), any_grad(g, {a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    // Ties route the gradient to the first operand.
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const bool first = av[i] <= bv[i];
      if (first && g.needs_grad(a)) g.grad(a.id)[i] += dy[i];
      if (!first && g.needs_grad(b)) g.grad(b.id)[i] += dy[i];
    }
  });
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  Tensor y = g.value(x).reshaped(std::move(shape));
  return g.op(std::move(y), g.needs_grad(x), [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

/// Concatenate two [B, p] and [B, q] tensors along columns.
inline Var concat_cols(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    throw ShapeError("concat_cols: " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const std::size_t rows = av.dim(0), p = av.dim(1), q = bv.dim(1);
  Tensor y({rows, p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * p, p, y.data() + r * (p + q));
    std::copy_n(bv.data() + r * q, q, y.data() + r * (p + q) + p);
  }
  return g.op(std::move(y), any_grad(g, {a, b}), [a, b, rows, p, q](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    if (g.needs_grad(a)) {
      Tensor& d = g.grad(a.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < p; ++j) d[r * p + j] += dy[r * (p + q) + j];
    }
    if (g.needs_grad(b)) {
      Tensor& d = g.grad(b.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < q; ++j) d[r * q + j] += dy[r * (p + q) + p + j];
    }
  });
}

/// Sum of all elements -> scalar [1].
inline Var sum(Var x) {
  Graph& g = *x.graph;
  Tensor y({1}, g.value(x).sum());
  return g.op(std::move(y), g.needs_grad(x), [x](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.graph->value(x).size());
  return affine(sum(x), 1.0 / n, 0.0);
}

/// Sum of x[i] * w[i] with constant weights (masks, per-sample scales).
inline Var weighted_sum(Var x, std::vector<double> weights) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  if (weights.size() != xv.size()) throw ShapeError("weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return g.op(Tensor({1}, s), g.needs_grad(x), [x, w = std::move(weights)](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * w[i];
  });
}

/// Per-segment softmax of each row.
inline Var softmax(Var logits, const Segments& segments) {
  Graph& g = *logits.graph;
  Tensor y = softmax(g.value(logits), segments);
  const std::size_t width = y.shape().back();
  return g.op(std::move(y), g.needs_grad(logits), [logits, segments, width](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& p = g.value(self);
    Tensor& dx = g.grad(logits.id);
    const std::size_t rows = p.size() / width;
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t off = r * width;
      for (auto len : segments) {
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += dy[off + j] * p[off + j];
        for (std::size_t j = 0; j < len; ++j) dx[off + j] += p[off + j] * (dy[off + j] - dot);
        off += len;
      }
    }
  });
}

inline Var log_softmax(Var logits, const Segments& segments) {
  Graph& g = *logits.graph;
  Tensor y = log_softmax(g.value(logits), segments);
  const std::size_t width = y.shape().back();
  return g.op(std::move(y), g.needs_grad(logits), [logits, segments, width](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& lp = g.value(self);
    Tensor& dx = g.grad(logits.id);
    const std::size_t rows = lp.size() / width;
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t off = r * width;
      for (auto len : segments) {
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) total += dy[off + j];
        for (std::size_t j = 0; j < len; ++j) dx[off + j] += dy[off + j] - std::exp(lp[off + j]) * total;
        off += len;
      }
    }
  });
}

/// Factored cross-entropy on probabilities: sum of -target * log(max(p, floor)).
/// Entries clamped at the floor carry zero gradient; their count goes to `saturated`.
inline Var factored_cross_entropy(Var probs, const Tensor& target, std::size_t* saturated = nullptr,
                                  double floor = kLogFloor) {
  Graph& g = *probs.graph;
  const Tensor& p = g.value(probs);
  const CrossEntropy ce = factored_cross_entropy(p, target, floor);
  if (saturated) *saturated += ce.saturated;
  return g.op(Tensor({1}, ce.loss), g.needs_grad(probs), [probs, target, floor](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    const Tensor& p = g.value(probs);
    Tensor& dp = g.grad(probs.id);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (target[i] != 0.0 && p[i] > floor) dp[i] -= d * target[i] / p[i];
    }
  });
}

/// Sum over segments of the log-probability of the chosen category in each segment.
/// logp[B, K] holds per-segment log-softmax values; choices[B * segments] are in-segment indices.
inline Var pick_segments(Var logp, const Segments& segments, const std::vector<std::size_t>& choices) {
  Graph& g = *logp.graph;
  const Tensor& lp = g.value(logp);
  const std::size_t width = lp.shape().back();
  check_segments(segments, width);
  const std::size_t rows = lp.size() / width;
  if (choices.size() != rows * segments.size()) throw ShapeError("pick_segments: choice count mismatch");
  std::vector<std::size_t> flat(choices.size());
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const std::size_t c = choices[r * segments.size() + s];
      if (c >= segments[s]) throw ShapeError("pick_segments: choice out of segment range");
      flat[r * segments.size() + s] = r * width + off + c;
      y[r] += lp[r * width + off + c];
      off += segments[s];
    }
  }
  const std::size_t nseg = segments.size();
  return g.op(std::move(y), g.needs_grad(logp), [logp, flat = std::move(flat), nseg](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(logp.id);
    for (std::size_t i = 0; i < flat.size(); ++i) dx[flat[i]] += dy[i / nseg];
  });
}

/// Sum over segments of the categorical entropy, per row, from log-softmax values. -> [B]
inline Var segment_entropy(Var logp, const Segments& segments) {
  Graph& g = *logp.graph;
  const Tensor& lp = g.value(logp);
  const std::size_t width = lp.shape().back();
  check_segments(segments, width);
  const std::size_t rows = lp.size() / width;
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double h = 0.0;
    for (std::size_t j = 0; j < width; ++j) h -= std::exp(lp[r * width + j]) * lp[r * width + j];
    y[r] = h;
  }
  // dH/dlp_j = -p_j (1 + lp_j); the log-softmax backward handles the simplex constraint.
  return g.op(std::move(y), g.needs_grad(logp), [logp, width](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& lp = g.value(logp);
    Tensor& dx = g.grad(logp.id);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      dx[i] -= dy[i / width] * std::exp(lp[i]) * (1.0 + lp[i]);
    }
  });
}

}  // namespace tpose::nc
