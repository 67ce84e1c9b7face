// Matrix-valued reverse-mode tape, the primitive operations the encoder
// needs, losses, and Adam with global-norm clipping.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace unite {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Records operations in creation order, which is already a topological
/// order, so backward is a single reverse sweep. A tape supports exactly one
/// backward pass.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that owns its value.
  Var constant(Matrix value) { return push(std::move(value), nullptr, false, {}); }
  /// Leaf that refers to an externally owned tensor (no copy). The tensor
  /// must outlive the tape.
  Var parameter(const Matrix& value) { return push(Matrix{}, &value, true, {}); }

  const Matrix& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }
  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw Error("tape: expected a scalar node");
    return m.data[0];
  }
  /// Gradient after backward(). Nodes that no gradient reached hold zeros.
  const Matrix& grad(Var v) {
    Node& n = nodes_.at(v.id);
    ensure_grad(n);
    return n.grad;
  }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (backward_done_) throw Error("backward called twice on one tape");
    backward_done_ = true;
    Node& root = nodes_.at(loss.id);
    if (value(loss).size() != 1) throw Error("backward: loss must be a scalar");
    ensure_grad(root);
    root.grad.data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  // Used by operation definitions.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;
  Var record(Matrix value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), nullptr, requires_grad, requires_grad ? std::move(fn) : BackwardFn{});
  }
  Matrix& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    ensure_grad(n);
    return n.grad;
  }
  Matrix& grad_ref(Var v) { return grad_ref(v.id); }
  const Matrix& node_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    Matrix grad;
  };

  Var push(Matrix value, const Matrix* external, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), external, requires_grad, std::move(fn), Matrix{}});
    return Var{nodes_.size() - 1};
  }
  void ensure_grad(Node& n) {
    if (n.grad.size() == 0) {
      const Matrix& v = n.external ? *n.external : n.value;
      if (v.size() != 0) n.grad = Matrix(v.rows, v.cols, 0.0);
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace ops {

namespace detail {

// dA += dC * B^T
inline void accum_a_bt(const Matrix& dc, const Matrix& b, Matrix& da) {
  for (std::size_t i = 0; i < dc.rows; ++i) {
    const double* g = dc.row(i);
    double* out = da.row(i);
    for (std::size_t k = 0; k < b.rows; ++k) {
      const double* brow = b.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < b.cols; ++j) acc += g[j] * brow[j];
      out[k] += acc;
    }
  }
}

// dB += A^T * dC
inline void accum_at_b(const Matrix& a, const Matrix& dc, Matrix& db) {
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.row(k);
    const double* g = dc.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* out = db.row(i);
      for (std::size_t j = 0; j < dc.cols; ++j) out[j] += av * g[j];
    }
  }
}

// dA += dC * B
inline void accum_a_b(const Matrix& dc, const Matrix& b, Matrix& da) {
  for (std::size_t i = 0; i < dc.rows; ++i) {
    const double* g = dc.row(i);
    double* out = da.row(i);
    for (std::size_t k = 0; k < dc.cols; ++k) {
      const double gv = g[k];
      if (gv == 0.0) continue;
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += gv * brow[j];
    }
  }
}

// dB += dC^T * A
inline void accum_ct_a(const Matrix& dc, const Matrix& a, Matrix& db) {
  for (std::size_t k = 0; k < dc.rows; ++k) {
    const double* g = dc.row(k);
    const double* arow = a.row(k);
    for (std::size_t i = 0; i < dc.cols; ++i) {
      const double gv = g[i];
      if (gv == 0.0) continue;
      double* out = db.row(i);
      for (std::size_t j = 0; j < a.cols; ++j) out[j] += gv * arow[j];
    }
  }
}

inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}

}  // namespace detail

/// A * B
inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out;
  matmul_into(t.value(a), t.value(b), out);
  return t.record(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.requires_grad(a)) detail::accum_a_bt(g, tp.value(b), tp.grad_ref(a));
    if (tp.requires_grad(b)) detail::accum_at_b(tp.value(a), g, tp.grad_ref(b));
  });
}

/// A * B^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
  Matrix out;
  matmul_into(t.value(a), t.value(b), out, /*transpose_b=*/true);
  return t.record(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.requires_grad(a)) detail::accum_a_b(g, tp.value(b), tp.grad_ref(a));
    if (tp.requires_grad(b)) detail::accum_ct_a(g, tp.value(a), tp.grad_ref(b));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw Error("shape mismatch in add");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return t.record(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Matrix& d = tp.grad_ref(v);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
  });
}

/// A + broadcast of the 1 x n row `bias` to every row.
inline Var add_row(Tape& t, Var a, Var bias) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(bias);
  if (bv.rows != 1 || bv.cols != av.cols) throw Error("shape mismatch in add_row");
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bv.data[j];
  return t.record(std::move(out), detail::any_grad(t, {a, bias}), [a, bias](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.requires_grad(a)) {
      Matrix& d = tp.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
    if (tp.requires_grad(bias)) {
      Matrix& d = tp.grad_ref(bias);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) d.data[j] += g(i, j);
    }
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a);
  for (auto& x : out.data) x *= s;
  return t.record(std::move(out), t.requires_grad(a), [a, s](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix& d = tp.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += s * g.data[i];
  });
}

inline Var tanh(Tape& t, Var a) {
  Matrix out = t.value(a);
  for (auto& x : out.data) x = std::tanh(x);
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& y = tp.value(Var{self});
    Matrix& d = tp.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
  });
}

/// Row-wise softmax(A + mask). The mask is a constant; blocked entries come
/// out as exact zeros and pass no gradient back to their logits.
inline Var masked_softmax(Tape& t, Var a, const Matrix& mask) {
  const Matrix& av = t.value(a);
  if (!av.same_shape(mask)) throw Error("shape mismatch in masked_softmax");
  Matrix out(av.rows, av.cols);
  for (std::size_t i = 0; i < av.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < av.cols; ++j) mx = std::max(mx, av(i, j) + mask(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < av.cols; ++j) {
      const double e = std::exp(av(i, j) + mask(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < av.cols; ++j) out(i, j) /= sum;
  }
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& p = tp.value(Var{self});
    Matrix& d = tp.grad_ref(a);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols; ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols; ++j) d(i, j) += p(i, j) * (g(i, j) - dot);
    }
  });
}

/// Row-wise layer normalization with gain and bias rows (1 x n).
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  if (gv.rows != 1 || gv.cols != xv.cols || !gv.same_shape(bv)) throw Error("shape mismatch in layer_norm");
  const std::size_t n = xv.cols;
  Matrix normed(xv.rows, n);
  std::vector<double> inv_std(xv.rows);
  Matrix out(xv.rows, n);
  for (std::size_t i = 0; i < xv.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = normed(i, j) * gv.data[j] + bv.data[j];
    }
  }
  return t.record(std::move(out), detail::any_grad(t, {x, gain, bias}),
                  [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.node_grad(self);
                    const std::size_t n = g.cols;
                    if (tp.requires_grad(gain)) {
                      Matrix& d = tp.grad_ref(gain);
                      for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < n; ++j) d.data[j] += g(i, j) * normed(i, j);
                    }
                    if (tp.requires_grad(bias)) {
                      Matrix& d = tp.grad_ref(bias);
                      for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < n; ++j) d.data[j] += g(i, j);
                    }
                    if (tp.requires_grad(x)) {
                      const Matrix& gv = tp.value(gain);
                      Matrix& d = tp.grad_ref(x);
                      for (std::size_t i = 0; i < g.rows; ++i) {
                        double mean_dn = 0.0;
                        double mean_dn_n = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dn = g(i, j) * gv.data[j];
                          mean_dn += dn;
                          mean_dn_n += dn * normed(i, j);
                        }
                        mean_dn /= static_cast<double>(n);
                        mean_dn_n /= static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dn = g(i, j) * gv.data[j];
                          d(i, j) += inv_std[i] * (dn - mean_dn - normed(i, j) * mean_dn_n);
                        }
                      }
                    }
                  });
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(Tape& t, Var table, std::vector<std::size_t> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(ids.size(), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows) throw Error("gather_rows: index out of range");
    std::copy(tv.row(ids[i]), tv.row(ids[i]) + tv.cols, out.row(i));
  }
  return t.record(std::move(out), t.requires_grad(table), [table, ids = std::move(ids)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix& d = tp.grad_ref(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < g.cols; ++j) d(ids[i], j) += g(i, j);
  });
}

/// Row `index` as a 1 x n matrix.
inline Var select_row(Tape& t, Var x, std::size_t index) {
  const Matrix& xv = t.value(x);
  if (index >= xv.rows) throw Error("select_row: index out of range");
  Matrix out(1, xv.cols);
  std::copy(xv.row(index), xv.row(index) + xv.cols, out.data.begin());
  return t.record(std::move(out), t.requires_grad(x), [x, index](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix& d = tp.grad_ref(x);
    for (std::size_t j = 0; j < g.cols; ++j) d(index, j) += g.data[j];
  });
}

/// Columns [begin, end).
inline Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Matrix& xv = t.value(x);
  if (begin > end || end > xv.cols) throw Error("slice_cols: range out of bounds");
  Matrix out(xv.rows, end - begin);
  for (std::size_t i = 0; i < xv.rows; ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = xv(i, j);
  return t.record(std::move(out), t.requires_grad(x), [x, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix& d = tp.grad_ref(x);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) d(i, j + begin) += g(i, j);
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
  const std::size_t rows = t.value(parts.front()).rows;
  std::size_t cols = 0;
  bool needs = false;
  for (auto p : parts) {
    if (t.value(p).rows != rows) throw Error("shape mismatch in concat_cols");
    cols += t.value(p).cols;
    needs = needs || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (auto p : parts) {
    const Matrix& pv = t.value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols; ++j) out(i, off + j) = pv(i, j);
    off += pv.cols;
  }
  return t.record(std::move(out), needs, [parts](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t w = tp.value(p).cols;
      if (tp.requires_grad(p)) {
        Matrix& d = tp.grad_ref(p);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < w; ++j) d(i, j) += g(i, off + j);
      }
      off += w;
    }
  });
}

/// (p - target)^2 for a 1 x 1 prediction.
inline Var squared_error(Tape& t, Var p, double target) {
  const double diff = t.scalar(p) - target;
  return t.record(Matrix(1, 1, diff * diff), t.requires_grad(p), [p, diff](Tape& tp, std::size_t self) {
    tp.grad_ref(p).data[0] += 2.0 * diff * tp.node_grad(self).data[0];
  });
}

/// Sum of 1 x 1 nodes, accumulated left to right.
inline Var sum_scalars(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("sum_scalars: empty");
  double s = 0.0;
  bool needs = false;
  for (auto x : xs) {
    s += t.scalar(x);
    needs = needs || t.requires_grad(x);
  }
  return t.record(Matrix(1, 1, s), needs, [xs](Tape& tp, std::size_t self) {
    const double g = tp.node_grad(self).data[0];
    for (auto x : xs)
      if (tp.requires_grad(x)) tp.grad_ref(x).data[0] += g;
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Losses

/// (p - q)^2
inline double mse_loss(double p, double q) { return (p - q) * (p - q); }

/// Mean of squared errors over a batch.
inline double mse_loss(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw Error("mse_loss: batch size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += mse_loss(p[i], q[i]);
  return s / static_cast<double>(p.size());
}

/// Unweighted sum of the three per-format losses.
inline double multitask_loss(double loss_ref, double loss_src, double loss_srcref) {
  return loss_ref + loss_src + loss_srcref;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
};

inline double global_norm(std::span<const Matrix* const> grads) {
  double s = 0.0;
  for (const Matrix* g : grads)
    for (double x : g->data) s += x * x;
  return std::sqrt(s);
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(std::span<Matrix* const> grads, double max_norm) {
  std::vector<const Matrix*> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix* g : grads)
      for (double& x : g->data) x *= s;
  }
  return norm;
}

/// One bias-corrected Adam update. Gradients are clipped in place first.
inline void adam_step(std::span<Matrix* const> params, std::span<Matrix* const> grads, AdamState& state) {
  if (params.size() != grads.size()) throw Error("adam: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows, p->cols, 0.0);
      state.v.emplace_back(p->rows, p->cols, 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(state.m[k]))
      throw Error("adam: shape mismatch");

  clip_global_norm(grads, state.config.clip_norm);
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    const auto& g = grads[k]->data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace unite
