// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode gradient engine over dense arrays. Each Tape node is a whole
// array operation (matmul, gather, conv, ...) so tapes stay short even for
// large batches. Values and gradients are held in double precision; Parameter
// master values are float32 (see optim.hpp).
//
// Only the operations needed by the rendering/attention compute graph are
// provided; this is not a general autodiff framework.
#pragma once

#include <cblas.h>
#include <malloc.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dynavol/common.hpp"

namespace dynavol::ad {

// Trainable quantity. `values` is the float32 master copy the optimizer
// updates; `grad` is accumulated in double by Tape::backward.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  std::vector<double> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shp, bool train = true)
      : name(std::move(n)), shape(std::move(shp)), trainable(train) {
    size_t sz = 1;
    for (int d : shape) sz *= size_t(d);
    values.assign(sz, 0.0f);
    grad.assign(sz, 0.0);
  }
  size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  bool finite() const {
    for (float v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

enum class Act { None, Relu, Sigmoid, Tanh };

inline double act_forward(Act a, double x) {
  switch (a) {
    case Act::None: return x;
    case Act::Relu: return x > 0 ? x : 0;
    case Act::Sigmoid:
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      else { double e = std::exp(x); return e / (1.0 + e); }
    case Act::Tanh: return std::tanh(x);
  }
  return x;
}

// Derivative expressed through the activation output.
inline double act_deriv_from_out(Act a, double y) {
  switch (a) {
    case Act::None: return 1.0;
    case Act::Relu: return y > 0 ? 1.0 : 0.0;
    case Act::Sigmoid: return y * (1.0 - y);
    case Act::Tanh: return 1.0 - y * y;
  }
  return 1.0;
}

using Var = int;

// BLAS-internal threading is disabled (all parallelism in this library is
// explicit and partitions disjoint outputs), and large tape arrays that come
// and go every step stay on the heap instead of round-tripping through mmap.
extern "C" void openblas_set_num_threads(int);

inline void engine_runtime_init() {
  static const bool once = [] {
    openblas_set_num_threads(1);
#ifdef M_MMAP_THRESHOLD
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return true;
  }();
  (void)once;
}

class Tape {
 public:
  explicit Tape(bool track = true) : track_(track) { engine_runtime_init(); }

  bool tracking() const { return track_; }
  int rows(Var v) const { return arrs_[size_t(v)].rows; }
  int cols(Var v) const { return arrs_[size_t(v)].cols; }
  size_t size(Var v) const { return arrs_[size_t(v)].val.size(); }
  const std::vector<double>& val(Var v) const { return arrs_[size_t(v)].val; }
  std::vector<double>& mutable_val(Var v) { return arrs_[size_t(v)].val; }
  const std::vector<double>& grad_of(Var v) const { return arrs_[size_t(v)].grad; }
  double scalar(Var v) const {
    check(size(v) == 1, ErrorKind::Numeric, "scalar() on non-scalar array");
    return arrs_[size_t(v)].val[0];
  }

  Var constant(int rows, int cols, const double* data = nullptr) {
    return push(rows, cols, data, /*needs_grad=*/false);
  }
  Var constant(int rows, int cols, const std::vector<double>& data) {
    check(data.size() == size_t(rows) * size_t(cols), ErrorKind::Numeric, "constant size mismatch");
    return push(rows, cols, data.data(), false);
  }
  // Constant input whose gradient is still tracked (used to split a larger
  // graph across worker tapes).
  Var input_grad(int rows, int cols, const double* data) {
    return push(rows, cols, data, true);
  }

  Var param(Parameter& p, int rows, int cols) {
    check(p.size() == size_t(rows) * size_t(cols), ErrorKind::Numeric,
          "param view shape mismatch for " + p.name);
    Var v = push(rows, cols, nullptr, true);
    auto& a = arrs_[size_t(v)];
    for (size_t i = 0; i < p.size(); i++) a.val[i] = double(p.values[i]);
    if (track_) leaves_.push_back({v, &p});
    return v;
  }
  // Flat view: rows = size, cols = 1 unless shape is 2D.
  Var param(Parameter& p) {
    if (p.shape.size() == 2) return param(p, p.shape[0], p.shape[1]);
    return param(p, int(p.size()), 1);
  }

  // Reverse pass from a scalar loss. Populates grads of every tracked array;
  // accumulation into the bound Parameters' grad fields can be deferred for
  // worker tapes whose grads are reduced externally.
  void backward(Var loss, bool accumulate_params = true) {
    check(size(loss) == 1, ErrorKind::Numeric, "backward() needs a scalar loss");
    if (!std::isfinite(scalar(loss))) fail_non_finite();
    arrs_[size_t(loss)].grad[0] = 1.0;
    run_backward(accumulate_params);
  }

  // Reverse pass seeding an arbitrary array with an externally supplied
  // gradient (worker reduction path).
  void backward_seed(Var v, const std::vector<double>& seed) {
    check(seed.size() == size(v), ErrorKind::Numeric, "backward_seed size mismatch");
    auto& g = arrs_[size_t(v)].grad;
    for (size_t i = 0; i < seed.size(); i++) g[i] += seed[i];
    run_backward(true);
  }

  const std::vector<std::pair<Var, Parameter*>>& leaves() const { return leaves_; }
  size_t num_nodes() const { return nodes_.size(); }

 private:
  friend struct OpBuilder;

  struct Arr {
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;  // allocated only when tracking
  };
  struct Node {
    const char* name;
    Var out;
    std::function<void(Tape&)> bwd;
  };

  Var push(int rows, int cols, const double* data, bool needs_grad) {
    Arr a;
    a.rows = rows;
    a.cols = cols;
    size_t sz = size_t(rows) * size_t(cols);
    if (data) a.val.assign(data, data + sz);
    else a.val.assign(sz, 0.0);
    if (track_ && needs_grad) a.grad.assign(sz, 0.0);
    arrs_.push_back(std::move(a));
    return Var(arrs_.size() - 1);
  }

  void run_backward(bool accumulate_params) {
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (arrs_[size_t(nodes_[i].out)].grad.empty()) continue;
      nodes_[i].bwd(*this);
    }
    if (!accumulate_params) return;
    for (auto& [v, p] : leaves_) {
      if (!p->trainable) continue;
      auto& g = arrs_[size_t(v)].grad;
      for (size_t i = 0; i < g.size(); i++) p->grad[i] += g[i];
    }
  }

  [[noreturn]] void fail_non_finite() const {
    for (const auto& n : nodes_) {
      for (double x : arrs_[size_t(n.out)].val) {
        if (!std::isfinite(x))
          throw_numeric(strfmt("non-finite loss; first non-finite value produced by operation '%s'", n.name));
      }
    }
    throw_numeric("non-finite loss (non-finite input to the graph)");
  }

  bool track_;
  std::vector<Arr> arrs_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Var, Parameter*>> leaves_;
};

// Helper shared by all op definitions.
struct OpBuilder {
  Tape& tp;

  Tape::Arr& arr(Var v) { return tp.arrs_[size_t(v)]; }
  const std::vector<double>& val(Var v) { return tp.arrs_[size_t(v)].val; }
  std::vector<double>& grad(Var v) { return tp.arrs_[size_t(v)].grad; }
  bool tracked(Var v) { return !tp.arrs_[size_t(v)].grad.empty(); }

  Var out(int rows, int cols) {
    // Results get a grad buffer whenever the tape records nodes at all.
    tp.arrs_.push_back({});
    auto& a = tp.arrs_.back();
    a.rows = rows;
    a.cols = cols;
    a.val.assign(size_t(rows) * size_t(cols), 0.0);
    if (tp.track_) a.grad.assign(a.val.size(), 0.0);
    return Var(tp.arrs_.size() - 1);
  }
  void node(const char* name, Var o, std::function<void(Tape&)> bwd) {
    if (tp.track_) tp.nodes_.push_back({name, o, std::move(bwd)});
  }
};

// --- BLAS helper: C[m x n] (+)= op(A) * op(B) --------------------------------
inline void gemm(bool ta, bool tb, int m, int n, int k, const double* A, const double* B,
                 double* C, double beta) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) std::fill(C, C + size_t(m) * n, 0.0);
    return;
  }
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, 1.0, A, ta ? m : k, B, tb ? k : n, beta, C, n);
}

// --- Elementwise -------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
inline Var unary_op(Tape& tp, Var x, const char* name, Fwd f, Bwd dfdx_from_in_out) {
  OpBuilder b{tp};
  Var o = b.out(tp.rows(x), tp.cols(x));
  auto& xv = b.val(x);
  auto& ov = b.arr(o).val;
  for (size_t i = 0; i < xv.size(); i++) ov[i] = f(xv[i]);
  b.node(name, o, [x, o, dfdx_from_in_out](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xv = bb.val(x);
    auto& ov = bb.val(o);
    auto& xg = bb.grad(x);
    for (size_t i = 0; i < g.size(); i++) xg[i] += g[i] * dfdx_from_in_out(xv[i], ov[i]);
  });
  return o;
}

}  // namespace detail

inline Var add(Tape& tp, Var a, Var b) {
  OpBuilder ob{tp};
  check(tp.rows(a) == tp.rows(b) && tp.cols(a) == tp.cols(b), ErrorKind::Numeric, "add shape mismatch");
  Var o = ob.out(tp.rows(a), tp.cols(a));
  auto& av = ob.val(a);
  auto& bv = ob.val(b);
  auto& ov = ob.arr(o).val;
  for (size_t i = 0; i < av.size(); i++) ov[i] = av[i] + bv[i];
  ob.node("add", o, [a, b, o](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    if (bb.tracked(a)) {
      auto& ga = bb.grad(a);
      for (size_t i = 0; i < g.size(); i++) ga[i] += g[i];
    }
    if (bb.tracked(b)) {
      auto& gb = bb.grad(b);
      for (size_t i = 0; i < g.size(); i++) gb[i] += g[i];
    }
  });
  return o;
}

inline Var sub(Tape& tp, Var a, Var b) {
  OpBuilder ob{tp};
  check(tp.rows(a) == tp.rows(b) && tp.cols(a) == tp.cols(b), ErrorKind::Numeric, "sub shape mismatch");
  Var o = ob.out(tp.rows(a), tp.cols(a));
  auto& av = ob.val(a);
  auto& bv = ob.val(b);
  auto& ov = ob.arr(o).val;
  for (size_t i = 0; i < av.size(); i++) ov[i] = av[i] - bv[i];
  ob.node("sub", o, [a, b, o](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    if (bb.tracked(a)) {
      auto& ga = bb.grad(a);
      for (size_t i = 0; i < g.size(); i++) ga[i] += g[i];
    }
    if (bb.tracked(b)) {
      auto& gb = bb.grad(b);
      for (size_t i = 0; i < g.size(); i++) gb[i] -= g[i];
    }
  });
  return o;
}

inline Var mul(Tape& tp, Var a, Var b) {
  OpBuilder ob{tp};
  check(tp.rows(a) == tp.rows(b) && tp.cols(a) == tp.cols(b), ErrorKind::Numeric, "mul shape mismatch");
  Var o = ob.out(tp.rows(a), tp.cols(a));
  auto& av = ob.val(a);
  auto& bv = ob.val(b);
  auto& ov = ob.arr(o).val;
  for (size_t i = 0; i < av.size(); i++) ov[i] = av[i] * bv[i];
  ob.node("mul", o, [a, b, o](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    auto& av = bb.val(a);
    auto& bv = bb.val(b);
    if (bb.tracked(a)) {
      auto& ga = bb.grad(a);
      for (size_t i = 0; i < g.size(); i++) ga[i] += g[i] * bv[i];
    }
    if (bb.tracked(b)) {
      auto& gb = bb.grad(b);
      for (size_t i = 0; i < g.size(); i++) gb[i] += g[i] * av[i];
    }
  });
  return o;
}

inline Var scale(Tape& tp, Var x, double c) {
  return detail::unary_op(tp, x, "scale", [c](double v) { return v * c; },
                          [c](double, double) { return c; });
}
inline Var add_const(Tape& tp, Var x, double c) {
  return detail::unary_op(tp, x, "add_const", [c](double v) { return v + c; },
                          [](double, double) { return 1.0; });
}
inline Var neg(Tape& tp, Var x) { return scale(tp, x, -1.0); }

inline Var recip(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "recip", [](double v) { return 1.0 / v; },
                          [](double, double y) { return -y * y; });
}
inline Var exp_op(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "exp", [](double v) { return std::exp(v); },
                          [](double, double y) { return y; });
}
inline Var log_op(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "log", [](double v) { return std::log(v); },
                          [](double v, double) { return 1.0 / v; });
}
inline Var clamp(Tape& tp, Var x, double lo, double hi) {
  return detail::unary_op(tp, x, "clamp",
                          [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
                          [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}
inline Var relu(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "relu", [](double v) { return v > 0 ? v : 0; },
                          [](double, double y) { return y > 0 ? 1.0 : 0.0; });
}
inline Var sigmoid(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "sigmoid", [](double v) { return act_forward(Act::Sigmoid, v); },
                          [](double, double y) { return y * (1.0 - y); });
}
inline Var tanh_op(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "tanh", [](double v) { return std::tanh(v); },
                          [](double, double y) { return 1.0 - y * y; });
}
inline Var softplus(Tape& tp, Var x) {
  return detail::unary_op(tp, x, "softplus",
                          [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
                          [](double v, double) { return act_forward(Act::Sigmoid, v); });
}

// --- Shape plumbing -----------------------------------------------------------

inline Var reshape(Tape& tp, Var x, int rows, int cols) {
  OpBuilder ob{tp};
  check(size_t(rows) * size_t(cols) == tp.size(x), ErrorKind::Numeric, "reshape size mismatch");
  Var o = ob.out(rows, cols);
  ob.arr(o).val = ob.val(x);
  ob.node("reshape", o, [x, o](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (size_t i = 0; i < g.size(); i++) xg[i] += g[i];
  });
  return o;
}

inline Var slice_cols(Tape& tp, Var x, int c0, int c1) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  check(0 <= c0 && c0 < c1 && c1 <= C, ErrorKind::Numeric, "slice_cols out of range");
  int W = c1 - c0;
  Var o = ob.out(R, W);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < R; r++)
    std::memcpy(&ov[size_t(r) * W], &xv[size_t(r) * C + c0], size_t(W) * sizeof(double));
  ob.node("slice_cols", o, [x, o, c0, W, C, R](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int r = 0; r < R; r++)
      for (int c = 0; c < W; c++) xg[size_t(r) * C + c0 + c] += g[size_t(r) * W + c];
  });
  return o;
}

inline Var concat_cols(Tape& tp, const std::vector<Var>& xs) {
  OpBuilder ob{tp};
  check(!xs.empty(), ErrorKind::Numeric, "concat_cols: empty");
  int R = tp.rows(xs[0]), C = 0;
  for (Var v : xs) {
    check(tp.rows(v) == R, ErrorKind::Numeric, "concat_cols row mismatch");
    C += tp.cols(v);
  }
  Var o = ob.out(R, C);
  auto& ov = ob.arr(o).val;
  int off = 0;
  for (Var v : xs) {
    int W = tp.cols(v);
    auto& xv = ob.val(v);
    for (int r = 0; r < R; r++)
      std::memcpy(&ov[size_t(r) * C + off], &xv[size_t(r) * W], size_t(W) * sizeof(double));
    off += W;
  }
  auto parts = std::make_shared<std::vector<Var>>(xs);
  ob.node("concat_cols", o, [parts, o, R, C](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    int off = 0;
    for (Var v : *parts) {
      int W = t.cols(v);
      if (bb.tracked(v)) {
        auto& xg = bb.grad(v);
        for (int r = 0; r < R; r++)
          for (int c = 0; c < W; c++) xg[size_t(r) * W + c] += g[size_t(r) * C + off + c];
      }
      off += W;
    }
  });
  return o;
}

// --- Matmul / affine ----------------------------------------------------------

inline Var matmul(Tape& tp, Var A, Var B, bool ta = false, bool tb = false) {
  OpBuilder ob{tp};
  int m = ta ? tp.cols(A) : tp.rows(A);
  int k = ta ? tp.rows(A) : tp.cols(A);
  int kb = tb ? tp.cols(B) : tp.rows(B);
  int n = tb ? tp.rows(B) : tp.cols(B);
  check(k == kb, ErrorKind::Numeric, "matmul inner dim mismatch");
  Var o = ob.out(m, n);
  gemm(ta, tb, m, n, k, ob.val(A).data(), ob.val(B).data(), ob.arr(o).val.data(), 0.0);
  ob.node("matmul", o, [A, B, o, ta, tb, m, n, k](Tape& t) {
    OpBuilder bb{t};
    const double* G = bb.grad(o).data();
    if (bb.tracked(A)) {
      double* dA = bb.grad(A).data();
      if (!ta) gemm(false, !tb, m, k, n, G, bb.val(B).data(), dA, 1.0);
      else if (tb) gemm(true, true, k, m, n, bb.val(B).data(), G, dA, 1.0);
      else gemm(false, true, k, m, n, bb.val(B).data(), G, dA, 1.0);
    }
    if (bb.tracked(B)) {
      double* dB = bb.grad(B).data();
      if (!tb) gemm(!ta, false, k, n, m, bb.val(A).data(), G, dB, 1.0);
      else if (ta) gemm(true, true, n, k, m, G, bb.val(A).data(), dB, 1.0);
      else gemm(true, false, n, k, m, G, bb.val(A).data(), dB, 1.0);
    }
  });
  return o;
}

// y = act(X * W^T + b). W is [out x in]; pass bias = -1 for none.
inline Var affine(Tape& tp, Var X, Var W, Var bias, Act act = Act::None) {
  OpBuilder ob{tp};
  int m = tp.rows(X), in = tp.cols(X), out = tp.rows(W);
  check(tp.cols(W) == in, ErrorKind::Numeric, "affine weight shape mismatch");
  Var o = ob.out(m, out);
  auto& ov = ob.arr(o).val;
  gemm(false, true, m, out, in, ob.val(X).data(), ob.val(W).data(), ov.data(), 0.0);
  if (bias >= 0) {
    check(tp.size(bias) == size_t(out), ErrorKind::Numeric, "affine bias shape mismatch");
    auto& bv = ob.val(bias);
    for (int r = 0; r < m; r++)
      for (int c = 0; c < out; c++) ov[size_t(r) * out + c] += bv[size_t(c)];
  }
  if (act != Act::None)
    for (auto& v : ov) v = act_forward(act, v);
  ob.node("affine", o, [X, W, bias, o, act, m, in, out](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    auto& y = bb.val(o);
    // gradient w.r.t. the pre-activation
    std::vector<double> gp(g.size());
    for (size_t i = 0; i < g.size(); i++) gp[i] = g[i] * act_deriv_from_out(act, y[i]);
    if (bb.tracked(X)) gemm(false, false, m, in, out, gp.data(), bb.val(W).data(), bb.grad(X).data(), 1.0);
    if (bb.tracked(W)) gemm(true, false, out, in, m, gp.data(), bb.val(X).data(), bb.grad(W).data(), 1.0);
    if (bias >= 0 && bb.tracked(bias)) {
      auto& gb = bb.grad(bias);
      for (int r = 0; r < m; r++)
        for (int c = 0; c < out; c++) gb[size_t(c)] += gp[size_t(r) * out + c];
    }
  });
  return o;
}

// y = act(X + b) with b broadcast across rows.
inline Var bias_act(Tape& tp, Var X, Var bias, Act act) {
  OpBuilder ob{tp};
  int m = tp.rows(X), n = tp.cols(X);
  check(tp.size(bias) == size_t(n), ErrorKind::Numeric, "bias_act shape mismatch");
  Var o = ob.out(m, n);
  auto& xv = ob.val(X);
  auto& bv = ob.val(bias);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < m; r++)
    for (int c = 0; c < n; c++)
      ov[size_t(r) * n + c] = act_forward(act, xv[size_t(r) * n + c] + bv[size_t(c)]);
  ob.node("bias_act", o, [X, bias, o, act, m, n](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    auto& y = bb.val(o);
    bool wx = bb.tracked(X), wb = bb.tracked(bias);
    if (!wx && !wb) return;
    for (int r = 0; r < m; r++)
      for (int c = 0; c < n; c++) {
        double gp = g[size_t(r) * n + c] * act_deriv_from_out(act, y[size_t(r) * n + c]);
        if (wx) bb.grad(X)[size_t(r) * n + c] += gp;
        if (wb) bb.grad(bias)[size_t(c)] += gp;
      }
  });
  return o;
}

// --- Row/column structure ------------------------------------------------------

// Softmax over each row.
inline Var softmax_rows(Tape& tp, Var x) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  Var o = ob.out(R, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < R; r++) {
    const double* xr = &xv[size_t(r) * C];
    double* orow = &ov[size_t(r) * C];
    double mx = xr[0];
    for (int c = 1; c < C; c++) mx = std::max(mx, xr[c]);
    double s = 0;
    for (int c = 0; c < C; c++) s += (orow[c] = std::exp(xr[c] - mx));
    for (int c = 0; c < C; c++) orow[c] /= s;
  }
  ob.node("softmax_rows", o, [x, o, R, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& y = bb.val(o);
    auto& xg = bb.grad(x);
    for (int r = 0; r < R; r++) {
      const double* gr = &g[size_t(r) * C];
      const double* yr = &y[size_t(r) * C];
      double dot = 0;
      for (int c = 0; c < C; c++) dot += gr[c] * yr[c];
      double* xr = &xg[size_t(r) * C];
      for (int c = 0; c < C; c++) xr[c] += yr[c] * (gr[c] - dot);
    }
  });
  return o;
}

// W[i][j] = A[i][j] / sum_l A[l][j]  (normalize each column).
inline Var normalize_cols(Tape& tp, Var x) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  Var o = ob.out(R, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  std::vector<double> colsum(size_t(C), 0.0);
  for (int r = 0; r < R; r++)
    for (int c = 0; c < C; c++) colsum[size_t(c)] += xv[size_t(r) * C + c];
  for (int r = 0; r < R; r++)
    for (int c = 0; c < C; c++) ov[size_t(r) * C + c] = xv[size_t(r) * C + c] / colsum[size_t(c)];
  auto cs = std::make_shared<std::vector<double>>(std::move(colsum));
  ob.node("normalize_cols", o, [x, o, R, C, cs](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& w = bb.val(o);
    auto& xg = bb.grad(x);
    std::vector<double> gw(size_t(C), 0.0);
    for (int r = 0; r < R; r++)
      for (int c = 0; c < C; c++) gw[size_t(c)] += g[size_t(r) * C + c] * w[size_t(r) * C + c];
    for (int r = 0; r < R; r++)
      for (int c = 0; c < C; c++)
        xg[size_t(r) * C + c] += (g[size_t(r) * C + c] - gw[size_t(c)]) / (*cs)[size_t(c)];
  });
  return o;
}

inline Var row_sum(Tape& tp, Var x) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  Var o = ob.out(R, 1);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < R; r++) {
    double s = 0;
    for (int c = 0; c < C; c++) s += xv[size_t(r) * C + c];
    ov[size_t(r)] = s;
  }
  ob.node("row_sum", o, [x, o, R, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int r = 0; r < R; r++)
      for (int c = 0; c < C; c++) xg[size_t(r) * C + c] += g[size_t(r)];
  });
  return o;
}

// Sums consecutive groups of `group` rows: [G*group x C] -> [G x C].
inline Var sum_groups(Tape& tp, Var x, int group) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  check(group >= 1 && R % group == 0, ErrorKind::Numeric, "sum_groups: rows not divisible");
  int G = R / group;
  Var o = ob.out(G, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int gidx = 0; gidx < G; gidx++)
    for (int p = 0; p < group; p++)
      for (int c = 0; c < C; c++)
        ov[size_t(gidx) * C + c] += xv[(size_t(gidx) * group + p) * C + c];
  ob.node("sum_groups", o, [x, o, G, group, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int gidx = 0; gidx < G; gidx++)
      for (int p = 0; p < group; p++)
        for (int c = 0; c < C; c++)
          xg[(size_t(gidx) * group + p) * C + c] += g[size_t(gidx) * C + c];
  });
  return o;
}

inline Var sum_all(Tape& tp, Var x) {
  OpBuilder ob{tp};
  Var o = ob.out(1, 1);
  double s = 0;
  for (double v : ob.val(x)) s += v;
  ob.arr(o).val[0] = s;
  ob.node("sum_all", o, [x, o](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    double g = bb.grad(o)[0];
    auto& xg = bb.grad(x);
    for (auto& v : xg) v += g;
  });
  return o;
}

inline Var mean_all(Tape& tp, Var x) {
  return scale(tp, sum_all(tp, x), 1.0 / double(tp.size(x)));
}

// y[r][i] = sum_{j<i} x[r][j]
inline Var cumsum_exclusive_rows(Tape& tp, Var x) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  Var o = ob.out(R, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < R; r++) {
    double acc = 0;
    for (int c = 0; c < C; c++) {
      ov[size_t(r) * C + c] = acc;
      acc += xv[size_t(r) * C + c];
    }
  }
  ob.node("cumsum_exclusive_rows", o, [x, o, R, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int r = 0; r < R; r++) {
      double acc = 0;
      for (int c = C - 1; c >= 0; c--) {
        acc += g[size_t(r) * C + c];
        // dL/dx_c collects grads of all outputs strictly after c
        xg[size_t(r) * C + c] += acc - g[size_t(r) * C + c];
      }
    }
  });
  return o;
}

// x[K x C] scaled per-row by v[K x 1].
inline Var mul_colvec(Tape& tp, Var x, Var v) {
  OpBuilder ob{tp};
  int R = tp.rows(x), C = tp.cols(x);
  check(tp.rows(v) == R && tp.cols(v) == 1, ErrorKind::Numeric, "mul_colvec shape mismatch");
  Var o = ob.out(R, C);
  auto& xv = ob.val(x);
  auto& vv = ob.val(v);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < R; r++)
    for (int c = 0; c < C; c++) ov[size_t(r) * C + c] = xv[size_t(r) * C + c] * vv[size_t(r)];
  ob.node("mul_colvec", o, [x, v, o, R, C](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    if (bb.tracked(x)) {
      auto& xg = bb.grad(x);
      auto& vv = bb.val(v);
      for (int r = 0; r < R; r++)
        for (int c = 0; c < C; c++) xg[size_t(r) * C + c] += g[size_t(r) * C + c] * vv[size_t(r)];
    }
    if (bb.tracked(v)) {
      auto& vg = bb.grad(v);
      auto& xv = bb.val(x);
      for (int r = 0; r < R; r++) {
        double s = 0;
        for (int c = 0; c < C; c++) s += g[size_t(r) * C + c] * xv[size_t(r) * C + c];
        vg[size_t(r)] += s;
      }
    }
  });
  return o;
}

// --- Index machinery -----------------------------------------------------------

using IndexVec = std::shared_ptr<const std::vector<int>>;

inline IndexVec make_index(std::vector<int> v) {
  return std::make_shared<const std::vector<int>>(std::move(v));
}

inline Var gather_rows(Tape& tp, Var x, IndexVec idx) {
  OpBuilder ob{tp};
  int C = tp.cols(x);
  int K = int(idx->size());
  Var o = ob.out(K, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int i = 0; i < K; i++)
    std::memcpy(&ov[size_t(i) * C], &xv[size_t((*idx)[size_t(i)]) * C], size_t(C) * sizeof(double));
  ob.node("gather_rows", o, [x, o, idx, K, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int i = 0; i < K; i++)
      for (int c = 0; c < C; c++) xg[size_t((*idx)[size_t(i)]) * C + c] += g[size_t(i) * C + c];
  });
  return o;
}

// y[i] = A[idxA[i]] + B[idxB[i]] (rows).
inline Var gather_add_rows(Tape& tp, Var A, IndexVec idxA, Var B, IndexVec idxB) {
  OpBuilder ob{tp};
  check(tp.cols(A) == tp.cols(B) && idxA->size() == idxB->size(), ErrorKind::Numeric,
        "gather_add_rows mismatch");
  int C = tp.cols(A);
  int K = int(idxA->size());
  Var o = ob.out(K, C);
  auto& av = ob.val(A);
  auto& bv = ob.val(B);
  auto& ov = ob.arr(o).val;
  for (int i = 0; i < K; i++) {
    const double* ra = &av[size_t((*idxA)[size_t(i)]) * C];
    const double* rb = &bv[size_t((*idxB)[size_t(i)]) * C];
    double* ro = &ov[size_t(i) * C];
    for (int c = 0; c < C; c++) ro[c] = ra[c] + rb[c];
  }
  ob.node("gather_add_rows", o, [A, B, o, idxA, idxB, K, C](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    if (bb.tracked(A)) {
      auto& ag = bb.grad(A);
      for (int i = 0; i < K; i++)
        for (int c = 0; c < C; c++) ag[size_t((*idxA)[size_t(i)]) * C + c] += g[size_t(i) * C + c];
    }
    if (bb.tracked(B)) {
      auto& bg = bb.grad(B);
      for (int i = 0; i < K; i++)
        for (int c = 0; c < C; c++) bg[size_t((*idxB)[size_t(i)]) * C + c] += g[size_t(i) * C + c];
    }
  });
  return o;
}

// Flat-index gather into a [K x 1] column.
inline Var gather_elems(Tape& tp, Var x, IndexVec idx) {
  OpBuilder ob{tp};
  int K = int(idx->size());
  Var o = ob.out(K, 1);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int i = 0; i < K; i++) ov[size_t(i)] = xv[size_t((*idx)[size_t(i)])];
  ob.node("gather_elems", o, [x, o, idx, K](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int i = 0; i < K; i++) xg[size_t((*idx)[size_t(i)])] += g[size_t(i)];
  });
  return o;
}

// y[idx[i]] += x[i] (rows), output has out_rows rows.
inline Var scatter_add_rows(Tape& tp, Var x, IndexVec idx, int out_rows) {
  OpBuilder ob{tp};
  int C = tp.cols(x);
  int K = tp.rows(x);
  check(int(idx->size()) == K, ErrorKind::Numeric, "scatter_add_rows index size mismatch");
  Var o = ob.out(out_rows, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int i = 0; i < K; i++) {
    double* ro = &ov[size_t((*idx)[size_t(i)]) * C];
    const double* rx = &xv[size_t(i) * C];
    for (int c = 0; c < C; c++) ro[c] += rx[c];
  }
  ob.node("scatter_add_rows", o, [x, o, idx, K, C](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int i = 0; i < K; i++)
      for (int c = 0; c < C; c++) xg[size_t(i) * C + c] += g[size_t((*idx)[size_t(i)]) * C + c];
  });
  return o;
}

// --- Positional encoding ---------------------------------------------------------
//
// [raw inputs (optional)] then per coordinate: sin(2^k pi u), cos(2^k pi u)
// for k = 0..L-1.

inline int posenc_dim(int coords, int L, bool include_input) {
  return (include_input ? coords : 0) + coords * 2 * L;
}

inline void posenc_fill(const double* in, int K, int C, int L, bool include_input, double* out) {
  int OC = posenc_dim(C, L, include_input);
  for (int r = 0; r < K; r++) {
    const double* x = &in[size_t(r) * C];
    double* y = &out[size_t(r) * OC];
    int o = 0;
    if (include_input)
      for (int c = 0; c < C; c++) y[o++] = x[c];
    for (int c = 0; c < C; c++) {
      // sin/cos(2^k pi u) by angle doubling from the k = 0 pair
      double s = std::sin(M_PI * x[c]);
      double co = std::cos(M_PI * x[c]);
      for (int k = 0; k < L; k++) {
        y[o++] = s;
        y[o++] = co;
        double s2 = 2.0 * s * co;
        co = 1.0 - 2.0 * s * s;
        s = s2;
      }
    }
  }
}

inline Var posenc(Tape& tp, Var x, int L, bool include_input) {
  OpBuilder ob{tp};
  int K = tp.rows(x), C = tp.cols(x);
  int OC = posenc_dim(C, L, include_input);
  Var o = ob.out(K, OC);
  posenc_fill(ob.val(x).data(), K, C, L, include_input, ob.arr(o).val.data());
  ob.node("posenc", o, [x, o, K, C, L, include_input, OC](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& y = bb.val(o);
    auto& xg = bb.grad(x);
    int base = include_input ? C : 0;
    for (int r = 0; r < K; r++) {
      const double* gr = &g[size_t(r) * OC];
      const double* yr = &y[size_t(r) * OC];
      double* xr = &xg[size_t(r) * C];
      if (include_input)
        for (int c = 0; c < C; c++) xr[c] += gr[c];
      for (int c = 0; c < C; c++) {
        double f = M_PI;
        int o2 = base + c * 2 * L;
        for (int k = 0; k < L; k++) {
          // d sin(f u)/du = f cos(f u); d cos(f u)/du = -f sin(f u)
          xr[c] += gr[o2] * f * yr[o2 + 1] - gr[o2 + 1] * f * yr[o2];
          o2 += 2;
          f *= 2.0;
        }
      }
    }
  });
  return o;
}

// y[:,c] = (x[:,c] - offset[c]) * scale[c]
inline Var normalize_points(Tape& tp, Var x, std::vector<double> scale3, std::vector<double> offset3) {
  OpBuilder ob{tp};
  int K = tp.rows(x), C = tp.cols(x);
  check(int(scale3.size()) == C && int(offset3.size()) == C, ErrorKind::Numeric,
        "normalize_points dims mismatch");
  Var o = ob.out(K, C);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  for (int r = 0; r < K; r++)
    for (int c = 0; c < C; c++)
      ov[size_t(r) * C + c] = (xv[size_t(r) * C + c] - offset3[size_t(c)]) * scale3[size_t(c)];
  auto sc = std::make_shared<std::vector<double>>(std::move(scale3));
  ob.node("normalize_points", o, [x, o, K, C, sc](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int r = 0; r < K; r++)
      for (int c = 0; c < C; c++) xg[size_t(r) * C + c] += g[size_t(r) * C + c] * (*sc)[size_t(c)];
  });
  return o;
}

// --- Trilinear gather -------------------------------------------------------------
//
// grid is [C x (nx*ny*nz)] channel-major with spatial index (ix*ny+iy)*nz+iz.
// pts are continuous lattice coordinates; queries outside [0, n-1]^3 yield
// `empty_value` in every channel with zero gradient. Differentiable w.r.t.
// both the grid and the points.

inline Var trilinear_gather(Tape& tp, Var grid, int nx, int ny, int nz, Var pts, double empty_value) {
  OpBuilder ob{tp};
  int C = tp.rows(grid);
  size_t nvox = size_t(nx) * ny * nz;
  check(tp.cols(grid) == int(nvox), ErrorKind::Numeric, "trilinear_gather grid dims mismatch");
  check(tp.cols(pts) == 3, ErrorKind::Numeric, "trilinear_gather pts must be K x 3");
  int K = tp.rows(pts);
  Var o = ob.out(K, C);
  auto& gv = ob.val(grid);
  auto& pv = ob.val(pts);
  auto& ov = ob.arr(o).val;

  auto corner = [&](double u, int n, int& i0, double& f) {
    i0 = int(std::floor(u));
    if (i0 > n - 2) i0 = n - 2;
    if (i0 < 0) i0 = 0;
    f = u - double(i0);
  };

  for (int p = 0; p < K; p++) {
    double gx = pv[size_t(p) * 3], gy = pv[size_t(p) * 3 + 1], gz = pv[size_t(p) * 3 + 2];
    bool inside = gx >= 0 && gx <= nx - 1 && gy >= 0 && gy <= ny - 1 && gz >= 0 && gz <= nz - 1;
    if (!inside) {
      for (int c = 0; c < C; c++) ov[size_t(p) * C + c] = empty_value;
      continue;
    }
    int ix, iy, iz;
    double fx, fy, fz;
    corner(gx, nx, ix, fx);
    corner(gy, ny, iy, fy);
    corner(gz, nz, iz, fz);
    size_t base = (size_t(ix) * ny + iy) * nz + iz;
    size_t dx = size_t(ny) * nz, dy = nz, dz = 1;
    double w000 = (1 - fx) * (1 - fy) * (1 - fz), w001 = (1 - fx) * (1 - fy) * fz;
    double w010 = (1 - fx) * fy * (1 - fz), w011 = (1 - fx) * fy * fz;
    double w100 = fx * (1 - fy) * (1 - fz), w101 = fx * (1 - fy) * fz;
    double w110 = fx * fy * (1 - fz), w111 = fx * fy * fz;
    for (int c = 0; c < C; c++) {
      const double* gch = &gv[size_t(c) * nvox];
      ov[size_t(p) * C + c] = w000 * gch[base] + w001 * gch[base + dz] + w010 * gch[base + dy] +
                              w011 * gch[base + dy + dz] + w100 * gch[base + dx] +
                              w101 * gch[base + dx + dz] + w110 * gch[base + dx + dy] +
                              w111 * gch[base + dx + dy + dz];
    }
  }

  ob.node("trilinear_gather", o, [grid, pts, o, nx, ny, nz, C, K, nvox](Tape& t) {
    OpBuilder bb{t};
    auto& g = bb.grad(o);
    auto& pv = bb.val(pts);
    auto& gv = bb.val(grid);
    bool want_grid = bb.tracked(grid), want_pts = bb.tracked(pts);
    if (!want_grid && !want_pts) return;
    double* gg = want_grid ? bb.grad(grid).data() : nullptr;
    double* pg = want_pts ? bb.grad(pts).data() : nullptr;
    auto corner = [&](double u, int n, int& i0, double& f) {
      i0 = int(std::floor(u));
      if (i0 > n - 2) i0 = n - 2;
      if (i0 < 0) i0 = 0;
      f = u - double(i0);
    };
    for (int p = 0; p < K; p++) {
      double gx = pv[size_t(p) * 3], gy = pv[size_t(p) * 3 + 1], gz = pv[size_t(p) * 3 + 2];
      bool inside = gx >= 0 && gx <= nx - 1 && gy >= 0 && gy <= ny - 1 && gz >= 0 && gz <= nz - 1;
      if (!inside) continue;
      int ix, iy, iz;
      double fx, fy, fz;
      corner(gx, nx, ix, fx);
      corner(gy, ny, iy, fy);
      corner(gz, nz, iz, fz);
      size_t base = (size_t(ix) * ny + iy) * nz + iz;
      size_t dxs = size_t(ny) * nz, dys = nz, dzs = 1;
      double w000 = (1 - fx) * (1 - fy) * (1 - fz), w001 = (1 - fx) * (1 - fy) * fz;
      double w010 = (1 - fx) * fy * (1 - fz), w011 = (1 - fx) * fy * fz;
      double w100 = fx * (1 - fy) * (1 - fz), w101 = fx * (1 - fy) * fz;
      double w110 = fx * fy * (1 - fz), w111 = fx * fy * fz;
      double ax = 0, ay = 0, az = 0;
      for (int c = 0; c < C; c++) {
        double go = g[size_t(p) * C + c];
        if (go == 0.0) continue;
        const double* gch = &gv[size_t(c) * nvox];
        if (want_grid) {
          double* gc = &gg[size_t(c) * nvox];
          gc[base] += go * w000;
          gc[base + dzs] += go * w001;
          gc[base + dys] += go * w010;
          gc[base + dys + dzs] += go * w011;
          gc[base + dxs] += go * w100;
          gc[base + dxs + dzs] += go * w101;
          gc[base + dxs + dys] += go * w110;
          gc[base + dxs + dys + dzs] += go * w111;
        }
        if (want_pts) {
          double v000 = gch[base], v001 = gch[base + dzs], v010 = gch[base + dys],
                 v011 = gch[base + dys + dzs], v100 = gch[base + dxs], v101 = gch[base + dxs + dzs],
                 v110 = gch[base + dxs + dys], v111 = gch[base + dxs + dys + dzs];
          ax += go * ((v100 - v000) * (1 - fy) * (1 - fz) + (v110 - v010) * fy * (1 - fz) +
                      (v101 - v001) * (1 - fy) * fz + (v111 - v011) * fy * fz);
          ay += go * ((v010 - v000) * (1 - fx) * (1 - fz) + (v110 - v100) * fx * (1 - fz) +
                      (v011 - v001) * (1 - fx) * fz + (v111 - v101) * fx * fz);
          az += go * ((v001 - v000) * (1 - fx) * (1 - fy) + (v101 - v100) * fx * (1 - fy) +
                      (v011 - v010) * (1 - fx) * fy + (v111 - v110) * fx * fy);
        }
      }
      if (want_pts) {
        pg[size_t(p) * 3] += ax;
        pg[size_t(p) * 3 + 1] += ay;
        pg[size_t(p) * 3 + 2] += az;
      }
    }
  });
  return o;
}

// --- Conv3d via im2col --------------------------------------------------------------
//
// Volumes are stored voxel-major, [nvox x C], voxel index (ix*ny+iy)*nz+iz.
// Fixed 3x3x3 kernel, padding 1. Column layout matches W rows of
// [Cout x Cin*27]: column index = ci*27 + tap.

struct ConvDims {
  int nx, ny, nz;
  int out(int n, int stride) const { return (n - 1) / stride + 1; }
};

inline Var im2col3(Tape& tp, Var x, ConvDims d, int stride) {
  OpBuilder ob{tp};
  int Cin = tp.cols(x);
  check(tp.rows(x) == d.nx * d.ny * d.nz, ErrorKind::Numeric, "im2col3 dims mismatch");
  int ox = d.out(d.nx, stride), oy = d.out(d.ny, stride), oz = d.out(d.nz, stride);
  int ovox = ox * oy * oz;
  // Tap offsets -> row index in x, or -1 for padding.
  auto idx = std::make_shared<std::vector<int>>(size_t(ovox) * 27, -1);
  {
    int i = 0;
    for (int a = 0; a < ox; a++)
      for (int b = 0; b < oy; b++)
        for (int c = 0; c < oz; c++, i++) {
          int bx = a * stride - 1, by = b * stride - 1, bz = c * stride - 1;
          int k = 0;
          for (int ka = 0; ka < 3; ka++)
            for (int kb = 0; kb < 3; kb++)
              for (int kc = 0; kc < 3; kc++, k++) {
                int px = bx + ka, py = by + kb, pz = bz + kc;
                if (px < 0 || px >= d.nx || py < 0 || py >= d.ny || pz < 0 || pz >= d.nz) continue;
                (*idx)[size_t(i) * 27 + k] = (px * d.ny + py) * d.nz + pz;
              }
        }
  }
  Var o = ob.out(ovox, Cin * 27);
  auto& xv = ob.val(x);
  auto& ov = ob.arr(o).val;
  int OC = Cin * 27;
  for (int i = 0; i < ovox; i++)
    for (int k = 0; k < 27; k++) {
      int src = (*idx)[size_t(i) * 27 + k];
      if (src < 0) continue;
      for (int ci = 0; ci < Cin; ci++)
        ov[size_t(i) * OC + size_t(ci) * 27 + k] = xv[size_t(src) * Cin + ci];
    }
  ob.node("im2col3", o, [x, o, idx, ovox, Cin, OC](Tape& t) {
    OpBuilder bb{t};
    if (!bb.tracked(x)) return;
    auto& g = bb.grad(o);
    auto& xg = bb.grad(x);
    for (int i = 0; i < ovox; i++)
      for (int k = 0; k < 27; k++) {
        int src = (*idx)[size_t(i) * 27 + k];
        if (src < 0) continue;
        for (int ci = 0; ci < Cin; ci++)
          xg[size_t(src) * Cin + ci] += g[size_t(i) * OC + size_t(ci) * 27 + k];
      }
  });
  return o;
}

// One stride-s conv layer with bias and activation; x is [nvox x Cin].
inline Var conv3d(Tape& tp, Var x, ConvDims d, int stride, Var w, Var bias, Act act) {
  Var col = im2col3(tp, x, d, stride);
  return affine(tp, col, w, bias, act);
}

}  // namespace dynavol::ad
