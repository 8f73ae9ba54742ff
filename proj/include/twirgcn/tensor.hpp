#pragma once

// Dense row-major tensors and a reverse-mode tape.
//
// Parameters live in `Tensor` objects owned by the caller. A `Tape` records one
// forward computation; `Tape::param` snapshots a parameter into the tape and
// `Tape::backward` accumulates exact analytic gradients back into
// `Tensor::grad`. All reductions accumulate in index order, so a fixed input
// yields bit-identical output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twirgcn/error.hpp"

namespace twirgcn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values when requires_grad
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    TWIRGCN_REQUIRE(values.size() == numel(shape),
                    "tensor values do not match shape " + shape_str(shape));
    if (requires_grad) grad.assign(values.size(), 0.0);
  }

  static Tensor zeros(Shape s, bool rg = false) {
    std::vector<double> v(numel(s), 0.0);
    return Tensor(std::move(s), std::move(v), rg);
  }

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg)
      grad.assign(values.size(), 0.0);
    else
      grad.clear();
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const std::vector<double>& value() const;
  const Shape& shape() const;
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* param = nullptr;
    std::function<void(Tape&)> backward;
  };

  // A tape built with `record_grads = false` treats parameters as constants,
  // so concurrent forward passes never touch shared gradient buffers.
  explicit Tape(bool record_grads = true) : record_grads_(record_grads) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<double> value) {
    TWIRGCN_REQUIRE(value.size() == numel(shape), "constant does not match shape");
    return push(std::move(shape), std::move(value), false);
  }
  Var constant(const Tensor& t) { return constant(t.shape, t.values); }
  Var scalar(double v) { return constant({}, {v}); }

  // Leaf tied to a parameter; gradients flow into `t.grad` on backward().
  Var param(Tensor& t) {
    const bool rg = record_grads_ && t.requires_grad;
    Var v = push(t.shape, t.values, rg);
    if (rg) {
      if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
      nodes_[v.id()].param = &t;
    }
    return v;
  }

  // Appends a node; `backward` receives the tape and reads node(id).grad.
  Var push(Shape shape, std::vector<double> value, bool needs_grad,
           std::function<void(Tape&)> backward = {}) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(Var v) { return nodes_[v.id()]; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Gradient buffer of `v`, allocated on first use.
  std::vector<double>& grad(Var v) { return grad(v.id()); }
  std::vector<double>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar output, seeded with `seed`. Each record is
  // visited exactly once, in reverse recording order.
  void backward(Var out, double seed = 1.0) {
    TWIRGCN_REQUIRE(out.tape() == this, "backward on a foreign tape");
    TWIRGCN_REQUIRE(nodes_[out.id()].value.size() == 1, "backward needs a scalar output");
    if (!nodes_[out.id()].needs_grad) return;
    grad(out)[0] += seed;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this);
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  bool record_grads_ = true;
};

inline const std::vector<double>& Var::value() const { return tape_->node(id_).value; }
inline const Shape& Var::shape() const { return tape_->node(id_).shape; }
inline double Var::item() const {
  TWIRGCN_REQUIRE(value().size() == 1, "item() on a non-scalar");
  return value()[0];
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  TWIRGCN_REQUIRE(a.tape() != nullptr && a.tape() == b.tape(), "operands on different tapes");
  return *a.tape();
}

inline void require_same_shape(Var a, Var b, const char* op) {
  TWIRGCN_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                              shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
}

inline std::size_t rows_of(const Shape& s) {
  TWIRGCN_REQUIRE(s.size() == 2, "expected a matrix, got " + shape_str(s));
  return s[0];
}

inline std::size_t cols_of(const Shape& s) {
  TWIRGCN_REQUIRE(s.size() == 2, "expected a matrix, got " + shape_str(s));
  return s[1];
}

inline double clamp_unit(double c) { return std::clamp(c, -1.0, 1.0); }

inline double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Accumulates d cos(a,b) / d a and d cos(a,b) / d b scaled by g.
inline void cosine_backward(std::span<const double> a, std::span<const double> b,
                            double na, double nb, double c, double g, double* ga,
                            double* gb) {
  if (na == 0.0 || nb == 0.0) return;
  const double inv = 1.0 / (na * nb);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (ga) ga[k] += g * (b[k] * inv - c * a[k] / (na * na));
    if (gb) gb[k] += g * (a[k] * inv - c * b[k] / (nb * nb));
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(a.shape(), std::move(out), ng);
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    for (std::size_t id : {ia, ib}) {
      if (!tp.node(id).needs_grad) continue;
      auto& ga = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  };
  return r;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(a.shape(), std::move(out), ng);
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return r;
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(a.shape(), std::move(out), ng);
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    const auto& va = tp.node(ia).value;
    const auto& vb = tp.node(ib).value;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  };
  return r;
}

// alpha * a + beta
inline Var affine(Var a, double alpha, double beta = 0.0) {
  Tape& t = *a.tape();
  std::vector<double> out(a.value());
  for (double& v : out) v = alpha * v + beta;
  Var r = t.push(a.shape(), std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir, alpha](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
  };
  return r;
}

inline Var scale(Var a, double s) { return affine(a, s, 0.0); }

// a * s for a scalar-valued Var s.
inline Var scale_by(Var a, Var s) {
  Tape& t = detail::same_tape(a, s);
  TWIRGCN_REQUIRE(s.value().size() == 1, "scale_by: factor must be scalar");
  const double sv = s.value()[0];
  std::vector<double> out(a.value());
  for (double& v : out) v *= sv;
  Var r = t.push(a.shape(), std::move(out), t.needs_grad(a) || t.needs_grad(s));
  const std::size_t ia = a.id(), is = s.id(), ir = r.id();
  t.node(ir).backward = [ia, is, ir](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    const double sv = tp.node(is).value[0];
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (tp.node(is).needs_grad) {
      const auto& va = tp.node(ia).value;
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
      tp.grad(is)[0] += acc;
    }
  };
  return r;
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.value());
  for (double& v : out) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  Var r = t.push(a.shape(), std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    const auto& s = tp.node(ir).value;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
  };
  return r;
}

inline Var relu(Var a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.value());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Var r = t.push(a.shape(), std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    const auto& x = tp.node(ia).value;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  };
  return r;
}

// ---- shape ----------------------------------------------------------------

inline Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape();
  TWIRGCN_REQUIRE(numel(shape) == a.value().size(), "reshape: element count mismatch");
  Var r = t.push(std::move(shape), a.value(), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return r;
}

// Concatenation of vectors (axis 0), matrices by rows (axis 0) or by columns
// (axis 1).
inline Var concat(const std::vector<Var>& parts, std::size_t axis = 0) {
  TWIRGCN_REQUIRE(!parts.empty(), "concat: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t rank = parts.front().shape().size();
  TWIRGCN_REQUIRE(rank == 1 || rank == 2, "concat: rank must be 1 or 2");
  TWIRGCN_REQUIRE(axis < rank, "concat: axis out of range");
  bool ng = false;
  for (Var p : parts) {
    TWIRGCN_REQUIRE(p.tape() == &t && p.shape().size() == rank, "concat: incompatible operands");
    ng = ng || t.needs_grad(p);
  }
  std::vector<std::size_t> ids;
  for (Var p : parts) ids.push_back(p.id());

  if (rank == 1 || axis == 0) {
    Shape shape = parts.front().shape();
    shape[0] = 0;
    std::vector<double> out;
    for (Var p : parts) {
      if (rank == 2)
        TWIRGCN_REQUIRE(p.shape()[1] == parts.front().shape()[1], "concat: column mismatch");
      shape[0] += p.shape()[0];
      out.insert(out.end(), p.value().begin(), p.value().end());
    }
    Var r = t.push(std::move(shape), std::move(out), ng);
    const std::size_t ir = r.id();
    t.node(ir).backward = [ids, ir](Tape& tp) {
      const auto& g = tp.node(ir).grad;
      std::size_t off = 0;
      for (std::size_t id : ids) {
        const std::size_t n = tp.node(id).value.size();
        if (tp.node(id).needs_grad) {
          auto& gi = tp.grad(id);
          for (std::size_t k = 0; k < n; ++k) gi[k] += g[off + k];
        }
        off += n;
      }
    };
    return r;
  }

  const std::size_t rows = parts.front().shape()[0];
  std::size_t cols = 0;
  for (Var p : parts) {
    TWIRGCN_REQUIRE(p.shape()[0] == rows, "concat: row mismatch");
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t coff = 0;
  for (Var p : parts) {
    const std::size_t pc = p.shape()[1];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * cols + coff + j] = p.value()[i * pc + j];
    coff += pc;
  }
  Var r = t.push({rows, cols}, std::move(out), ng);
  const std::size_t ir = r.id();
  t.node(ir).backward = [ids, ir, rows, cols](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    std::size_t coff = 0;
    for (std::size_t id : ids) {
      const std::size_t pc = tp.node(id).shape[1];
      if (tp.node(id).needs_grad) {
        auto& gi = tp.grad(id);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc; ++j) gi[i * pc + j] += g[i * cols + coff + j];
      }
      coff += pc;
    }
  };
  return r;
}

// Rows `idx` of a matrix (or elements of a vector).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  TWIRGCN_REQUIRE(s.size() == 1 || s.size() == 2, "gather_rows: rank must be 1 or 2");
  const std::size_t width = s.size() == 2 ? s[1] : 1;
  std::vector<double> out(idx.size() * width);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    TWIRGCN_REQUIRE(idx[k] < s[0], "gather_rows: index out of range");
    std::copy_n(a.value().begin() + idx[k] * width, width, out.begin() + k * width);
  }
  Shape os = s.size() == 2 ? Shape{idx.size(), width} : Shape{idx.size()};
  Var r = t.push(std::move(os), std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir, idx = std::move(idx), width](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    auto& ga = tp.grad(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) ga[idx[k] * width + j] += g[k * width + j];
  };
  return r;
}

// out[idx[k]] += a[k] for an (n x w) input; result has `out_rows` rows.
inline Var scatter_add_rows(Var a, std::vector<std::size_t> idx, std::size_t out_rows) {
  Tape& t = *a.tape();
  const std::size_t n = detail::rows_of(a.shape());
  const std::size_t w = a.shape()[1];
  TWIRGCN_REQUIRE(idx.size() == n, "scatter_add_rows: index count mismatch");
  std::vector<double> out(out_rows * w, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    TWIRGCN_REQUIRE(idx[k] < out_rows, "scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < w; ++j) out[idx[k] * w + j] += a.value()[k * w + j];
  }
  Var r = t.push({out_rows, w}, std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir, idx = std::move(idx), w](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    auto& ga = tp.grad(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < w; ++j) ga[k * w + j] += g[idx[k] * w + j];
  };
  return r;
}

// Row i of `a` multiplied by s[i].
inline Var scale_rows(Var a, Var s) {
  Tape& t = detail::same_tape(a, s);
  const std::size_t n = detail::rows_of(a.shape());
  const std::size_t w = a.shape()[1];
  TWIRGCN_REQUIRE(s.shape().size() == 1 && s.shape()[0] == n, "scale_rows: factor shape mismatch");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] *= s.value()[i];
  Var r = t.push(a.shape(), std::move(out), t.needs_grad(a) || t.needs_grad(s));
  const std::size_t ia = a.id(), is = s.id(), ir = r.id();
  t.node(ir).backward = [ia, is, ir, n, w](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    if (tp.node(ia).needs_grad) {
      const auto& sv = tp.node(is).value;
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * w + j] += g[i * w + j] * sv[i];
    }
    if (tp.node(is).needs_grad) {
      const auto& va = tp.node(ia).value;
      auto& gs = tp.grad(is);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w; ++j) acc += g[i * w + j] * va[i * w + j];
        gs[i] += acc;
      }
    }
  };
  return r;
}

// ---- linear algebra ---------------------------------------------------------

// (m x k)(k x n) -> (m x n), or (m x k)(k) -> (m).
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t m = detail::rows_of(a.shape());
  const std::size_t k = a.shape()[1];
  const bool vec = b.shape().size() == 1;
  TWIRGCN_REQUIRE(vec || b.shape().size() == 2, "matmul: rhs rank must be 1 or 2");
  TWIRGCN_REQUIRE(b.shape()[0] == k, "matmul: inner dimension mismatch " + shape_str(a.shape()) +
                                         " x " + shape_str(b.shape()));
  const std::size_t n = vec ? 1 : b.shape()[1];
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  Shape os = vec ? Shape{m} : Shape{m, n};
  Var r = t.push(std::move(os), std::move(out), t.needs_grad(a) || t.needs_grad(b));
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir, m, k, n](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    const auto& A = tp.node(ia).value;
    const auto& B = tp.node(ib).value;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  };
  return r;
}

// a (m x k) times b^T for b (n x k) -> (m x n).
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t m = detail::rows_of(a.shape());
  const std::size_t k = a.shape()[1];
  const std::size_t n = detail::rows_of(b.shape());
  TWIRGCN_REQUIRE(b.shape()[1] == k, "matmul_nt: inner dimension mismatch");
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * n + j] = acc;
    }
  Var r = t.push({m, n}, std::move(out), t.needs_grad(a) || t.needs_grad(b));
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir, m, k, n](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    const auto& A = tp.node(ia).value;
    const auto& B = tp.node(ib).value;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * B[j * k + p];
        }
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * A[i * k + p];
        }
    }
  };
  return r;
}

// ---- reductions -------------------------------------------------------------

inline Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  Var r = t.push({}, {s}, t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const double g = tp.node(ir).grad[0];
    for (double& x : tp.grad(ia)) x += g;
  };
  return r;
}

// Mean of a vector (axis 0 -> scalar) or of a matrix over rows (axis 0 -> one
// row) or columns (axis 1 -> one column).
inline Var mean(Var a, std::size_t axis) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() == 1) {
    TWIRGCN_REQUIRE(axis == 0 && s[0] > 0, "mean: bad axis or empty vector");
    Var total = sum(a);
    return scale(total, 1.0 / static_cast<double>(s[0]));
  }
  const std::size_t n = detail::rows_of(s), w = s[1];
  TWIRGCN_REQUIRE(axis <= 1, "mean: axis out of range");
  const auto& x = a.value();
  std::vector<double> out;
  if (axis == 0) {
    TWIRGCN_REQUIRE(n > 0, "mean: empty axis");
    out.assign(w, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[j] += x[i * w + j];
    for (double& v : out) v /= static_cast<double>(n);
  } else {
    TWIRGCN_REQUIRE(w > 0, "mean: empty axis");
    out.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) out[i] += x[i * w + j];
      out[i] /= static_cast<double>(w);
    }
  }
  Var r = t.push({axis == 0 ? w : n}, std::move(out), t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir, n, w, axis](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(ir).grad;
    auto& ga = tp.grad(ia);
    const double inv = 1.0 / static_cast<double>(axis == 0 ? n : w);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * w + j] += (axis == 0 ? g[j] : g[i]) * inv;
  };
  return r;
}

// Row mean accumulated in ascending `keys` order, so any permutation of rows
// (with their keys) produces a bit-identical result.
inline Var pooled_mean(Var a, std::span<const std::size_t> keys) {
  const std::size_t n = detail::rows_of(a.shape());
  TWIRGCN_REQUIRE(keys.size() == n, "pooled_mean: key count mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return keys[x] < keys[y]; });
  return mean(gather_rows(a, std::move(order)), 0);
}

inline Var dot(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "dot");
  const double d = detail::dot(a.value(), b.value());
  Var r = t.push({}, {d}, t.needs_grad(a) || t.needs_grad(b));
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir](Tape& tp) {
    const double g = tp.node(ir).grad[0];
    const auto& va = tp.node(ia).value;
    const auto& vb = tp.node(ib).value;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g * vb[i];
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < va.size(); ++i) gb[i] += g * va[i];
    }
  };
  return r;
}

inline Var l2_norm(Var a) {
  Tape& t = *a.tape();
  const double n = detail::norm(a.value());
  Var r = t.push({}, {n}, t.needs_grad(a));
  const std::size_t ia = a.id(), ir = r.id();
  t.node(ir).backward = [ia, ir](Tape& tp) {
    if (!tp.node(ia).needs_grad) return;
    const double n = tp.node(ir).value[0];
    if (n == 0.0) return;
    const double g = tp.node(ir).grad[0];
    const auto& x = tp.node(ia).value;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * x[i] / n;
  };
  return r;
}

// Cosine of two equal-length vectors. A zero-norm operand yields 0 with zero
// gradient. The value is clamped to [-1, 1] against rounding.
inline Var cosine_similarity(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "cosine_similarity");
  const double na = detail::norm(a.value()), nb = detail::norm(b.value());
  const double c =
      (na == 0.0 || nb == 0.0) ? 0.0 : detail::clamp_unit(detail::dot(a.value(), b.value()) / (na * nb));
  Var r = t.push({}, {c}, t.needs_grad(a) || t.needs_grad(b));
  const std::size_t ia = a.id(), ib = b.id(), ir = r.id();
  t.node(ir).backward = [ia, ib, ir, na, nb, c](Tape& tp) {
    const double g = tp.node(ir).grad[0];
    double* ga = tp.node(ia).needs_grad ? tp.grad(ia).data() : nullptr;
    double* gb = tp.node(ib).needs_grad ? tp.grad(ib).data() : nullptr;
    detail::cosine_backward(tp.node(ia).value, tp.node(ib).value, na, nb, c, g, ga, gb);
  };
  return r;
}

// Cosine of every row of m (n x d) with v (d) -> (n).
inline Var row_cosine(Var m, Var v) {
  Tape& t = detail::same_tape(m, v);
  const std::size_t n = detail::rows_of(m.shape()), d = m.shape()[1];
  TWIRGCN_REQUIRE(v.shape() == Shape{d}, "row_cosine: vector length mismatch");
  const auto& M = m.value();
  const std::span<const double> V(v.value());
  const double nv = detail::norm(V);
  std::vector<double> out(n), norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> ri(M.data() + i * d, d);
    norms[i] = detail::norm(ri);
    out[i] = (norms[i] == 0.0 || nv == 0.0) ? 0.0
                                            : detail::clamp_unit(detail::dot(ri, V) / (norms[i] * nv));
  }
  Var r = t.push({n}, std::move(out), t.needs_grad(m) || t.needs_grad(v));
  const std::size_t im = m.id(), iv = v.id(), ir = r.id();
  t.node(ir).backward = [im, iv, ir, n, d, nv, norms = std::move(norms)](Tape& tp) {
    const auto& g = tp.node(ir).grad;
    const auto& c = tp.node(ir).value;
    const auto& M = tp.node(im).value;
    const std::span<const double> V(tp.node(iv).value);
    double* gm = tp.node(im).needs_grad ? tp.grad(im).data() : nullptr;
    double* gv = tp.node(iv).needs_grad ? tp.grad(iv).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      if (g[i] == 0.0) continue;
      detail::cosine_backward({M.data() + i * d, d}, V, norms[i], nv, c[i], g[i],
                              gm ? gm + i * d : nullptr, gv);
    }
  };
  return r;
}

// -log of the softmax mass on `targets`: logsumexp(all) - logsumexp(targets).
inline Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
  Tape& t = *logits.tape();
  TWIRGCN_REQUIRE(logits.shape().size() == 1, "softmax_cross_entropy: logits must be a vector");
  const auto& z = logits.value();
  const std::size_t n = z.size();
  TWIRGCN_REQUIRE(n > 0, "softmax_cross_entropy: no logits");
  TWIRGCN_REQUIRE(!targets.empty(), "softmax_cross_entropy: empty target set");
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (std::size_t k : targets) TWIRGCN_REQUIRE(k < n, "softmax_cross_entropy: target out of range");

  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (p[i] = std::exp(z[i] - zmax));
  double gold = 0.0;
  for (std::size_t k : targets) gold += p[k];
  for (double& x : p) x /= total;
  const double loss = std::log(total) - std::log(gold);

  Var r = t.push({}, {loss}, t.needs_grad(logits));
  const std::size_t il = logits.id(), ir = r.id();
  t.node(ir).backward = [il, ir, p = std::move(p), targets = std::move(targets)](Tape& tp) {
    if (!tp.node(il).needs_grad) return;
    const double g = tp.node(ir).grad[0];
    double gold_mass = 0.0;
    for (std::size_t k : targets) gold_mass += p[k];
    auto& gl = tp.grad(il);
    for (std::size_t i = 0; i < p.size(); ++i) gl[i] += g * p[i];
    for (std::size_t k : targets) gl[k] -= g * p[k] / gold_mass;
  };
  return r;
}

// Mean single-target cross-entropy over the rows of a (b x n) logit matrix.
inline Var softmax_cross_entropy_rows(Var logits, std::vector<std::size_t> targets) {
  Tape& t = *logits.tape();
  const std::size_t b = detail::rows_of(logits.shape()), n = logits.shape()[1];
  TWIRGCN_REQUIRE(targets.size() == b && b > 0 && n > 0,
                  "softmax_cross_entropy_rows: target count mismatch");
  const auto& z = logits.value();
  std::vector<double> p(b * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    TWIRGCN_REQUIRE(targets[i] < n, "softmax_cross_entropy_rows: target out of range");
    const double* zi = z.data() + i * n;
    const double zmax = *std::max_element(zi, zi + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (p[i * n + j] = std::exp(zi[j] - zmax));
    loss += std::log(total) - (zi[targets[i]] - zmax);
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= total;
  }
  loss /= static_cast<double>(b);
  Var r = t.push({}, {loss}, t.needs_grad(logits));
  const std::size_t il = logits.id(), ir = r.id();
  t.node(ir).backward = [il, ir, b, n, p = std::move(p), targets = std::move(targets)](Tape& tp) {
    if (!tp.node(il).needs_grad) return;
    const double g = tp.node(ir).grad[0] / static_cast<double>(b);
    auto& gl = tp.grad(il);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += g * p[i * n + j];
      gl[i * n + targets[i]] -= g;
    }
  };
  return r;
}

}  // namespace twirgcn
