#include "rmfn/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace rmfn::ad {
namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using MapM = Eigen::Map<EMat>;
using VecC = Eigen::Map<const Eigen::VectorXd>;
using VecM = Eigen::Map<Eigen::VectorXd>;

inline void sincos_pair(double x, double* s, double* c) {
#if defined(__GLIBC__)
  ::sincos(x, s, c);
#else
  *s = std::sin(x);
  *c = std::cos(x);
#endif
}

// Broadcast layout of a binary elementwise op.
enum class Bc { kSame, kScalarRhs, kScalarLhs, kRowRhs };

Bc broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bc::kSame;
  if (b.size() == 1) return Bc::kScalarRhs;
  if (a.size() == 1) return Bc::kScalarLhs;
  if (a.rank() == 2 && b.size() == a.dim(1) && b.rank() <= 2) return Bc::kRowRhs;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

// Reduces an output-shaped gradient onto operand b under the given layout.
void reduce_onto_rhs(const Tensor& gout, Bc bc, int64_t cols, Tensor& gb) {
  switch (bc) {
    case Bc::kSame:
      for (int64_t i = 0; i < gout.size(); ++i) gb[i] += gout[i];
      break;
    case Bc::kScalarRhs: {
      double s = 0.0;
      for (int64_t i = 0; i < gout.size(); ++i) s += gout[i];
      gb[0] += s;
      break;
    }
    case Bc::kRowRhs: {
      const int64_t rows = gout.size() / cols;
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gb[c] += gout[r * cols + c];
      break;
    }
    case Bc::kScalarLhs:
      throw std::logic_error("reduce_onto_rhs: lhs layout");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape plumbing

Value Tape::emit(Tensor val, bool req, const char* op,
                 std::function<void(Tape&, const Tensor&)> backprop) {
  if (check_finite_ && !val.all_finite())
    throw std::runtime_error(std::string("non-finite value produced by primitive '") + op + "'");
  Node n;
  n.val = std::move(val);
  n.requires_grad = req;
  n.op = op;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Value v) const {
  if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument("value does not belong to this tape");
  return nodes_[static_cast<size_t>(v.id)];
}

Value Tape::input(Tensor v, bool requires_grad) {
  if (check_finite_ && !v.all_finite())
    throw std::runtime_error("non-finite value produced by primitive 'input'");
  Node n;
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(int32_t id) {
  if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.size() == 0 && nodes_[static_cast<size_t>(id)].val.size() > 0)
    g = Tensor::zeros(nodes_[static_cast<size_t>(id)].val.shape());
  return g;
}

const Tensor& Tape::value(Value v) const { return node(v).val; }

bool Tape::requires_grad(Value v) const { return node(v).requires_grad; }

Tensor Tape::grad(Value v) const {
  node(v);  // validates
  if (grads_.size() == nodes_.size()) {
    const Tensor& g = grads_[static_cast<size_t>(v.id)];
    if (g.size() > 0) return g;
  }
  return Tensor::zeros(node(v).val.shape());
}

bool Tape::has_grad(Value v) const {
  node(v);  // validates
  return grads_.size() == nodes_.size() &&
         grads_[static_cast<size_t>(v.id)].size() > 0;
}

void Tape::backward(Value root) {
  if (node(root).val.size() != 1)
    throw std::invalid_argument("backward requires a scalar root; reduce the loss "
                                "with sum or mean first");
  backward(root, Tensor({1}, {1.0}));
}

void Tape::backward(Value v, const Tensor& seed) {
  const Node& n = node(v);
  if (!n.val.same_shape(seed))
    throw std::invalid_argument("backward seed shape " + seed.shape_str() +
                                " does not match value shape " + n.val.shape_str());
  grads_.assign(nodes_.size(), Tensor());
  {
    Tensor& g = grad_buffer(v.id);
    for (int64_t i = 0; i < seed.size(); ++i) g[i] = seed[i];
  }
  for (int32_t i = v.id; i >= 0; --i) {
    Node& node_i = nodes_[static_cast<size_t>(i)];
    if (!node_i.requires_grad || !node_i.backprop) continue;
    const Tensor& g = grads_[static_cast<size_t>(i)];
    if (g.size() == 0) continue;
    node_i.backprop(*this, g);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

template <typename Fwd>
Tensor ew_forward(const Tensor& a, const Tensor& b, Bc bc, Fwd f) {
  switch (bc) {
    case Bc::kSame: {
      Tensor out(a.shape());
      for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
      return out;
    }
    case Bc::kScalarRhs: {
      Tensor out(a.shape());
      const double bv = b[0];
      for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], bv);
      return out;
    }
    case Bc::kScalarLhs: {
      Tensor out(b.shape());
      const double av = a[0];
      for (int64_t i = 0; i < b.size(); ++i) out[i] = f(av, b[i]);
      return out;
    }
    case Bc::kRowRhs: {
      Tensor out(a.shape());
      const int64_t cols = a.dim(1);
      for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % cols]);
      return out;
    }
  }
  throw std::logic_error("ew_forward");
}

}  // namespace

Value Tape::add(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const Bc bc = broadcast_kind(ta, tb, "add");
  const bool ra = requires_grad(a), rb = requires_grad(b);
  Tensor out = ew_forward(ta, tb, bc, [](double x, double y) { return x + y; });
  const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
  return emit(std::move(out), ra || rb, "add",
              [=](Tape& t, const Tensor& g) {
                if (ra) {
                  Tensor& ga = t.grad_buffer(a.id);
                  if (bc == Bc::kScalarLhs) {
                    double s = 0.0;
                    for (int64_t i = 0; i < g.size(); ++i) s += g[i];
                    ga[0] += s;
                  } else {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                }
                if (rb) {
                  Tensor& gb = t.grad_buffer(b.id);
                  if (bc == Bc::kScalarLhs) {
                    for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  } else {
                    reduce_onto_rhs(g, bc, cols, gb);
                  }
                }
              });
}

Value Tape::sub(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const Bc bc = broadcast_kind(ta, tb, "sub");
  const bool ra = requires_grad(a), rb = requires_grad(b);
  Tensor out = ew_forward(ta, tb, bc, [](double x, double y) { return x - y; });
  const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
  return emit(std::move(out), ra || rb, "sub",
              [=](Tape& t, const Tensor& g) {
                if (ra) {
                  Tensor& ga = t.grad_buffer(a.id);
                  if (bc == Bc::kScalarLhs) {
                    double s = 0.0;
                    for (int64_t i = 0; i < g.size(); ++i) s += g[i];
                    ga[0] += s;
                  } else {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                }
                if (rb) {
                  Tensor& gb = t.grad_buffer(b.id);
                  if (bc == Bc::kScalarLhs) {
                    for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  } else {
                    Tensor neg(g.shape());
                    for (int64_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
                    reduce_onto_rhs(neg, bc, cols, gb);
                  }
                }
              });
}

Value Tape::mul(Value a, Value b) {
  const Tensor ta = value(a);
  const Tensor tb = value(b);
  const Bc bc = broadcast_kind(ta, tb, "mul");
  const bool ra = requires_grad(a), rb = requires_grad(b);
  Tensor out = ew_forward(ta, tb, bc, [](double x, double y) { return x * y; });
  const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
  return emit(std::move(out), ra || rb, "mul",
              [=](Tape& t, const Tensor& g) {
                if (ra) {
                  Tensor& ga = t.grad_buffer(a.id);
                  if (bc == Bc::kScalarLhs) {
                    double s = 0.0;
                    for (int64_t i = 0; i < g.size(); ++i) s += g[i] * tb[i];
                    ga[0] += s;
                  } else if (bc == Bc::kScalarRhs) {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb[0];
                  } else if (bc == Bc::kRowRhs) {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb[i % cols];
                  } else {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb[i];
                  }
                }
                if (rb) {
                  Tensor& gb = t.grad_buffer(b.id);
                  if (bc == Bc::kScalarLhs) {
                    for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta[0];
                  } else {
                    Tensor prod(g.shape());
                    for (int64_t i = 0; i < g.size(); ++i) prod[i] = g[i] * ta[i];
                    reduce_onto_rhs(prod, bc, cols, gb);
                  }
                }
              });
}

Value Tape::div(Value a, Value b) {
  const Tensor ta = value(a);
  const Tensor tb = value(b);
  const Bc bc = broadcast_kind(ta, tb, "div");
  const bool ra = requires_grad(a), rb = requires_grad(b);
  Tensor out = ew_forward(ta, tb, bc, [](double x, double y) { return x / y; });
  const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
  const Tensor tout = out;
  return emit(std::move(out), ra || rb, "div",
              [=](Tape& t, const Tensor& g) {
                auto bval = [&](int64_t i) -> double {
                  switch (bc) {
                    case Bc::kScalarRhs: return tb[0];
                    case Bc::kRowRhs: return tb[i % cols];
                    default: return tb[i];
                  }
                };
                if (ra) {
                  Tensor& ga = t.grad_buffer(a.id);
                  if (bc == Bc::kScalarLhs) {
                    double s = 0.0;
                    for (int64_t i = 0; i < g.size(); ++i) s += g[i] / tb[i];
                    ga[0] += s;
                  } else {
                    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bval(i);
                  }
                }
                if (rb) {
                  Tensor& gb = t.grad_buffer(b.id);
                  if (bc == Bc::kScalarLhs) {
                    for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * tout[i] / tb[i];
                  } else {
                    Tensor prod(g.shape());
                    for (int64_t i = 0; i < g.size(); ++i) prod[i] = -g[i] * tout[i] / bval(i);
                    reduce_onto_rhs(prod, bc, cols, gb);
                  }
                }
              });
}

Value Tape::scale(Value a, double c) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * c;
  return emit(std::move(out), ra, "scale",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
              });
}

Value Tape::add_scalar(Value a, double c) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] + c;
  return emit(std::move(out), ra, "add_scalar",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
              });
}

// ---------------------------------------------------------------------------
// Matrix products

Value Tape::matmul(Value a, Value b, bool trans_a, bool trans_b) {
  const Tensor ta = value(a);
  const Tensor tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2)
    throw std::invalid_argument("matmul requires rank-2 operands, got " + ta.shape_str() +
                                " and " + tb.shape_str());
  const int64_t m = trans_a ? ta.dim(1) : ta.dim(0);
  const int64_t ka = trans_a ? ta.dim(0) : ta.dim(1);
  const int64_t kb = trans_b ? tb.dim(1) : tb.dim(0);
  const int64_t n = trans_b ? tb.dim(0) : tb.dim(1);
  if (ka != kb)
    throw std::invalid_argument("matmul inner dimension mismatch: " + ta.shape_str() +
                                (trans_a ? "^T" : "") + " x " + tb.shape_str() +
                                (trans_b ? "^T" : ""));
  const bool ra = requires_grad(a), rb = requires_grad(b);

  Tensor out({m, n});
  {
    MapC A(ta.data(), ta.dim(0), ta.dim(1));
    MapC B(tb.data(), tb.dim(0), tb.dim(1));
    MapM C(out.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }
  return emit(std::move(out), ra || rb, "matmul",
              [=](Tape& t, const Tensor& g) {
                MapC G(g.data(), m, n);
                MapC A(ta.data(), ta.dim(0), ta.dim(1));
                MapC B(tb.data(), tb.dim(0), tb.dim(1));
                if (ra) {
                  Tensor& ga = t.grad_buffer(a.id);
                  MapM GA(ga.data(), ta.dim(0), ta.dim(1));
                  if (!trans_a) {
                    if (!trans_b) GA.noalias() += G * B.transpose();
                    else GA.noalias() += G * B;
                  } else {
                    if (!trans_b) GA.noalias() += B * G.transpose();
                    else GA.noalias() += B.transpose() * G.transpose();
                  }
                }
                if (rb) {
                  Tensor& gb = t.grad_buffer(b.id);
                  MapM GB(gb.data(), tb.dim(0), tb.dim(1));
                  if (!trans_b) {
                    if (!trans_a) GB.noalias() += A.transpose() * G;
                    else GB.noalias() += A * G;
                  } else {
                    if (!trans_a) GB.noalias() += G.transpose() * A;
                    else GB.noalias() += G.transpose() * A.transpose();
                  }
                }
              });
}

Value Tape::linear(Value x, Value w, Value bias) {
  const Tensor tx = value(x);
  const Tensor tw = value(w);
  const Tensor tb = value(bias);
  if (tx.rank() != 2 || tw.rank() != 2)
    throw std::invalid_argument("linear requires rank-2 x and w");
  const int64_t n = tx.dim(0), d = tx.dim(1), m = tw.dim(0);
  if (tw.dim(1) != d || tb.size() != m)
    throw std::invalid_argument("linear shape mismatch: x " + tx.shape_str() + ", w " +
                                tw.shape_str() + ", bias " + tb.shape_str());
  const bool rx = requires_grad(x), rw = requires_grad(w), rb = requires_grad(bias);

  Tensor out({n, m});
  {
    MapC X(tx.data(), n, d);
    MapC W(tw.data(), m, d);
    MapM Y(out.data(), n, m);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += VecC(tb.data(), m).transpose();
  }
  return emit(std::move(out), rx || rw || rb, "linear",
              [=](Tape& t, const Tensor& g) {
                MapC G(g.data(), n, m);
                if (rx) {
                  MapM GX(t.grad_buffer(x.id).data(), n, d);
                  GX.noalias() += G * MapC(tw.data(), m, d);
                }
                if (rw) {
                  MapM GW(t.grad_buffer(w.id).data(), m, d);
                  GW.noalias() += G.transpose() * MapC(tx.data(), n, d);
                }
                if (rb) {
                  VecM GB(t.grad_buffer(bias.id).data(), m);
                  GB.noalias() += G.colwise().sum().transpose();
                }
              });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

Value Tape::sin(Value a) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  Tensor cos_buf;
  if (ra) {
    cos_buf = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) sincos_pair(ta[i], &out[i], &cos_buf[i]);
  } else {
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = std::sin(ta[i]);
  }
  return emit(std::move(out), ra, "sin",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * cos_buf[i];
              });
}

Value Tape::cos(Value a) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  Tensor sin_buf;
  if (ra) {
    sin_buf = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) sincos_pair(ta[i], &sin_buf[i], &out[i]);
  } else {
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = std::cos(ta[i]);
  }
  return emit(std::move(out), ra, "cos",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * sin_buf[i];
              });
}

Value Tape::sqrt(Value a) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = std::sqrt(ta[i]);
  const Tensor tout = out;
  return emit(std::move(out), ra, "sqrt",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / tout[i];
              });
}

Value Tape::square(Value a) {
  const Tensor ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * ta[i];
  return emit(std::move(out), ra, "square",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * ta[i];
              });
}

Value Tape::sum(Value a) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  double s = 0.0;
  for (int64_t i = 0; i < ta.size(); ++i) s += ta[i];
  return emit(Tensor({1}, {s}), ra, "sum",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
              });
}

Value Tape::mean(Value a) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  if (ta.size() == 0) throw std::invalid_argument("mean of empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < ta.size(); ++i) s += ta[i];
  const double inv_n = 1.0 / static_cast<double>(ta.size());
  return emit(Tensor({1}, {s * inv_n}), ra, "mean",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                const double gv = g[0] * inv_n;
                for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gv;
              });
}

Value Tape::reshape(Value a, std::vector<int64_t> shape) {
  const Tensor& ta = value(a);
  const bool ra = requires_grad(a);
  Tensor out = ta.reshaped(shape);
  return emit(std::move(out), ra, "reshape",
              [=](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
              });
}

Value Tape::stop_gradient(Value a) {
  return emit(value(a), false, "stop_gradient", nullptr);
}

Value Tape::gather_rows(Value a, std::vector<int64_t> rows) {
  const Tensor ta = value(a);
  if (ta.rank() != 2) throw std::invalid_argument("gather_rows requires a rank-2 tensor");
  const int64_t n = ta.dim(0), d = ta.dim(1);
  for (int64_t r : rows)
    if (r < 0 || r >= n) throw std::invalid_argument("gather_rows: row index out of range");
  const bool ra = requires_grad(a);
  const int64_t m = static_cast<int64_t>(rows.size());
  Tensor out({m, d});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t c = 0; c < d; ++c) out[i * d + c] = ta[rows[static_cast<size_t>(i)] * d + c];
  return emit(std::move(out), ra, "gather_rows",
              [=, rows = std::move(rows)](Tape& t, const Tensor& g) {
                if (!ra) return;
                Tensor& ga = t.grad_buffer(a.id);
                for (int64_t i = 0; i < m; ++i)
                  for (int64_t c = 0; c < d; ++c)
                    ga[rows[static_cast<size_t>(i)] * d + c] += g[i * d + c];
              });
}

// ---------------------------------------------------------------------------
// 2D convolution (true convolution: kernel is flipped)

namespace {

void conv2d_zero(const double* in, int64_t h, int64_t w, const double* k, int64_t kh,
                 int64_t kw, double* out) {
  const int64_t cy = kh / 2, cx = kw / 2;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < kh; ++i) {
        const int64_t sy = y - (i - cy);
        if (sy < 0 || sy >= h) continue;
        for (int64_t j = 0; j < kw; ++j) {
          const int64_t sx = x - (j - cx);
          if (sx < 0 || sx >= w) continue;
          acc += k[i * kw + j] * in[sy * w + sx];
        }
      }
      out[y * w + x] = acc;
    }
  }
}

void conv2d_circular(const double* in, int64_t h, int64_t w, const double* k, int64_t kh,
                     int64_t kw, double* out) {
  const int64_t cy = kh / 2, cx = kw / 2;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < kh; ++i) {
        int64_t sy = (y - (i - cy)) % h;
        if (sy < 0) sy += h;
        for (int64_t j = 0; j < kw; ++j) {
          int64_t sx = (x - (j - cx)) % w;
          if (sx < 0) sx += w;
          acc += k[i * kw + j] * in[sy * w + sx];
        }
      }
      out[y * w + x] = acc;
    }
  }
}

Tensor flip_kernel(const Tensor& k) {
  const int64_t kh = k.dim(0), kw = k.dim(1);
  Tensor f({kh, kw});
  for (int64_t i = 0; i < kh; ++i)
    for (int64_t j = 0; j < kw; ++j) f[i * kw + j] = k[(kh - 1 - i) * kw + (kw - 1 - j)];
  return f;
}

}  // namespace

Value Tape::conv2d(Value image, Value kernel, Conv2DMode mode) {
  const Tensor timg = value(image);
  const Tensor tk = value(kernel);
  if (timg.rank() != 2 || tk.rank() != 2)
    throw std::invalid_argument("conv2d requires rank-2 image and kernel");
  const int64_t h = timg.dim(0), w = timg.dim(1);
  const int64_t kh = tk.dim(0), kw = tk.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("conv2d kernel dimensions must be odd");
  if (kh > h || kw > w)
    throw std::invalid_argument("conv2d kernel larger than image");
  const bool ri = requires_grad(image), rk = requires_grad(kernel);

  Tensor out({h, w});
  if (mode == Conv2DMode::kZeroPad)
    conv2d_zero(timg.data(), h, w, tk.data(), kh, kw, out.data());
  else
    conv2d_circular(timg.data(), h, w, tk.data(), kh, kw, out.data());

  return emit(std::move(out), ri || rk, "conv2d",
              [=](Tape& t, const Tensor& g) {
                if (ri) {
                  // d(input) = gradient convolved with the flipped kernel.
                  Tensor fk = flip_kernel(tk);
                  Tensor gi({h, w});
                  if (mode == Conv2DMode::kZeroPad)
                    conv2d_zero(g.data(), h, w, fk.data(), kh, kw, gi.data());
                  else
                    conv2d_circular(g.data(), h, w, fk.data(), kh, kw, gi.data());
                  Tensor& ga = t.grad_buffer(image.id);
                  for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gi[i];
                }
                if (rk) {
                  const int64_t cy = kh / 2, cx = kw / 2;
                  Tensor& gk = t.grad_buffer(kernel.id);
                  for (int64_t i = 0; i < kh; ++i) {
                    for (int64_t j = 0; j < kw; ++j) {
                      double acc = 0.0;
                      for (int64_t y = 0; y < h; ++y) {
                        for (int64_t x = 0; x < w; ++x) {
                          int64_t sy = y - (i - cy), sx = x - (j - cx);
                          if (mode == Conv2DMode::kCircular) {
                            sy = ((sy % h) + h) % h;
                            sx = ((sx % w) + w) % w;
                          } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                            continue;
                          }
                          acc += g[y * w + x] * timg[sy * w + sx];
                        }
                      }
                      gk[i * kw + j] += acc;
                    }
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// ParamSet / gradient checking

void ParamSet::add(const std::string& name, Tensor value, bool trainable) {
  if (items_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  items_[name] = Param{std::move(value), trainable};
}

Param& ParamSet::at(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

EvalResult evaluate_with_gradients(const Program& f, const ParamSet& params) {
  Tape tape;
  std::map<std::string, Value> leaves;
  for (const auto& [name, p] : params.items())
    leaves[name] = tape.input(p.value, p.trainable);
  Value root = f(tape, leaves);
  if (tape.value(root).size() != 1)
    throw std::invalid_argument("program output is not scalar; reduce the loss before "
                                "requesting gradients");
  tape.backward(root);
  EvalResult res;
  res.value = tape.value(root)[0];
  // Leaves the backward never reached are omitted (vs. reported as zeros):
  // they are not part of the differentiated computation, and optimizers
  // should not advance state for them.
  for (const auto& [name, p] : params.items())
    if (p.trainable && tape.has_grad(leaves[name]))
      res.grads[name] = tape.grad(leaves[name]);
  return res;
}

namespace {

double eval_scalar(const Program& f, const ParamSet& params) {
  Tape tape;
  std::map<std::string, Value> leaves;
  for (const auto& [name, p] : params.items())
    leaves[name] = tape.constant(p.value);
  Value root = f(tape, leaves);
  if (tape.value(root).size() != 1)
    throw std::invalid_argument("program output is not scalar; reduce the loss before "
                                "requesting gradients");
  return tape.value(root)[0];
}

}  // namespace

std::map<std::string, Tensor> finite_difference_gradient(const Program& f,
                                                         const ParamSet& params,
                                                         double step) {
  // Deep copy so the probe perturbations never alias caller storage.
  ParamSet local;
  for (const auto& [name, p] : params.items()) local.add(name, p.value.clone(), p.trainable);

  std::map<std::string, Tensor> grads;
  for (auto& [name, p] : local.items()) {
    if (!p.trainable) continue;
    Tensor g(p.value.shape());
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double fp = eval_scalar(f, local);
      p.value[i] = orig - step;
      const double fm = eval_scalar(f, local);
      p.value[i] = orig;
      g[i] = (fp - fm) / (2.0 * step);
    }
    grads[name] = std::move(g);
  }
  return grads;
}

GradCheckReport grad_check(const Program& f, const ParamSet& params, double rel_tol,
                           double fd_step) {
  const EvalResult analytic = evaluate_with_gradients(f, params);
  const auto numeric = finite_difference_gradient(f, params, fd_step);

  GradCheckReport rep;
  for (const auto& [name, num] : numeric) {
    auto it = analytic.grads.find(name);
    for (int64_t i = 0; i < num.size(); ++i) {
      const double a = it != analytic.grads.end() ? it->second[i] : 0.0;
      const double b = num[i];
      const double denom = std::max(1e-8, std::abs(a) + std::abs(b));
      const double rel = std::abs(a - b) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_key = name;
        rep.worst_index = i;
        rep.analytic = a;
        rep.numeric = b;
      }
    }
  }
  rep.pass = rep.max_rel_err <= rel_tol;
  return rep;
}

}  // namespace rmfn::ad
