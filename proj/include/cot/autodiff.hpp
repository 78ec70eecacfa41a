#pragma once

#include "cot/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace cot::ad {

// Matrix-valued reverse-mode tape. Nodes are appended in evaluation order,
// which is already a topological order, so the backward pass is a single
// reverse sweep. One tape per training sample; parameters enter as leaves
// and their gradients are read back by leaf id after backward().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    Mat value;
    Mat grad;  // allocated lazily, same shape as value
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_alloc = false;
  };

  int add_leaf(Mat value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_node(Mat value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, std::move(fn), requires_grad, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& value(int id) const { return nodes_[id].value; }

  Mat& grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
  // a 1x1 node (a scalar loss).
  void backward(int root) {
    if (nodes_[root].value.size() != 1)
      throw InputError("Tape::backward: root must be a scalar node");
    grad(root)(0, 0) = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.requires_grad && n.grad_alloc) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// Lightweight handle; free functions below build the graph.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const { return tape->value(id); }
  long rows() const { return value().rows(); }
  long cols() const { return value().cols(); }
  const Mat& grad() const { return tape->grad(id); }
};

inline Var leaf(Tape& t, Mat value, bool requires_grad = true) {
  return Var{&t, t.add_leaf(std::move(value), requires_grad)};
}

inline Var constant(Tape& t, Mat value) { return Var{&t, t.add_leaf(std::move(value), false)}; }

namespace detail {
inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw InputError("autodiff: operands live on different tapes");
}
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string("autodiff: shape mismatch in ") + op);
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value() + b.value(), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g;
    if (t.requires_grad(b.id)) t.grad(b.id) += g;
  });
  return Var{&t, id};
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value() - b.value(), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g;
    if (t.requires_grad(b.id)) t.grad(b.id) -= g;
  });
  return Var{&t, id};
}

// coefficient-wise product
inline Var cmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "cmul");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value().cwiseProduct(b.value()), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    if (t.requires_grad(b.id)) t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
  return Var{&t, id};
}

// coefficient-wise quotient
inline Var cdiv(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "cdiv");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value().cwiseQuotient(b.value()), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    const Mat& bv = t.value(b.id);
    if (t.requires_grad(a.id)) t.grad(a.id) += g.cwiseQuotient(bv);
    if (t.requires_grad(b.id))
      t.grad(b.id) -= g.cwiseProduct(t.value(self)).cwiseQuotient(bv);
  });
  return Var{&t, id};
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value() * s, t.requires_grad(a.id), [a, s](Tape& t, int self) {
    t.grad(a.id) += t.grad(self) * s;
  });
  return Var{&t, id};
}

inline Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  int id = t.add_node((a.value().array() + s).matrix(), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id) += t.grad(self);
  });
  return Var{&t, id};
}

// add a constant (no-grad) matrix, used for the causal mask
inline Var add_const(Var a, const Mat& c) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value() + c, t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id) += t.grad(self);
  });
  return Var{&t, id};
}

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw InputError("autodiff: shape mismatch in matmul");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value() * b.value(), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g * t.value(b.id).transpose();
    if (t.requires_grad(b.id)) t.grad(b.id) += t.value(a.id).transpose() * g;
  });
  return Var{&t, id};
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.cols()) throw InputError("autodiff: shape mismatch in matmul_nt");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value() * b.value().transpose(), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g * t.value(b.id);
    if (t.requires_grad(b.id)) t.grad(b.id) += g.transpose() * t.value(a.id);
  });
  return Var{&t, id};
}

// a^T * b
inline Var matmul_tn(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.rows() != b.rows()) throw InputError("autodiff: shape mismatch in matmul_tn");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  int id = t.add_node(a.value().transpose() * b.value(), rg, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += t.value(b.id) * g.transpose();
    if (t.requires_grad(b.id)) t.grad(b.id) += t.value(a.id) * g;
  });
  return Var{&t, id};
}

// broadcast a 1xM row vector over each row of a
inline Var add_rowvec(Var a, Var r) {
  detail::check_same_tape(a, r);
  if (r.rows() != 1 || r.cols() != a.cols())
    throw InputError("autodiff: add_rowvec expects a 1xM row vector");
  Tape& t = *a.tape;
  bool rg = t.requires_grad(a.id) || t.requires_grad(r.id);
  int id = t.add_node(a.value().rowwise() + t.value(r.id).row(0), rg,
                      [a, r](Tape& t, int self) {
                        const Mat& g = t.grad(self);
                        if (t.requires_grad(a.id)) t.grad(a.id) += g;
                        if (t.requires_grad(r.id)) t.grad(r.id) += g.colwise().sum();
                      });
  return Var{&t, id};
}

inline Var sum_rows(Var a) {  // N x M -> N x 1
  Tape& t = *a.tape;
  int id = t.add_node(a.value().rowwise().sum(), t.requires_grad(a.id),
                      [a](Tape& t, int self) {
                        const Mat& g = t.grad(self);
                        t.grad(a.id).colwise() += g.col(0);
                      });
  return Var{&t, id};
}

inline Var sum_cols(Var a) {  // N x M -> 1 x M
  Tape& t = *a.tape;
  int id = t.add_node(a.value().colwise().sum(), t.requires_grad(a.id),
                      [a](Tape& t, int self) {
                        const Mat& g = t.grad(self);
                        t.grad(a.id).rowwise() += g.row(0);
                      });
  return Var{&t, id};
}

inline Var sum_all(Var a) {  // N x M -> 1 x 1
  Tape& t = *a.tape;
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  int id = t.add_node(std::move(v), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id).array() += t.grad(self)(0, 0);
  });
  return Var{&t, id};
}

inline Var bcast_col(Var c, long cols) {  // N x 1 -> N x cols
  if (c.cols() != 1) throw InputError("autodiff: bcast_col expects an Nx1 column");
  Tape& t = *c.tape;
  int id = t.add_node(c.value().replicate(1, cols), t.requires_grad(c.id),
                      [c](Tape& t, int self) {
                        t.grad(c.id) += t.grad(self).rowwise().sum();
                      });
  return Var{&t, id};
}

inline Var bcast_row(Var r, long rows) {  // 1 x M -> rows x M
  if (r.rows() != 1) throw InputError("autodiff: bcast_row expects a 1xM row");
  Tape& t = *r.tape;
  int id = t.add_node(r.value().replicate(rows, 1), t.requires_grad(r.id),
                      [r](Tape& t, int self) {
                        t.grad(r.id) += t.grad(self).colwise().sum();
                      });
  return Var{&t, id};
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value().array().exp().matrix(), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id) += t.grad(self).cwiseProduct(t.value(self));
  });
  return Var{&t, id};
}

inline Var log_(Var a) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value().array().log().matrix(), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id) += t.grad(self).cwiseQuotient(t.value(a.id));
  });
  return Var{&t, id};
}

inline Var sqrt_(Var a) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value().array().sqrt().matrix(), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.grad(a.id) += (t.grad(self).array() * 0.5 / t.value(self).array()).matrix();
  });
  return Var{&t, id};
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value().cwiseMax(0.0), t.requires_grad(a.id), [a](Tape& t, int self) {
    // subgradient 0 at the kink
    const Mat mask = (t.value(a.id).array() > 0.0).cast<double>().matrix();
    t.grad(a.id) += t.grad(self).cwiseProduct(mask);
  });
  return Var{&t, id};
}

namespace detail {
inline double gelu_scalar(double x) {
  const double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}
inline double gelu_grad_scalar(double x) {
  const double k = 0.7978845608028654;
  const double u = k * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}
}  // namespace detail

// tanh-approximation GELU, smooth everywhere (finite-difference friendly)
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  int id = t.add_node(a.value().unaryExpr([](double x) { return detail::gelu_scalar(x); }),
                      t.requires_grad(a.id), [a](Tape& t, int self) {
                        const Mat d = t.value(a.id).unaryExpr(
                            [](double x) { return detail::gelu_grad_scalar(x); });
                        t.grad(a.id) += t.grad(self).cwiseProduct(d);
                      });
  return Var{&t, id};
}

inline Var slice_rows(Var a, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw InputError("autodiff: slice_rows out of range");
  Tape& t = *a.tape;
  int id = t.add_node(a.value().middleRows(begin, count), t.requires_grad(a.id),
                      [a, begin, count](Tape& t, int self) {
                        t.grad(a.id).middleRows(begin, count) += t.grad(self);
                      });
  return Var{&t, id};
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("autodiff: concat_rows of nothing");
  Tape& t = *parts[0].tape;
  long rows = 0;
  const long cols = parts[0].cols();
  bool rg = false;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InputError("autodiff: concat_rows column mismatch");
    rows += p.rows();
    rg = rg || t.requires_grad(p.id);
  }
  Mat v(rows, cols);
  long r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  int id = t.add_node(std::move(v), rg, [parts](Tape& t, int self) {
    const Mat& g = t.grad(self);
    long r = 0;
    for (const Var& p : parts) {
      const long n = t.value(p.id).rows();
      if (t.requires_grad(p.id)) t.grad(p.id) += g.middleRows(r, n);
      r += n;
    }
  });
  return Var{&t, id};
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("autodiff: concat_cols of nothing");
  Tape& t = *parts[0].tape;
  long cols = 0;
  const long rows = parts[0].rows();
  bool rg = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InputError("autodiff: concat_cols row mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p.id);
  }
  Mat v(rows, cols);
  long c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  int id = t.add_node(std::move(v), rg, [parts](Tape& t, int self) {
    const Mat& g = t.grad(self);
    long c = 0;
    for (const Var& p : parts) {
      const long n = t.value(p.id).cols();
      if (t.requires_grad(p.id)) t.grad(p.id) += g.middleCols(c, n);
      c += n;
    }
  });
  return Var{&t, id};
}

// Row gather (embedding lookup); backward scatter-adds into the table.
inline Var gather_rows(Var table, std::vector<int> idx) {
  Tape& t = *table.tape;
  Mat v(static_cast<long>(idx.size()), table.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table.rows())
      throw InputError("autodiff: gather_rows index out of range");
    v.row(static_cast<long>(i)) = table.value().row(idx[i]);
  }
  int id = t.add_node(std::move(v), t.requires_grad(table.id),
                      [table, idx = std::move(idx)](Tape& t, int self) {
                        const Mat& g = t.grad(self);
                        Mat& tg = t.grad(table.id);
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          tg.row(idx[i]) += g.row(static_cast<long>(i));
                      });
  return Var{&t, id};
}

// Row-wise softmax (fused). dx = y .* (dy - rowsum(dy .* y))
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Mat y = a.value();
  for (long i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  int id = t.add_node(std::move(y), t.requires_grad(a.id), [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.grad(self);
    const Vec dot = (g.cwiseProduct(y)).rowwise().sum();
    t.grad(a.id) += y.cwiseProduct(g.colwise() - dot);
  });
  return Var{&t, id};
}

inline Var logsumexp_rows(Var a) {  // N x M -> N x 1
  Tape& t = *a.tape;
  Mat v(a.rows(), 1);
  for (long i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    v(i, 0) = m + std::log((a.value().row(i).array() - m).exp().sum());
  }
  int id = t.add_node(std::move(v), t.requires_grad(a.id), [a](Tape& t, int self) {
    const Mat& x = t.value(a.id);
    const Mat& l = t.value(self);
    const Mat& g = t.grad(self);
    // d/dx_ij = exp(x_ij - lse_i) * g_i
    t.grad(a.id) += ((x.colwise() - l.col(0)).array().exp().colwise() * g.col(0).array()).matrix();
  });
  return Var{&t, id};
}

inline Var logsumexp_cols(Var a) {  // N x M -> 1 x M
  Tape& t = *a.tape;
  Mat v(1, a.cols());
  for (long j = 0; j < a.cols(); ++j) {
    const double m = a.value().col(j).maxCoeff();
    v(0, j) = m + std::log((a.value().col(j).array() - m).exp().sum());
  }
  int id = t.add_node(std::move(v), t.requires_grad(a.id), [a](Tape& t, int self) {
    const Mat& x = t.value(a.id);
    const Mat& l = t.value(self);
    const Mat& g = t.grad(self);
    t.grad(a.id) += ((x.rowwise() - l.row(0)).array().exp().rowwise() * g.row(0).array()).matrix();
  });
  return Var{&t, id};
}

// Row-wise layer normalization with gain/bias (1 x d each), fused.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-9) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
      bias.cols() != x.cols())
    throw InputError("autodiff: layer_norm gain/bias must be 1 x d");
  Tape& t = *x.tape;
  const long d = x.cols();
  const Mat& xv = x.value();
  Vec mean = xv.rowwise().mean();
  Mat centered = xv.colwise() - mean;
  Vec var = centered.array().square().rowwise().mean();
  Vec inv_std = (var.array() + eps).rsqrt().matrix();
  Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Mat out = ((xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
             bias.value().row(0).array())
                .matrix();
  bool rg = t.requires_grad(x.id) || t.requires_grad(gain.id) || t.requires_grad(bias.id);
  int id = t.add_node(std::move(out), rg, [x, gain, bias, eps, d](Tape& t, int self) {
    const Mat& xv = t.value(x.id);
    const Mat& g = t.grad(self);
    Vec mean = xv.rowwise().mean();
    Mat centered = xv.colwise() - mean;
    Vec var = centered.array().square().rowwise().mean();
    Vec inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
    if (t.requires_grad(bias.id)) t.grad(bias.id) += g.colwise().sum();
    if (t.requires_grad(gain.id)) t.grad(gain.id) += (g.cwiseProduct(xhat)).colwise().sum();
    if (t.requires_grad(x.id)) {
      Mat dxhat = (g.array().rowwise() * t.value(gain.id).row(0).array()).matrix();
      Vec m1 = dxhat.rowwise().mean();
      Vec m2 = (dxhat.cwiseProduct(xhat)).rowwise().mean();
      Mat dx = (((dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix())
                    .array()
                    .colwise() *
                inv_std.array())
                   .matrix();
      t.grad(x.id) += dx;
      (void)d;
    }
  });
  return Var{&t, id};
}

// Mean of -log softmax(logits[i])[targets[i]] over positions where
// supervised[i] is true. Fused cross-entropy for next-token prediction;
// the caller passes targets[i] = ids[i + 1].
inline Var cross_entropy(Var logits, std::vector<int> targets, std::vector<bool> supervised) {
  Tape& t = *logits.tape;
  const long n = logits.rows();
  if (static_cast<long>(targets.size()) != n || static_cast<long>(supervised.size()) != n)
    throw InputError("autodiff: cross_entropy length mismatch");
  long count = 0;
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    if (!supervised[i]) continue;
    if (targets[i] < 0 || targets[i] >= logits.cols())
      throw InputError("autodiff: cross_entropy target id out of range");
    const auto row = logits.value().row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(targets[i]);
    ++count;
  }
  if (count == 0) throw InputError("cross_entropy: no supervised positions");
  Mat v(1, 1);
  v(0, 0) = loss / static_cast<double>(count);
  int id = t.add_node(std::move(v), t.requires_grad(logits.id),
                      [logits, targets = std::move(targets), supervised = std::move(supervised),
                       count](Tape& t, int self) {
                        const double gs = t.grad(self)(0, 0) / static_cast<double>(count);
                        const Mat& lv = t.value(logits.id);
                        Mat& lg = t.grad(logits.id);
                        for (long i = 0; i < lv.rows(); ++i) {
                          if (!supervised[i]) continue;
                          const auto row = lv.row(i);
                          const double m = row.maxCoeff();
                          Eigen::RowVectorXd p = (row.array() - m).exp().matrix();
                          p /= p.sum();
                          lg.row(i) += gs * p;
                          lg(i, targets[i]) -= gs;
                        }
                      });
  return Var{&t, id};
}

inline Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

// L2-normalize each row; composed from primitives.
inline Var l2_normalize_rows(Var a, const char* what = "matrix") {
  for (long i = 0; i < a.rows(); ++i) {
    if (a.value().row(i).norm() == 0.0)
      throw InputError(std::string("l2_normalize_rows: zero-norm row ") + std::to_string(i) +
                       " in " + what);
  }
  Var sq = cmul(a, a);
  Var norms = sqrt_(sum_rows(sq));  // N x 1
  return cdiv(a, bcast_col(norms, a.cols()));
}

// cosine of row pairs: (N x d, N x d) -> N x 1
inline Var cosine_rows(Var a, Var b) {
  detail::check_same_shape(a, b, "cosine_rows");
  for (long i = 0; i < a.rows(); ++i) {
    if (a.value().row(i).norm() == 0.0 || b.value().row(i).norm() == 0.0)
      throw InputError("cosine_rows: zero-norm row " + std::to_string(i));
  }
  Var dots = sum_rows(cmul(a, b));
  Var na = sqrt_(sum_rows(cmul(a, a)));
  Var nb = sqrt_(sum_rows(cmul(b, b)));
  return cdiv(dots, cmul(na, nb));
}

}  // namespace cot::ad
