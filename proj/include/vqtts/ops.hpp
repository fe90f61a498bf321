#pragma once

// Forward ops with registered reverse-mode rules. Everything the model
// needs and nothing more: dense matmul / affine, 1-D convolution,
// elementwise arithmetic and nonlinearities, softmax, MSE, the negative
// L2 distance matrix, temporal first difference, concatenation, embedding
// lookup, segment mean, straight-through substitution, and a few scalar
// helpers for the CTC dynamic program.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "vqtts/tensor.hpp"

namespace vqtts {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

namespace detail {

inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      std::vector<NodePtr> inputs,
                      std::function<void(const std::vector<double>&, GradStore&)> bw) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->needs_grad;
  n->needs_grad = needs;
  if (needs) {
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor(n);
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline void check_2d(const char* op, const Tensor& t) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> v(a.value());
  for (size_t i = 0; i < v.size(); ++i) v[i] += b.value()[i];
  Node* an = a.raw();
  Node* bn = b.raw();
  return detail::make_op("add", a.shape(), std::move(v), {a.node(), b.node()},
                         [an, bn](const std::vector<double>& g, GradStore& gs) {
                           if (an->needs_grad) {
                             auto& ga = gs.acc(an);
                             for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (bn->needs_grad) {
                             auto& gb = gs.acc(bn);
                             for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> v(a.value());
  for (size_t i = 0; i < v.size(); ++i) v[i] -= b.value()[i];
  Node* an = a.raw();
  Node* bn = b.raw();
  return detail::make_op("sub", a.shape(), std::move(v), {a.node(), b.node()},
                         [an, bn](const std::vector<double>& g, GradStore& gs) {
                           if (an->needs_grad) {
                             auto& ga = gs.acc(an);
                             for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (bn->needs_grad) {
                             auto& gb = gs.acc(bn);
                             for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> v(a.value());
  for (size_t i = 0; i < v.size(); ++i) v[i] *= b.value()[i];
  Node* an = a.raw();
  Node* bn = b.raw();
  return detail::make_op("mul", a.shape(), std::move(v), {a.node(), b.node()},
                         [an, bn](const std::vector<double>& g, GradStore& gs) {
                           if (an->needs_grad) {
                             auto& ga = gs.acc(an);
                             for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
                           }
                           if (bn->needs_grad) {
                             auto& gb = gs.acc(bn);
                             for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
                           }
                         });
}

// a*x + b with compile-time constants (used for 1-z, loss weights, negation).
inline Tensor axpb(const Tensor& x, double a, double b) {
  std::vector<double> v(x.value());
  for (double& d : v) d = a * d + b;
  Node* xn = x.raw();
  return detail::make_op("axpb", x.shape(), std::move(v), {x.node()},
                         [xn, a](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
                         });
}

namespace detail {

template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df_from_xy) {
  std::vector<double> v(x.value());
  for (double& d : v) d = f(d);
  Node* xn = x.raw();
  std::vector<double> yv = v;  // rule may use the output; input read lazily
  return make_op(op, x.shape(), std::move(v), {x.node()},
                 [xn, yv = std::move(yv), df_from_xy](const std::vector<double>& g, GradStore& gs) {
                   if (!xn->needs_grad) return;
                   auto& gx = gs.acc(xn);
                   for (size_t i = 0; i < g.size(); ++i)
                     gx[i] += g[i] * df_from_xy(xn->value[i], yv[i]);
                 });
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}
inline Tensor tanh_t(const Tensor& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double yv) { return 1.0 - yv * yv; });
}
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary("sigmoid", x,
                       [](double v) {
                         return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                         : std::exp(v) / (1.0 + std::exp(v));
                       },
                       [](double, double yv) { return yv * (1.0 - yv); });
}
inline Tensor exp_t(const Tensor& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double yv) { return yv; });
}
inline Tensor log_t(const Tensor& x) {
  for (double v : x.value())
    if (!(v > 0.0))
      throw std::invalid_argument("log: non-positive input " + std::to_string(v));
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double xv, double) { return 1.0 / xv; });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_2d("matmul", a);
  detail::check_2d("matmul", b);
  const int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  std::vector<double> v(static_cast<size_t>(m * n));
  CMatMap A(a.value().data(), m, k), B(b.value().data(), k, n);
  MatMap(v.data(), m, n).noalias() = A * B;
  // Backward reads the input values through the nodes, which node->inputs
  // keeps alive; copying them here would duplicate weight matrices per call.
  Node* an = a.raw();
  Node* bn = b.raw();
  return detail::make_op("matmul", {m, n}, std::move(v), {a.node(), b.node()},
                         [an, bn, m, k, n](const std::vector<double>& g, GradStore& gs) {
                           CMatMap G(g.data(), m, n);
                           if (an->needs_grad) {
                             CMatMap B(bn->value.data(), k, n);
                             MatMap(gs.acc(an).data(), m, k).noalias() += G * B.transpose();
                           }
                           if (bn->needs_grad) {
                             CMatMap A(an->value.data(), m, k);
                             MatMap(gs.acc(bn).data(), k, n).noalias() += A.transpose() * G;
                           }
                         });
}

// y = W x + b for 1-D x. Pass an undefined bias to skip it.
inline Tensor affine(const Tensor& W, const Tensor& x, const Tensor& b = Tensor()) {
  detail::check_2d("affine", W);
  if (x.shape().size() != 1 || W.shape()[1] != x.shape()[0])
    throw std::invalid_argument("affine: shape mismatch " + shape_str(W.shape()) + " vs " +
                                shape_str(x.shape()));
  const int64_t out = W.shape()[0], in = W.shape()[1];
  if (b.defined() && (b.shape().size() != 1 || b.shape()[0] != out))
    throw std::invalid_argument("affine: bias shape mismatch " + shape_str(b.shape()) + " vs [" +
                                std::to_string(out) + "]");
  std::vector<double> v(static_cast<size_t>(out));
  CMatMap Wm(W.value().data(), out, in);
  CVecMap xm(x.value().data(), in);
  VecMap(v.data(), out).noalias() = Wm * xm;
  if (b.defined())
    for (int64_t i = 0; i < out; ++i) v[static_cast<size_t>(i)] += b.value()[static_cast<size_t>(i)];
  Node* Wn = W.raw();
  Node* xn = x.raw();
  Node* bnode = b.defined() ? b.raw() : nullptr;
  std::vector<NodePtr> ins = {W.node(), x.node()};
  if (b.defined()) ins.push_back(b.node());
  return detail::make_op("affine", {out}, std::move(v), std::move(ins),
                         [Wn, xn, bnode, out, in](const std::vector<double>& g, GradStore& gs) {
                           CVecMap G(g.data(), out);
                           if (Wn->needs_grad) {
                             CVecMap xm(xn->value.data(), in);
                             MatMap(gs.acc(Wn).data(), out, in).noalias() += G * xm.transpose();
                           }
                           if (xn->needs_grad) {
                             CMatMap Wm(Wn->value.data(), out, in);
                             VecMap(gs.acc(xn).data(), in).noalias() += Wm.transpose() * G;
                           }
                           if (bnode && bnode->needs_grad) {
                             auto& gb = gs.acc(bnode);
                             for (int64_t i = 0; i < out; ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
                           }
                         });
}

// X (R x C) + v broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  detail::check_2d("add_rowvec", x);
  if (v.shape().size() != 1 || v.shape()[0] != x.shape()[1])
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(v.shape()));
  const int64_t R = x.shape()[0], C = x.shape()[1];
  std::vector<double> out(x.value());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>(r * C + c)] += v.value()[static_cast<size_t>(c)];
  Node* xn = x.raw();
  Node* vn = v.raw();
  return detail::make_op("add_rowvec", x.shape(), std::move(out), {x.node(), v.node()},
                         [xn, vn, R, C](const std::vector<double>& g, GradStore& gs) {
                           if (xn->needs_grad) {
                             auto& gx = gs.acc(xn);
                             for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           }
                           if (vn->needs_grad) {
                             auto& gv = gs.acc(vn);
                             for (int64_t r = 0; r < R; ++r)
                               for (int64_t c = 0; c < C; ++c)
                                 gv[static_cast<size_t>(c)] += g[static_cast<size_t>(r * C + c)];
                           }
                         });
}

// ---------------------------------------------------------------------------
// reductions and losses

inline Tensor sum_t(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  Node* xn = x.raw();
  return detail::make_op("sum", {1}, {s}, {x.node()},
                         [xn](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (double& d : gx) d += g[0];
                         });
}

inline Tensor mean_t(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.value()) s += v;
  Node* xn = x.raw();
  return detail::make_op("mean", {1}, {s / n}, {x.node()},
                         [xn, n](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           const double gi = g[0] / n;
                           for (double& d : gx) d += gi;
                         });
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mse", a, b);
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  Node* an = a.raw();
  Node* bn = b.raw();
  std::vector<double> diff(a.value());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] -= b.value()[i];
  return detail::make_op("mse", {1}, {s / n}, {a.node(), b.node()},
                         [an, bn, n, diff = std::move(diff)](const std::vector<double>& g, GradStore& gs) {
                           const double c = 2.0 * g[0] / n;
                           if (an->needs_grad) {
                             auto& ga = gs.acc(an);
                             for (size_t i = 0; i < diff.size(); ++i) ga[i] += c * diff[i];
                           }
                           if (bn->needs_grad) {
                             auto& gb = gs.acc(bn);
                             for (size_t i = 0; i < diff.size(); ++i) gb[i] -= c * diff[i];
                           }
                         });
}

// Mean of -y*log(sigmoid(x)) - (1-y)*log(1-sigmoid(x)), computed stably.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.numel() != static_cast<int64_t>(targets.size()))
    throw std::invalid_argument("bce_with_logits: " + std::to_string(logits.numel()) +
                                " logits vs " + std::to_string(targets.size()) + " targets");
  const double n = static_cast<double>(targets.size());
  double s = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const double x = logits.value()[i], y = targets[i];
    s += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Node* ln = logits.raw();
  std::vector<double> xv = logits.value();
  std::vector<double> yv = targets;
  return detail::make_op("bce_with_logits", {1}, {s / n}, {logits.node()},
                         [ln, n, xv = std::move(xv), yv = std::move(yv)](
                             const std::vector<double>& g, GradStore& gs) {
                           if (!ln->needs_grad) return;
                           auto& gx = gs.acc(ln);
                           for (size_t i = 0; i < xv.size(); ++i) {
                             const double p = xv[i] >= 0.0
                                                  ? 1.0 / (1.0 + std::exp(-xv[i]))
                                                  : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
                             gx[i] += g[0] * (p - yv[i]) / n;
                           }
                         });
}

// ---------------------------------------------------------------------------
// softmax / distances

inline Tensor softmax_rows(const Tensor& x) {
  detail::check_2d("softmax_rows", x);
  const int64_t R = x.shape()[0], C = x.shape()[1];
  std::vector<double> y(x.value().size());
  for (int64_t r = 0; r < R; ++r) {
    const double* xr = x.value().data() + r * C;
    double* yr = y.data() + r * C;
    double mx = xr[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      s += yr[c];
    }
    for (int64_t c = 0; c < C; ++c) yr[c] /= s;
  }
  Node* xn = x.raw();
  std::vector<double> yv = y;
  return detail::make_op("softmax_rows", x.shape(), std::move(y), {x.node()},
                         [xn, R, C, yv = std::move(yv)](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (int64_t r = 0; r < R; ++r) {
                             const double* yr = yv.data() + r * C;
                             const double* gr = g.data() + r * C;
                             double dot = 0.0;
                             for (int64_t c = 0; c < C; ++c) dot += yr[c] * gr[c];
                             for (int64_t c = 0; c < C; ++c)
                               gx[static_cast<size_t>(r * C + c)] += yr[c] * (gr[c] - dot);
                           }
                         });
}

// M[t][v] = -|| h_t - e_v ||_2
inline Tensor neg_l2_distance(const Tensor& h, const Tensor& e) {
  detail::check_2d("neg_l2_distance", h);
  detail::check_2d("neg_l2_distance", e);
  if (h.shape()[1] != e.shape()[1])
    throw std::invalid_argument("neg_l2_distance: dimension mismatch " + shape_str(h.shape()) +
                                " vs " + shape_str(e.shape()));
  const int64_t T = h.shape()[0], D = h.shape()[1], V = e.shape()[0];
  std::vector<double> m(static_cast<size_t>(T * V));
  for (int64_t t = 0; t < T; ++t) {
    const double* ht = h.value().data() + t * D;
    for (int64_t v = 0; v < V; ++v) {
      const double* ev = e.value().data() + v * D;
      double s = 0.0;
      for (int64_t d = 0; d < D; ++d) {
        const double diff = ht[d] - ev[d];
        s += diff * diff;
      }
      m[static_cast<size_t>(t * V + v)] = -std::sqrt(s);
    }
  }
  Node* hn = h.raw();
  Node* en = e.raw();
  std::vector<double> mv = m;
  return detail::make_op(
      "neg_l2_distance", {T, V}, std::move(m), {h.node(), e.node()},
      [hn, en, T, D, V, mv = std::move(mv)](const std::vector<double>& g, GradStore& gs) {
        std::vector<double>* gh = hn->needs_grad ? &gs.acc(hn) : nullptr;
        std::vector<double>* ge = en->needs_grad ? &gs.acc(en) : nullptr;
        if (!gh && !ge) return;
        for (int64_t t = 0; t < T; ++t) {
          const double* ht = hn->value.data() + t * D;
          for (int64_t v = 0; v < V; ++v) {
            const double gtv = g[static_cast<size_t>(t * V + v)];
            if (gtv == 0.0) continue;
            const double dist = std::max(-mv[static_cast<size_t>(t * V + v)], 1e-30);
            const double* evp = en->value.data() + v * D;
            const double c = -gtv / dist;
            for (int64_t d = 0; d < D; ++d) {
              const double diff = ht[d] - evp[d];
              if (gh) (*gh)[static_cast<size_t>(t * D + d)] += c * diff;
              if (ge) (*ge)[static_cast<size_t>(v * D + d)] -= c * diff;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// structure: diff, concat, slices, reshape, lookup

// d[t] = x[t+1] - x[t] along the first axis.
inline Tensor temporal_diff(const Tensor& x) {
  detail::check_2d("temporal_diff", x);
  const int64_t T = x.shape()[0], F = x.shape()[1];
  if (T < 2)
    throw std::invalid_argument("temporal_diff: need at least 2 rows, got " + shape_str(x.shape()));
  std::vector<double> v(static_cast<size_t>((T - 1) * F));
  for (int64_t t = 0; t + 1 < T; ++t)
    for (int64_t f = 0; f < F; ++f)
      v[static_cast<size_t>(t * F + f)] =
          x.value()[static_cast<size_t>((t + 1) * F + f)] - x.value()[static_cast<size_t>(t * F + f)];
  Node* xn = x.raw();
  return detail::make_op("temporal_diff", {T - 1, F}, std::move(v), {x.node()},
                         [xn, T, F](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (int64_t t = 0; t + 1 < T; ++t)
                             for (int64_t f = 0; f < F; ++f) {
                               const double gv = g[static_cast<size_t>(t * F + f)];
                               gx[static_cast<size_t>((t + 1) * F + f)] += gv;
                               gx[static_cast<size_t>(t * F + f)] -= gv;
                             }
                         });
}

// Concatenate along the first axis; 1-D inputs concatenate end to end.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  int64_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != s0.size() ||
        (s0.size() == 2 && p.shape()[1] != s0[1]))
      throw std::invalid_argument("concat: shape mismatch " + shape_str(s0) + " vs " +
                                  shape_str(p.shape()));
    rows += p.shape()[0];
  }
  Shape out_shape = s0;
  out_shape[0] = rows;
  std::vector<double> v;
  v.reserve(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<NodePtr> ins;
  std::vector<std::pair<Node*, std::pair<size_t, size_t>>> spans;  // node -> (offset, count)
  size_t off = 0;
  for (const Tensor& p : parts) {
    v.insert(v.end(), p.value().begin(), p.value().end());
    ins.push_back(p.node());
    spans.push_back({p.raw(), {off, p.value().size()}});
    off += p.value().size();
  }
  return detail::make_op("concat", std::move(out_shape), std::move(v), std::move(ins),
                         [spans = std::move(spans)](const std::vector<double>& g, GradStore& gs) {
                           for (const auto& [node, span] : spans) {
                             if (!node->needs_grad) continue;
                             auto& gn = gs.acc(node);
                             for (size_t i = 0; i < span.second; ++i) gn[i] += g[span.first + i];
                           }
                         });
}

// Contiguous row block [r0, r0+n) of a matrix.
inline Tensor rows(const Tensor& x, int64_t r0, int64_t n) {
  detail::check_2d("rows", x);
  const int64_t R = x.shape()[0], C = x.shape()[1];
  if (r0 < 0 || n < 1 || r0 + n > R)
    throw std::invalid_argument("rows: range [" + std::to_string(r0) + "," +
                                std::to_string(r0 + n) + ") out of " + shape_str(x.shape()));
  std::vector<double> v(x.value().begin() + r0 * C, x.value().begin() + (r0 + n) * C);
  Node* xn = x.raw();
  return detail::make_op("rows", {n, C}, std::move(v), {x.node()},
                         [xn, r0, C](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (size_t i = 0; i < g.size(); ++i)
                             gx[static_cast<size_t>(r0 * C) + i] += g[i];
                         });
}

// Contiguous slice of a 1-D tensor.
inline Tensor slice_vec(const Tensor& x, int64_t off, int64_t len) {
  if (x.shape().size() != 1 || off < 0 || len < 1 || off + len > x.shape()[0])
    throw std::invalid_argument("slice_vec: [" + std::to_string(off) + "," +
                                std::to_string(off + len) + ") out of " + shape_str(x.shape()));
  std::vector<double> v(x.value().begin() + off, x.value().begin() + off + len);
  Node* xn = x.raw();
  return detail::make_op("slice_vec", {len}, std::move(v), {x.node()},
                         [xn, off](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(off) + i] += g[i];
                         });
}

// One element by flat index, as a scalar.
inline Tensor select(const Tensor& x, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.numel())
    throw std::invalid_argument("select: index " + std::to_string(flat_index) + " out of " +
                                shape_str(x.shape()));
  Node* xn = x.raw();
  return detail::make_op("select", {1}, {x.value()[static_cast<size_t>(flat_index)]}, {x.node()},
                         [xn, flat_index](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           gs.acc(xn)[static_cast<size_t>(flat_index)] += g[0];
                         });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  Node* xn = x.raw();
  std::vector<double> v(x.value());
  return detail::make_op("reshape", std::move(shape), std::move(v), {x.node()},
                         [xn](const std::vector<double>& g, GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

// Gather rows of a table; gradients scatter-add back into the rows.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices) {
  detail::check_2d("embedding_lookup", table);
  const int64_t V = table.shape()[0], D = table.shape()[1];
  for (int idx : indices)
    if (idx < 0 || idx >= V)
      throw std::invalid_argument("embedding_lookup: index " + std::to_string(idx) +
                                  " out of table " + shape_str(table.shape()));
  const int64_t S = static_cast<int64_t>(indices.size());
  std::vector<double> v(static_cast<size_t>(S * D));
  for (int64_t i = 0; i < S; ++i)
    std::memcpy(v.data() + i * D, table.value().data() + indices[static_cast<size_t>(i)] * D,
                static_cast<size_t>(D) * sizeof(double));
  Node* tn = table.raw();
  std::vector<int> idxs = indices;
  return detail::make_op("embedding_lookup", {S, D}, std::move(v), {table.node()},
                         [tn, D, idxs = std::move(idxs)](const std::vector<double>& g, GradStore& gs) {
                           if (!tn->needs_grad) return;
                           auto& gt = gs.acc(tn);
                           for (size_t i = 0; i < idxs.size(); ++i)
                             for (int64_t d = 0; d < D; ++d)
                               gt[static_cast<size_t>(idxs[i] * D + d)] +=
                                   g[i * static_cast<size_t>(D) + static_cast<size_t>(d)];
                         });
}

// Mean over row ranges: runs[i] = (start, length). Output row i is the mean
// of x rows [start, start+length).
inline Tensor segment_mean(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& runs) {
  detail::check_2d("segment_mean", x);
  const int64_t T = x.shape()[0], D = x.shape()[1];
  for (const auto& [s, l] : runs)
    if (s < 0 || l < 1 || s + l > T)
      throw std::invalid_argument("segment_mean: run [" + std::to_string(s) + "," +
                                  std::to_string(s + l) + ") out of " + shape_str(x.shape()));
  const int64_t S = static_cast<int64_t>(runs.size());
  std::vector<double> v(static_cast<size_t>(S * D), 0.0);
  for (int64_t i = 0; i < S; ++i) {
    const auto& [s, l] = runs[static_cast<size_t>(i)];
    for (int64_t t = s; t < s + l; ++t)
      for (int64_t d = 0; d < D; ++d)
        v[static_cast<size_t>(i * D + d)] += x.value()[static_cast<size_t>(t * D + d)];
    for (int64_t d = 0; d < D; ++d) v[static_cast<size_t>(i * D + d)] /= static_cast<double>(l);
  }
  Node* xn = x.raw();
  auto runs_copy = runs;
  return detail::make_op("segment_mean", {S, D}, std::move(v), {x.node()},
                         [xn, D, runs_copy = std::move(runs_copy)](const std::vector<double>& g,
                                                                   GradStore& gs) {
                           if (!xn->needs_grad) return;
                           auto& gx = gs.acc(xn);
                           for (size_t i = 0; i < runs_copy.size(); ++i) {
                             const auto& [s, l] = runs_copy[i];
                             const double inv = 1.0 / static_cast<double>(l);
                             for (int64_t t = s; t < s + l; ++t)
                               for (int64_t d = 0; d < D; ++d)
                                 gx[static_cast<size_t>(t * D + d)] +=
                                     inv * g[i * static_cast<size_t>(D) + static_cast<size_t>(d)];
                           }
                         });
}

// ---------------------------------------------------------------------------
// straight-through substitution

// Forward value is q, bitwise. The backward rule hands the incoming
// gradient to h unchanged; q receives nothing. Under an active grad-check
// context the op records (h, q) or replays the linearised forward
// q_ref + (h - h_ref), which is the function the identity Jacobian describes.
inline Tensor straight_through(const Tensor& h, const Tensor& q) {
  detail::check_same_shape("straight_through", h, q);
  std::vector<double> v(q.value());
  StContext& ctx = StContext::get();
  if (ctx.mode == StContext::Mode::record) {
    ctx.h_ref.push_back(h.value());
    ctx.q_ref.push_back(q.value());
    ctx.cursor++;
  } else if (ctx.mode == StContext::Mode::replay) {
    if (ctx.cursor >= ctx.h_ref.size())
      throw std::runtime_error("straight_through: grad-check replay saw more substitution sites than recorded");
    const auto& h0 = ctx.h_ref[ctx.cursor];
    const auto& q0 = ctx.q_ref[ctx.cursor];
    ctx.cursor++;
    for (size_t i = 0; i < v.size(); ++i) v[i] = q0[i] + (h.value()[i] - h0[i]);
  }
  Node* hn = h.raw();
  return detail::make_op("straight_through", h.shape(), std::move(v), {h.node(), q.node()},
                         [hn](const std::vector<double>& g, GradStore& gs) {
                           if (!hn->needs_grad) return;
                           auto& gh = gs.acc(hn);
                           for (size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// 1-D convolution over time
//
// x: T x Cin (row per frame), W: Cout x (Cin*width) with kernel index
// c*width + j, b: Cout. Virtual zero padding on both sides.
inline Tensor conv1d(const Tensor& x, const Tensor& W, const Tensor& b, int64_t width,
                     int64_t stride, int64_t pad_left, int64_t pad_right) {
  detail::check_2d("conv1d", x);
  detail::check_2d("conv1d", W);
  const int64_t T = x.shape()[0], Cin = x.shape()[1], Cout = W.shape()[0];
  if (W.shape()[1] != Cin * width)
    throw std::invalid_argument("conv1d: weight shape " + shape_str(W.shape()) +
                                " does not match Cin*width = " + std::to_string(Cin * width));
  if (b.shape().size() != 1 || b.shape()[0] != Cout)
    throw std::invalid_argument("conv1d: bias shape mismatch " + shape_str(b.shape()));
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  const int64_t Tp = T + pad_left + pad_right;
  if (Tp < width)
    throw std::invalid_argument("conv1d: input too short: padded length " + std::to_string(Tp) +
                                " < width " + std::to_string(width));
  const int64_t Tout = (Tp - width) / stride + 1;
  const int64_t K = Cin * width;

  std::vector<double> im2col(static_cast<size_t>(Tout * K), 0.0);
  for (int64_t t = 0; t < Tout; ++t) {
    const int64_t t0 = t * stride - pad_left;
    for (int64_t j = 0; j < width; ++j) {
      const int64_t src = t0 + j;
      if (src < 0 || src >= T) continue;
      for (int64_t c = 0; c < Cin; ++c)
        im2col[static_cast<size_t>(t * K + c * width + j)] =
            x.value()[static_cast<size_t>(src * Cin + c)];
    }
  }
  std::vector<double> y(static_cast<size_t>(Tout * Cout));
  {
    CMatMap I(im2col.data(), Tout, K), Wm(W.value().data(), Cout, K);
    MatMap(y.data(), Tout, Cout).noalias() = I * Wm.transpose();
  }
  for (int64_t t = 0; t < Tout; ++t)
    for (int64_t c = 0; c < Cout; ++c) y[static_cast<size_t>(t * Cout + c)] += b.value()[static_cast<size_t>(c)];

  Node* xn = x.raw();
  Node* Wn = W.raw();
  Node* bn = b.raw();
  return detail::make_op(
      "conv1d", {Tout, Cout}, std::move(y), {x.node(), W.node(), b.node()},
      [xn, Wn, bn, T, Cin, Cout, width, stride, pad_left, Tout, K,
       im2col = std::move(im2col)](const std::vector<double>& g, GradStore& gs) {
        CMatMap G(g.data(), Tout, Cout);
        if (Wn->needs_grad) {
          CMatMap I(im2col.data(), Tout, K);
          MatMap(gs.acc(Wn).data(), Cout, K).noalias() += G.transpose() * I;
        }
        if (bn->needs_grad) {
          auto& gb = gs.acc(bn);
          for (int64_t t = 0; t < Tout; ++t)
            for (int64_t c = 0; c < Cout; ++c) gb[static_cast<size_t>(c)] += g[static_cast<size_t>(t * Cout + c)];
        }
        if (xn->needs_grad) {
          RowMat gcol(Tout, K);
          CMatMap Wm(Wn->value.data(), Cout, K);
          gcol.noalias() = G * Wm;
          auto& gx = gs.acc(xn);
          for (int64_t t = 0; t < Tout; ++t) {
            const int64_t t0 = t * stride - pad_left;
            for (int64_t j = 0; j < width; ++j) {
              const int64_t src = t0 + j;
              if (src < 0 || src >= T) continue;
              for (int64_t c = 0; c < Cin; ++c)
                gx[static_cast<size_t>(src * Cin + c)] += gcol(t, c * width + j);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// scalar log-space helper for the CTC dynamic program

inline Tensor logaddexp(const Tensor& a, const Tensor& b) {
  if (a.numel() != 1 || b.numel() != 1)
    throw std::invalid_argument("logaddexp: scalars required, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  const double av = a.value()[0], bv = b.value()[0];
  const double m = std::max(av, bv);
  const double ea = std::exp(av - m), eb = std::exp(bv - m);
  const double out = m + std::log(ea + eb);
  Node* an = a.raw();
  Node* bn = b.raw();
  const double wa = ea / (ea + eb), wb = eb / (ea + eb);
  return detail::make_op("logaddexp", {1}, {out}, {a.node(), b.node()},
                         [an, bn, wa, wb](const std::vector<double>& g, GradStore& gs) {
                           if (an->needs_grad) gs.acc(an)[0] += g[0] * wa;
                           if (bn->needs_grad) gs.acc(bn)[0] += g[0] * wb;
                         });
}

}  // namespace vqtts
