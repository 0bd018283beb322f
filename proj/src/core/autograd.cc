// core/autograd.cc

// Copyright 2026  vsrkit authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "core/autograd.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Dense>

namespace vsr {
namespace ag {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

thread_local bool g_grad_enabled = true;
thread_local int64_t g_seq_counter = 0;

double LogAdd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

// True when small's shape is a suffix of big's shape (legal broadcast).
bool IsSuffixShape(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i) {
    if (big[off + i] != small[i]) return false;
  }
  return true;
}

void CheckSameShape(const Var& a, const Var& b, const char* op) {
  if (!a->value.SameShape(b->value)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                ShapeToString(a->value.shape()) + " vs " +
                                ShapeToString(b->value.shape()));
  }
}

}  // namespace

void Node::EnsureGrad() {
  if (grad.numel() != value.numel()) grad = Tensor::Zeros(value.shape());
}

void Node::AccumulateGrad(const Tensor& g) {
  EnsureGrad();
  const double* src = g.data();
  double* dst = grad.data();
  int64_t n = grad.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

bool GradEnabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var Constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  n->seq = ++g_seq_counter;
  return n;
}

Var Parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->seq = ++g_seq_counter;
  return n;
}

Var MakeOp(Tensor value, std::vector<Var> inputs, std::function<void(Node*)> backward_fn) {
  if (!g_grad_enabled) return Constant(std::move(value));
  bool needs = false;
  for (const Var& v : inputs) {
    if (v && v->requires_grad) {
      needs = true;
      break;
    }
  }
  if (!needs) return Constant(std::move(value));
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->seq = ++g_seq_counter;
  n->inputs = std::move(inputs);
  n->backward_fn = std::move(backward_fn);
  return n;
}

void Backward(const Var& root) {
  if (!root) throw std::invalid_argument("Backward: null root");
  if (root->value.numel() != 1) {
    throw std::invalid_argument("Backward: root must be scalar, got " +
                                ShapeToString(root->value.shape()));
  }
  // Gather reachable grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const Var& in : n->inputs) {
      if (in && in->requires_grad && !seen.count(in.get())) {
        seen.insert(in.get());
        stack.push_back(in.get());
      }
    }
  }
  // Reverse creation order is a topological order of the DAG.
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });
  root->EnsureGrad();
  root->grad.Fill(1.0);
  for (Node* n : order) {
    if (n->backward_fn && n->grad.numel() > 0) n->backward_fn(n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Add(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.SameShape(bv)) {
    Tensor out(av.shape());
    int64_t n = av.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
    return MakeOp(std::move(out), {a, b}, [](Node* node) {
      if (node->inputs[0]->requires_grad) node->inputs[0]->AccumulateGrad(node->grad);
      if (node->inputs[1]->requires_grad) node->inputs[1]->AccumulateGrad(node->grad);
    });
  }
  if (!IsSuffixShape(av.shape(), bv.shape())) {
    throw std::invalid_argument("Add: incompatible shapes " + ShapeToString(av.shape()) +
                                " vs " + ShapeToString(bv.shape()));
  }
  int64_t bn = bv.numel();
  int64_t rep = av.numel() / bn;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rep; ++r) {
    const double* ap = av.data() + r * bn;
    double* op = out.data() + r * bn;
    for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] + bv[i];
  }
  return MakeOp(std::move(out), {a, b}, [rep, bn](Node* node) {
    if (node->inputs[0]->requires_grad) node->inputs[0]->AccumulateGrad(node->grad);
    if (node->inputs[1]->requires_grad) {
      Node* bp = node->inputs[1].get();
      bp->EnsureGrad();
      for (int64_t r = 0; r < rep; ++r) {
        const double* gp = node->grad.data() + r * bn;
        for (int64_t i = 0; i < bn; ++i) bp->grad[i] += gp[i];
      }
    }
  });
}

Var Sub(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Sub");
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return MakeOp(std::move(out), {a, b}, [](Node* node) {
    if (node->inputs[0]->requires_grad) node->inputs[0]->AccumulateGrad(node->grad);
    if (node->inputs[1]->requires_grad) {
      Node* bp = node->inputs[1].get();
      bp->EnsureGrad();
      int64_t n = node->grad.numel();
      for (int64_t i = 0; i < n; ++i) bp->grad[i] -= node->grad[i];
    }
  });
}

Var Mul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.SameShape(bv)) {
    Tensor out(av.shape());
    int64_t n = av.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
    return MakeOp(std::move(out), {a, b}, [](Node* node) {
      const Tensor& av = node->inputs[0]->value;
      const Tensor& bv = node->inputs[1]->value;
      int64_t n = node->grad.numel();
      if (node->inputs[0]->requires_grad) {
        Node* p = node->inputs[0].get();
        p->EnsureGrad();
        for (int64_t i = 0; i < n; ++i) p->grad[i] += node->grad[i] * bv[i];
      }
      if (node->inputs[1]->requires_grad) {
        Node* p = node->inputs[1].get();
        p->EnsureGrad();
        for (int64_t i = 0; i < n; ++i) p->grad[i] += node->grad[i] * av[i];
      }
    });
  }
  if (!IsSuffixShape(av.shape(), bv.shape())) {
    throw std::invalid_argument("Mul: incompatible shapes " + ShapeToString(av.shape()) +
                                " vs " + ShapeToString(bv.shape()));
  }
  int64_t bn = bv.numel();
  int64_t rep = av.numel() / bn;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rep; ++r) {
    const double* ap = av.data() + r * bn;
    double* op = out.data() + r * bn;
    for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] * bv[i];
  }
  return MakeOp(std::move(out), {a, b}, [rep, bn](Node* node) {
    const Tensor& av = node->inputs[0]->value;
    const Tensor& bv = node->inputs[1]->value;
    if (node->inputs[0]->requires_grad) {
      Node* p = node->inputs[0].get();
      p->EnsureGrad();
      for (int64_t r = 0; r < rep; ++r) {
        const double* gp = node->grad.data() + r * bn;
        double* dp = p->grad.data() + r * bn;
        for (int64_t i = 0; i < bn; ++i) dp[i] += gp[i] * bv[i];
      }
    }
    if (node->inputs[1]->requires_grad) {
      Node* p = node->inputs[1].get();
      p->EnsureGrad();
      for (int64_t r = 0; r < rep; ++r) {
        const double* gp = node->grad.data() + r * bn;
        const double* ap = av.data() + r * bn;
        for (int64_t i = 0; i < bn; ++i) p->grad[i] += gp[i] * ap[i];
      }
    }
  });
}

Var Neg(const Var& a) { return Scale(a, -1.0); }

Var Scale(const Var& a, double c) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * c;
  return MakeOp(std::move(out), {a}, [c](Node* node) {
    Node* p = node->inputs[0].get();
    if (!p->requires_grad) return;
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += node->grad[i] * c;
  });
}

Var AddScalar(const Var& a, double c) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + c;
  return MakeOp(std::move(out), {a}, [](Node* node) {
    node->inputs[0]->AccumulateGrad(node->grad);
  });
}

Var Relu(const Var& a) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return MakeOp(std::move(out), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      if (p->value[i] > 0.0) p->grad[i] += node->grad[i];
    }
  });
}

Var Sigmoid(const Var& a) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
  return MakeOp(std::move(out), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      double y = node->value[i];
      p->grad[i] += node->grad[i] * y * (1.0 - y);
    }
  });
}

Var Swish(const Var& a) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    double s = 1.0 / (1.0 + std::exp(-a->value[i]));
    out[i] = a->value[i] * s;
  }
  return MakeOp(std::move(out), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      double x = p->value[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      p->grad[i] += node->grad[i] * s * (1.0 + x * (1.0 - s));
    }
  });
}

Var Gelu(const Var& a) {
  static const double kInvSqrt2 = 0.7071067811865475244;
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    double x = a->value[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return MakeOp(std::move(out), {a}, [](Node* node) {
    static const double kInvSqrt2pi = 0.3989422804014326779;
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      double x = p->value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2pi * std::exp(-0.5 * x * x);
      p->grad[i] += node->grad[i] * (cdf + x * pdf);
    }
  });
}

Var Tanh(const Var& a) {
  Tensor out(a->value.shape());
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(a->value[i]);
  return MakeOp(std::move(out), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      double y = node->value[i];
      p->grad[i] += node->grad[i] * (1.0 - y * y);
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var MatMul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("MatMul: bad shapes " + ShapeToString(av.shape()) + " x " +
                                ShapeToString(bv.shape()));
  }
  int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  MapM(out.data(), m, n).noalias() = MapCM(av.data(), m, k) * MapCM(bv.data(), k, n);
  return MakeOp(std::move(out), {a, b}, [m, k, n](Node* node) {
    MapCM g(node->grad.data(), m, n);
    if (node->inputs[0]->requires_grad) {
      Node* p = node->inputs[0].get();
      p->EnsureGrad();
      MapM(p->grad.data(), m, k).noalias() +=
          g * MapCM(node->inputs[1]->value.data(), k, n).transpose();
    }
    if (node->inputs[1]->requires_grad) {
      Node* p = node->inputs[1].get();
      p->EnsureGrad();
      MapM(p->grad.data(), k, n).noalias() +=
          MapCM(node->inputs[0]->value.data(), m, k).transpose() * g;
    }
  });
}

Var Bmm(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw std::invalid_argument("Bmm: bad shapes " + ShapeToString(av.shape()) + " x " +
                                ShapeToString(bv.shape()));
  }
  int64_t B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out(Shape{B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    MapM(out.data() + i * m * n, m, n).noalias() =
        MapCM(av.data() + i * m * k, m, k) * MapCM(bv.data() + i * k * n, k, n);
  }
  return MakeOp(std::move(out), {a, b}, [B, m, k, n](Node* node) {
    for (int64_t i = 0; i < B; ++i) {
      MapCM g(node->grad.data() + i * m * n, m, n);
      if (node->inputs[0]->requires_grad) {
        Node* p = node->inputs[0].get();
        p->EnsureGrad();
        MapM(p->grad.data() + i * m * k, m, k).noalias() +=
            g * MapCM(node->inputs[1]->value.data() + i * k * n, k, n).transpose();
      }
      if (node->inputs[1]->requires_grad) {
        Node* p = node->inputs[1].get();
        p->EnsureGrad();
        MapM(p->grad.data() + i * k * n, k, n).noalias() +=
            MapCM(node->inputs[0]->value.data() + i * m * k, m, k).transpose() * g;
      }
    }
  });
}

Var Affine(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (wv.ndim() != 2 || xv.ndim() < 1 || xv.shape().back() != wv.dim(1)) {
    throw std::invalid_argument("Affine: bad shapes " + ShapeToString(xv.shape()) + " x " +
                                ShapeToString(wv.shape()));
  }
  int64_t in = wv.dim(1), out_dim = wv.dim(0);
  int64_t rows = xv.numel() / in;
  Shape out_shape(xv.shape());
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MapM(out.data(), rows, out_dim).noalias() =
      MapCM(xv.data(), rows, in) * MapCM(wv.data(), out_dim, in).transpose();
  bool has_bias = b && b->value.numel() == out_dim;
  if (has_bias) {
    for (int64_t r = 0; r < rows; ++r) {
      double* op = out.data() + r * out_dim;
      for (int64_t j = 0; j < out_dim; ++j) op[j] += b->value[j];
    }
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return MakeOp(std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node* node) {
    MapCM g(node->grad.data(), rows, out_dim);
    if (node->inputs[0]->requires_grad) {
      Node* p = node->inputs[0].get();
      p->EnsureGrad();
      MapM(p->grad.data(), rows, in).noalias() +=
          g * MapCM(node->inputs[1]->value.data(), out_dim, in);
    }
    if (node->inputs[1]->requires_grad) {
      Node* p = node->inputs[1].get();
      p->EnsureGrad();
      MapM(p->grad.data(), out_dim, in).noalias() +=
          g.transpose() * MapCM(node->inputs[0]->value.data(), rows, in);
    }
    if (has_bias && node->inputs[2]->requires_grad) {
      Node* p = node->inputs[2].get();
      p->EnsureGrad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gp = node->grad.data() + r * out_dim;
        for (int64_t j = 0; j < out_dim; ++j) p->grad[j] += gp[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var Reshape(const Var& a, Shape shape) {
  Tensor out = a->value.Reshaped(std::move(shape));
  return MakeOp(std::move(out), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += node->grad[i];
  });
}

namespace {

Tensor CopyPermuted(const Tensor& in, const std::vector<int>& axes) {
  int nd = in.ndim();
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in.dim(axes[i]);
  Tensor out(out_shape);
  std::vector<int64_t> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in.dim(i + 1);
  std::vector<int64_t> out_to_in(nd);
  for (int i = 0; i < nd; ++i) out_to_in[i] = in_strides[axes[i]];
  std::vector<int64_t> idx(nd, 0);
  int64_t n = in.numel();
  int64_t in_off = 0;
  for (int64_t o = 0; o < n; ++o) {
    out[o] = in[in_off];
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      in_off += out_to_in[d];
      if (idx[d] < out_shape[d]) break;
      in_off -= out_to_in[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace

Var Permute(const Var& a, const std::vector<int>& axes) {
  if (static_cast<int>(axes.size()) != a->value.ndim()) {
    throw std::invalid_argument("Permute: axes rank mismatch");
  }
  Tensor out = CopyPermuted(a->value, axes);
  std::vector<int> inverse(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = static_cast<int>(i);
  return MakeOp(std::move(out), {a}, [inverse](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    Tensor g = CopyPermuted(node->grad, inverse);
    int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += g[i];
  });
}

Var Concat(const std::vector<Var>& parts, int dim) {
  if (parts.empty()) throw std::invalid_argument("Concat: empty input");
  const Shape& s0 = parts[0]->value.shape();
  int nd = static_cast<int>(s0.size());
  if (dim < 0) dim += nd;
  int64_t total = 0;
  for (const Var& p : parts) total += p->value.dim(dim);
  Shape out_shape(s0);
  out_shape[dim] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s0[i];
  for (int i = dim + 1; i < nd; ++i) inner *= s0[i];
  Tensor out(out_shape);
  std::vector<int64_t> widths;
  for (const Var& p : parts) widths.push_back(p->value.dim(dim) * inner);
  int64_t out_row = total * inner;
  for (int64_t r = 0; r < outer; ++r) {
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const double* src = parts[pi]->value.data() + r * widths[pi];
      double* dst = out.data() + r * out_row + off;
      std::copy(src, src + widths[pi], dst);
      off += widths[pi];
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return MakeOp(std::move(out), std::move(inputs), [outer, widths, out_row](Node* node) {
    for (int64_t r = 0; r < outer; ++r) {
      int64_t off = 0;
      for (size_t pi = 0; pi < node->inputs.size(); ++pi) {
        Node* p = node->inputs[pi].get();
        if (p->requires_grad) {
          p->EnsureGrad();
          const double* g = node->grad.data() + r * out_row + off;
          double* dst = p->grad.data() + r * widths[pi];
          for (int64_t i = 0; i < widths[pi]; ++i) dst[i] += g[i];
        }
        off += widths[pi];
      }
    }
  });
}

Var SliceDim(const Var& a, int dim, int64_t start, int64_t len) {
  const Shape& s = a->value.shape();
  int nd = static_cast<int>(s.size());
  if (dim < 0) dim += nd;
  if (start < 0 || start + len > s[dim]) {
    throw std::invalid_argument("SliceDim: out of range");
  }
  Shape out_shape(s);
  out_shape[dim] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s[i];
  for (int i = dim + 1; i < nd; ++i) inner *= s[i];
  Tensor out(out_shape);
  int64_t in_row = s[dim] * inner, out_row = len * inner;
  for (int64_t r = 0; r < outer; ++r) {
    const double* src = a->value.data() + r * in_row + start * inner;
    std::copy(src, src + out_row, out.data() + r * out_row);
  }
  return MakeOp(std::move(out), {a}, [outer, inner, in_row, out_row, start](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (int64_t r = 0; r < outer; ++r) {
      const double* g = node->grad.data() + r * out_row;
      double* dst = p->grad.data() + r * in_row + start * inner;
      for (int64_t i = 0; i < out_row; ++i) dst[i] += g[i];
    }
  });
}

Var ExpandLeading(const Var& a, int64_t n) {
  const Tensor& av = a->value;
  Shape out_shape;
  out_shape.push_back(n);
  for (int64_t d : av.shape()) out_shape.push_back(d);
  Tensor out(out_shape);
  int64_t block = av.numel();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(av.data(), av.data() + block, out.data() + i * block);
  }
  return MakeOp(std::move(out), {a}, [n, block](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) {
      const double* g = node->grad.data() + i * block;
      for (int64_t j = 0; j < block; ++j) p->grad[j] += g[j];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions / normalizations
// ---------------------------------------------------------------------------

Var SumAll(const Var& a) {
  double s = 0.0;
  int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) s += a->value[i];
  return MakeOp(Tensor::Scalar(s), {a}, [](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    double g = node->grad[0];
    int64_t n = p->grad.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += g;
  });
}

Var MeanAll(const Var& a) {
  int64_t n = a->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a->value[i];
  return MakeOp(Tensor::Scalar(s / static_cast<double>(n)), {a}, [n](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    double g = node->grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) p->grad[i] += g;
  });
}

Var SoftmaxLastDim(const Var& a) {
  const Tensor& av = a->value;
  int64_t d = av.shape().back();
  int64_t rows = av.numel() / d;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double m = x[0];
    for (int64_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - m);
      z += y[i];
    }
    double inv = 1.0 / z;
    for (int64_t i = 0; i < d; ++i) y[i] *= inv;
  }
  return MakeOp(std::move(out), {a}, [rows, d](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node->value.data() + r * d;
      const double* g = node->grad.data() + r * d;
      double* dx = p->grad.data() + r * d;
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += g[i] * y[i];
      for (int64_t i = 0; i < d; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
}

Var LogSoftmaxLastDim(const Var& a) {
  const Tensor& av = a->value;
  int64_t d = av.shape().back();
  int64_t rows = av.numel() / d;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double m = x[0];
    for (int64_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < d; ++i) z += std::exp(x[i] - m);
    double lse = m + std::log(z);
    for (int64_t i = 0; i < d; ++i) y[i] = x[i] - lse;
  }
  return MakeOp(std::move(out), {a}, [rows, d](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node->value.data() + r * d;
      const double* g = node->grad.data() + r * d;
      double* dx = p->grad.data() + r * d;
      double gsum = 0.0;
      for (int64_t i = 0; i < d; ++i) gsum += g[i];
      for (int64_t i = 0; i < d; ++i) dx[i] += g[i] - std::exp(y[i]) * gsum;
    }
  });
}

Var LayerNorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x->value;
  int64_t d = xv.shape().back();
  if (gamma->value.numel() != d || beta->value.numel() != d) {
    throw std::invalid_argument("LayerNorm: affine params must match last dim");
  }
  int64_t rows = xv.numel() / d;
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_sigma(Shape{rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = xv.data() + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += xp[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      double c = xp[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    double* hp = xhat.data() + r * d;
    double* op = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      hp[i] = (xp[i] - mu) * inv;
      op[i] = hp[i] * gamma->value[i] + beta->value[i];
    }
  }
  auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
  auto inv_p = std::make_shared<Tensor>(std::move(inv_sigma));
  return MakeOp(std::move(out), {x, gamma, beta}, [rows, d, xhat_p, inv_p](Node* node) {
    Node* xp = node->inputs[0].get();
    Node* gp = node->inputs[1].get();
    Node* bp = node->inputs[2].get();
    const Tensor& gamma = gp->value;
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = node->grad.data() + r * d;
      const double* h = xhat_p->data() + r * d;
      if (gp->requires_grad) {
        gp->EnsureGrad();
        for (int64_t i = 0; i < d; ++i) gp->grad[i] += g[i] * h[i];
      }
      if (bp->requires_grad) {
        bp->EnsureGrad();
        for (int64_t i = 0; i < d; ++i) bp->grad[i] += g[i];
      }
      if (xp->requires_grad) {
        xp->EnsureGrad();
        double* dx = xp->grad.data() + r * d;
        double inv = (*inv_p)[r];
        double mean_gg = 0.0, mean_ggh = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          double gg = g[i] * gamma[i];
          mean_gg += gg;
          mean_ggh += gg * h[i];
        }
        mean_gg /= static_cast<double>(d);
        mean_ggh /= static_cast<double>(d);
        for (int64_t i = 0; i < d; ++i) {
          double gg = g[i] * gamma[i];
          dx[i] += inv * (gg - mean_gg - h[i] * mean_ggh);
        }
      }
    }
  });
}

Var BatchNormChannel(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                     Tensor* running_var, bool training, double momentum, double eps) {
  const Tensor& xv = x->value;
  if (xv.ndim() < 2) throw std::invalid_argument("BatchNormChannel: need (B,C,...) input");
  int64_t B = xv.dim(0), C = xv.dim(1);
  int64_t spatial = xv.numel() / (B * C);
  int64_t n = B * spatial;
  Tensor mean(Shape{C}), inv_sigma(Shape{C});
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* p = xv.data() + (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) s += p[i];
      }
      double mu = s / static_cast<double>(n);
      double var = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* p = xv.data() + (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);
      mean[c] = mu;
      inv_sigma[c] = 1.0 / std::sqrt(var + eps);
      (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * mu;
      (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = (*running_mean)[c];
      inv_sigma[c] = 1.0 / std::sqrt((*running_var)[c] + eps);
    }
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double* p = xv.data() + (b * C + c) * spatial;
      double* h = xhat.data() + (b * C + c) * spatial;
      double* o = out.data() + (b * C + c) * spatial;
      double mu = mean[c], inv = inv_sigma[c], g = gamma->value[c], bb = beta->value[c];
      for (int64_t i = 0; i < spatial; ++i) {
        h[i] = (p[i] - mu) * inv;
        o[i] = h[i] * g + bb;
      }
    }
  }
  auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
  auto inv_p = std::make_shared<Tensor>(std::move(inv_sigma));
  return MakeOp(std::move(out), {x, gamma, beta},
                [B, C, spatial, n, training, xhat_p, inv_p](Node* node) {
    Node* xp = node->inputs[0].get();
    Node* gp = node->inputs[1].get();
    Node* bp = node->inputs[2].get();
    for (int64_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gh = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* g = node->grad.data() + (b * C + c) * spatial;
        const double* h = xhat_p->data() + (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          sum_g += g[i];
          sum_gh += g[i] * h[i];
        }
      }
      if (gp->requires_grad) {
        gp->EnsureGrad();
        gp->grad[c] += sum_gh;
      }
      if (bp->requires_grad) {
        bp->EnsureGrad();
        bp->grad[c] += sum_g;
      }
      if (xp->requires_grad) {
        xp->EnsureGrad();
        double gscale = gp->value[c] * (*inv_p)[c];
        double mg = sum_g / static_cast<double>(n);
        double mgh = sum_gh / static_cast<double>(n);
        for (int64_t b = 0; b < B; ++b) {
          const double* g = node->grad.data() + (b * C + c) * spatial;
          const double* h = xhat_p->data() + (b * C + c) * spatial;
          double* dx = xp->grad.data() + (b * C + c) * spatial;
          if (training) {
            for (int64_t i = 0; i < spatial; ++i) {
              dx[i] += gscale * (g[i] - mg - h[i] * mgh);
            }
          } else {
            for (int64_t i = 0; i < spatial; ++i) dx[i] += gscale * g[i];
          }
        }
      }
    }
  });
}

Var Dropout(const Var& x, double p, bool training, RngState* rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("Dropout: p must be < 1");
  double keep = 1.0 - p;
  double scale = 1.0 / keep;
  int64_t n = x->value.numel();
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    double m = rng->Uniform() < keep ? scale : 0.0;
    (*mask)[static_cast<size_t>(i)] = m;
    out[i] = x->value[i] * m;
  }
  return MakeOp(std::move(out), {x}, [mask](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    int64_t n = node->grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      p->grad[i] += node->grad[i] * (*mask)[static_cast<size_t>(i)];
    }
  });
}

// ---------------------------------------------------------------------------
// embedding / conv
// ---------------------------------------------------------------------------

Var EmbeddingLookup(const Var& weight, const std::vector<int>& ids, Shape out_leading) {
  const Tensor& wv = weight->value;
  int64_t V = wv.dim(0), D = wv.dim(1);
  if (ShapeNumel(out_leading) != static_cast<int64_t>(ids.size())) {
    throw std::invalid_argument("EmbeddingLookup: leading shape mismatch");
  }
  Shape out_shape(out_leading);
  out_shape.push_back(D);
  Tensor out(out_shape);
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= V) throw std::out_of_range("EmbeddingLookup: id out of range");
    std::copy(wv.data() + id * D, wv.data() + (id + 1) * D,
              out.data() + static_cast<int64_t>(i) * D);
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return MakeOp(std::move(out), {weight}, [ids_copy, D](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (size_t i = 0; i < ids_copy->size(); ++i) {
      const double* g = node->grad.data() + static_cast<int64_t>(i) * D;
      double* dst = p->grad.data() + static_cast<int64_t>((*ids_copy)[i]) * D;
      for (int64_t j = 0; j < D; ++j) dst[j] += g[j];
    }
  });
}

namespace {

struct ConvDims {
  int64_t B, Cin, T, H, W;
  int64_t Cout, kt, kh, kw;
  int64_t To, Ho, Wo;
  int st, sh, sw, pt, ph, pw;
  int64_t K() const { return Cin * kt * kh * kw; }
};

ConvDims MakeConvDims(const Tensor& x, const Tensor& w, const Conv3dGeom& g) {
  ConvDims d;
  d.B = x.dim(0);
  d.Cin = x.dim(1);
  d.T = x.dim(2);
  d.H = x.dim(3);
  d.W = x.dim(4);
  d.Cout = w.dim(0);
  d.kt = w.dim(2);
  d.kh = w.dim(3);
  d.kw = w.dim(4);
  d.st = g.stride[0];
  d.sh = g.stride[1];
  d.sw = g.stride[2];
  d.pt = g.pad[0];
  d.ph = g.pad[1];
  d.pw = g.pad[2];
  d.To = (d.T + 2 * d.pt - d.kt) / d.st + 1;
  d.Ho = (d.H + 2 * d.ph - d.kh) / d.sh + 1;
  d.Wo = (d.W + 2 * d.pw - d.kw) / d.sw + 1;
  return d;
}

// Gathers the receptive fields for one (batch, output frame) into a
// (K, Ho*Wo) matrix so the convolution becomes a single GEMM.
void FillColumns(const Tensor& x, const ConvDims& d, int64_t b, int64_t to, double* col) {
  int64_t hw = d.Ho * d.Wo;
  int64_t k = 0;
  for (int64_t ci = 0; ci < d.Cin; ++ci) {
    for (int64_t dt = 0; dt < d.kt; ++dt) {
      int64_t ti = to * d.st - d.pt + dt;
      bool t_ok = ti >= 0 && ti < d.T;
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw, ++k) {
          double* row = col + k * hw;
          if (!t_ok) {
            std::fill(row, row + hw, 0.0);
            continue;
          }
          const double* xplane = x.data() + ((b * d.Cin + ci) * d.T + ti) * d.H * d.W;
          int64_t o = 0;
          for (int64_t ho = 0; ho < d.Ho; ++ho) {
            int64_t hi = ho * d.sh - d.ph + dh;
            if (hi < 0 || hi >= d.H) {
              std::fill(row + o, row + o + d.Wo, 0.0);
              o += d.Wo;
              continue;
            }
            const double* xrow = xplane + hi * d.W;
            for (int64_t wo = 0; wo < d.Wo; ++wo, ++o) {
              int64_t wi = wo * d.sw - d.pw + dw;
              row[o] = (wi >= 0 && wi < d.W) ? xrow[wi] : 0.0;
            }
          }
        }
      }
    }
  }
}

void ScatterColumns(const double* col, const ConvDims& d, int64_t b, int64_t to, Tensor* dx) {
  int64_t hw = d.Ho * d.Wo;
  int64_t k = 0;
  for (int64_t ci = 0; ci < d.Cin; ++ci) {
    for (int64_t dt = 0; dt < d.kt; ++dt) {
      int64_t ti = to * d.st - d.pt + dt;
      if (ti < 0 || ti >= d.T) {
        k += d.kh * d.kw;
        continue;
      }
      double* xplane = dx->data() + ((b * d.Cin + ci) * d.T + ti) * d.H * d.W;
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw, ++k) {
          const double* row = col + k * hw;
          int64_t o = 0;
          for (int64_t ho = 0; ho < d.Ho; ++ho) {
            int64_t hi = ho * d.sh - d.ph + dh;
            if (hi < 0 || hi >= d.H) {
              o += d.Wo;
              continue;
            }
            double* xrow = xplane + hi * d.W;
            for (int64_t wo = 0; wo < d.Wo; ++wo, ++o) {
              int64_t wi = wo * d.sw - d.pw + dw;
              if (wi >= 0 && wi < d.W) xrow[wi] += row[o];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var Conv3d(const Var& x, const Var& w, const Var& b, const Conv3dGeom& geom) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 5 || wv.ndim() != 5 || xv.dim(1) != wv.dim(1)) {
    throw std::invalid_argument("Conv3d: bad shapes " + ShapeToString(xv.shape()) + " conv " +
                                ShapeToString(wv.shape()));
  }
  ConvDims d = MakeConvDims(xv, wv, geom);
  if (d.To < 1 || d.Ho < 1 || d.Wo < 1) {
    throw std::invalid_argument("Conv3d: output would be empty");
  }
  int64_t K = d.K(), hw = d.Ho * d.Wo;
  Tensor out(Shape{d.B, d.Cout, d.To, d.Ho, d.Wo});
  std::vector<double> col(static_cast<size_t>(K * hw));
  std::vector<double> prod(static_cast<size_t>(d.Cout * hw));
  bool has_bias = b && b->value.numel() == d.Cout;
  for (int64_t bi = 0; bi < d.B; ++bi) {
    for (int64_t to = 0; to < d.To; ++to) {
      FillColumns(xv, d, bi, to, col.data());
      MapM(prod.data(), d.Cout, hw).noalias() =
          MapCM(wv.data(), d.Cout, K) * MapCM(col.data(), K, hw);
      for (int64_t co = 0; co < d.Cout; ++co) {
        double* dst = out.data() + (((bi * d.Cout + co) * d.To + to) * hw);
        const double* src = prod.data() + co * hw;
        if (has_bias) {
          double bias = b->value[co];
          for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bias;
        } else {
          std::copy(src, src + hw, dst);
        }
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return MakeOp(std::move(out), std::move(inputs), [d, has_bias](Node* node) {
    int64_t K = d.K(), hw = d.Ho * d.Wo;
    Node* xp = node->inputs[0].get();
    Node* wp = node->inputs[1].get();
    Node* bp = has_bias ? node->inputs[2].get() : nullptr;
    if (xp->requires_grad) xp->EnsureGrad();
    if (wp->requires_grad) wp->EnsureGrad();
    if (bp && bp->requires_grad) bp->EnsureGrad();
    std::vector<double> col(static_cast<size_t>(K * hw));
    std::vector<double> gslice(static_cast<size_t>(d.Cout * hw));
    std::vector<double> dcol(static_cast<size_t>(K * hw));
    for (int64_t bi = 0; bi < d.B; ++bi) {
      for (int64_t to = 0; to < d.To; ++to) {
        for (int64_t co = 0; co < d.Cout; ++co) {
          const double* g = node->grad.data() + (((bi * d.Cout + co) * d.To + to) * hw);
          std::copy(g, g + hw, gslice.data() + co * hw);
        }
        if (wp->requires_grad || xp->requires_grad) {
          FillColumns(xp->value, d, bi, to, col.data());
        }
        if (wp->requires_grad) {
          MapM(wp->grad.data(), d.Cout, K).noalias() +=
              MapCM(gslice.data(), d.Cout, hw) * MapCM(col.data(), K, hw).transpose();
        }
        if (xp->requires_grad) {
          MapM(dcol.data(), K, hw).noalias() =
              MapCM(wp->value.data(), d.Cout, K).transpose() * MapCM(gslice.data(), d.Cout, hw);
          ScatterColumns(dcol.data(), d, bi, to, &xp->grad);
        }
        if (bp && bp->requires_grad) {
          for (int64_t co = 0; co < d.Cout; ++co) {
            const double* g = gslice.data() + co * hw;
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += g[i];
            bp->grad[co] += s;
          }
        }
      }
    }
  });
}

Var DepthwiseConv1d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 3 || wv.ndim() != 2 || xv.dim(2) != wv.dim(0) || wv.dim(1) % 2 == 0) {
    throw std::invalid_argument("DepthwiseConv1d: bad shapes " + ShapeToString(xv.shape()) +
                                " conv " + ShapeToString(wv.shape()));
  }
  int64_t B = xv.dim(0), T = xv.dim(1), C = xv.dim(2), k = wv.dim(1);
  int64_t pad = (k - 1) / 2;
  bool has_bias = b && b->value.numel() == C;
  Tensor out(Shape{B, T, C});
  for (int64_t bi = 0; bi < B; ++bi) {
    for (int64_t t = 0; t < T; ++t) {
      double* o = out.data() + (bi * T + t) * C;
      for (int64_t c = 0; c < C; ++c) o[c] = has_bias ? b->value[c] : 0.0;
      for (int64_t d = 0; d < k; ++d) {
        int64_t ti = t - pad + d;
        if (ti < 0 || ti >= T) continue;
        const double* xi = xv.data() + (bi * T + ti) * C;
        const double* wcol = wv.data();
        for (int64_t c = 0; c < C; ++c) o[c] += xi[c] * wcol[c * k + d];
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return MakeOp(std::move(out), std::move(inputs), [B, T, C, k, pad, has_bias](Node* node) {
    Node* xp = node->inputs[0].get();
    Node* wp = node->inputs[1].get();
    Node* bp = has_bias ? node->inputs[2].get() : nullptr;
    if (xp->requires_grad) xp->EnsureGrad();
    if (wp->requires_grad) wp->EnsureGrad();
    if (bp && bp->requires_grad) bp->EnsureGrad();
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t t = 0; t < T; ++t) {
        const double* g = node->grad.data() + (bi * T + t) * C;
        if (bp && bp->requires_grad) {
          for (int64_t c = 0; c < C; ++c) bp->grad[c] += g[c];
        }
        for (int64_t d = 0; d < k; ++d) {
          int64_t ti = t - pad + d;
          if (ti < 0 || ti >= T) continue;
          const double* xi = xp->value.data() + (bi * T + ti) * C;
          if (wp->requires_grad) {
            for (int64_t c = 0; c < C; ++c) wp->grad[c * k + d] += g[c] * xi[c];
          }
          if (xp->requires_grad) {
            double* dx = xp->grad.data() + (bi * T + ti) * C;
            const double* wv = wp->value.data();
            for (int64_t c = 0; c < C; ++c) dx[c] += g[c] * wv[c * k + d];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var CtcLoss(const Var& log_probs, const std::vector<std::vector<int>>& labels,
            const std::vector<int>& input_lengths, int blank_id, bool* infeasible) {
  const Tensor& lp = log_probs->value;
  if (lp.ndim() != 3) throw std::invalid_argument("CtcLoss: log_probs must be (B,T,V)");
  int64_t B = lp.dim(0), Tmax = lp.dim(1), V = lp.dim(2);
  if (static_cast<int64_t>(labels.size()) != B ||
      static_cast<int64_t>(input_lengths.size()) != B) {
    throw std::invalid_argument("CtcLoss: batch size mismatch");
  }
  if (infeasible) *infeasible = false;

  Tensor grad_cache(lp.shape());  // d(mean loss)/d(log_probs)
  double total = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const std::vector<int>& lab = labels[b];
    int64_t T = input_lengths[b];
    if (T < 1 || T > Tmax) throw std::invalid_argument("CtcLoss: bad input length");
    int64_t L = static_cast<int64_t>(lab.size());
    for (int v : lab) {
      if (v == blank_id || v < 0 || v >= V) {
        throw std::invalid_argument("CtcLoss: label contains blank or out-of-range id");
      }
    }
    int64_t S = 2 * L + 1;
    auto ext = [&](int64_t s) { return (s % 2 == 0) ? blank_id : lab[s / 2]; };
    auto lpat = [&](int64_t t, int v) { return lp[(b * Tmax + t) * V + v]; };

    std::vector<double> alpha(static_cast<size_t>(T * S), kNegInf);
    alpha[0] = lpat(0, blank_id);
    if (S > 1) alpha[1] = lpat(0, ext(1));
    for (int64_t t = 1; t < T; ++t) {
      for (int64_t s = 0; s < S; ++s) {
        double best = alpha[(t - 1) * S + s];
        if (s >= 1) best = LogAdd(best, alpha[(t - 1) * S + s - 1]);
        if (s >= 2 && ext(s) != blank_id && ext(s) != ext(s - 2)) {
          best = LogAdd(best, alpha[(t - 1) * S + s - 2]);
        }
        alpha[t * S + s] = best == kNegInf ? kNegInf : best + lpat(t, ext(s));
      }
    }
    double log_p = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_p = LogAdd(log_p, alpha[(T - 1) * S + S - 2]);

    if (log_p == kNegInf) {
      // Label unreachable for this input length; no usable gradient.
      if (infeasible) *infeasible = true;
      total = std::numeric_limits<double>::infinity();
      continue;
    }
    total += -log_p;

    // beta[t][s]: completion probability, emissions at t+1.. only.
    std::vector<double> beta(static_cast<size_t>(T * S), kNegInf);
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    for (int64_t t = T - 2; t >= 0; --t) {
      for (int64_t s = 0; s < S; ++s) {
        double acc = kNegInf;
        double b0 = beta[(t + 1) * S + s];
        if (b0 != kNegInf) acc = LogAdd(acc, b0 + lpat(t + 1, ext(s)));
        if (s + 1 < S) {
          double b1 = beta[(t + 1) * S + s + 1];
          if (b1 != kNegInf) acc = LogAdd(acc, b1 + lpat(t + 1, ext(s + 1)));
        }
        if (s + 2 < S && ext(s + 2) != blank_id && ext(s + 2) != ext(s)) {
          double b2 = beta[(t + 1) * S + s + 2];
          if (b2 != kNegInf) acc = LogAdd(acc, b2 + lpat(t + 1, ext(s + 2)));
        }
        beta[t * S + s] = acc;
      }
    }
    // d(-log_p)/d lp(t,v) = -exp(logsumexp_{s: ext(s)=v} (alpha+beta) - log_p)
    for (int64_t t = 0; t < T; ++t) {
      std::vector<double> per_v(static_cast<size_t>(V), kNegInf);
      for (int64_t s = 0; s < S; ++s) {
        double ab = alpha[t * S + s];
        if (ab == kNegInf) continue;
        double bb = beta[t * S + s];
        if (bb == kNegInf) continue;
        int v = ext(s);
        per_v[v] = LogAdd(per_v[v], ab + bb);
      }
      for (int64_t v = 0; v < V; ++v) {
        if (per_v[static_cast<size_t>(v)] == kNegInf) continue;
        grad_cache[(b * Tmax + t) * V + v] =
            -std::exp(per_v[static_cast<size_t>(v)] - log_p) / static_cast<double>(B);
      }
    }
  }
  double loss = std::isinf(total) ? total : total / static_cast<double>(B);
  auto grad_p = std::make_shared<Tensor>(std::move(grad_cache));
  return MakeOp(Tensor::Scalar(loss), {log_probs}, [grad_p](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    double up = node->grad[0];
    int64_t n = p->grad.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += up * (*grad_p)[i];
  });
}

Var CrossEntropyLabelSmoothing(const Var& logits, const std::vector<int>& targets,
                               int ignore_index, double eps) {
  const Tensor& lv = logits->value;
  int64_t V = lv.shape().back();
  int64_t rows = lv.numel() / V;
  if (static_cast<int64_t>(targets.size()) != rows) {
    throw std::invalid_argument("CrossEntropyLabelSmoothing: target count mismatch");
  }
  int64_t n_valid = 0;
  for (int t : targets) {
    if (t != ignore_index) ++n_valid;
  }
  if (n_valid == 0) throw std::invalid_argument("CrossEntropyLabelSmoothing: no valid targets");

  double off_mass = eps / static_cast<double>(V - 1);
  double on_mass = 1.0 - eps;
  Tensor grad_cache(lv.shape());  // (softmax - q) / n_valid per valid row
  double total = 0.0;
  std::vector<double> logp(static_cast<size_t>(V));
  for (int64_t r = 0; r < rows; ++r) {
    int tgt = targets[static_cast<size_t>(r)];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= V) throw std::out_of_range("CrossEntropyLabelSmoothing: bad target");
    const double* x = lv.data() + r * V;
    double m = x[0];
    for (int64_t i = 1; i < V; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < V; ++i) z += std::exp(x[i] - m);
    double lse = m + std::log(z);
    double row_loss = 0.0;
    double* g = grad_cache.data() + r * V;
    for (int64_t i = 0; i < V; ++i) {
      logp[static_cast<size_t>(i)] = x[i] - lse;
      double q = (i == tgt) ? on_mass : off_mass;
      row_loss -= q * logp[static_cast<size_t>(i)];
      g[i] = (std::exp(logp[static_cast<size_t>(i)]) - q) / static_cast<double>(n_valid);
    }
    total += row_loss;
  }
  double loss = total / static_cast<double>(n_valid);
  auto grad_p = std::make_shared<Tensor>(std::move(grad_cache));
  return MakeOp(Tensor::Scalar(loss), {logits}, [grad_p](Node* node) {
    Node* p = node->inputs[0].get();
    p->EnsureGrad();
    double up = node->grad[0];
    int64_t n = p->grad.numel();
    for (int64_t i = 0; i < n; ++i) p->grad[i] += up * (*grad_p)[i];
  });
}

}  // namespace ag
}  // namespace vsr
