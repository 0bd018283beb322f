// core/autograd.h

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

#ifndef VSRKIT_CORE_AUTOGRAD_H_
#define VSRKIT_CORE_AUTOGRAD_H_

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/rng.h"
#include "core/tensor.h"

namespace vsr {
namespace ag {

class Node;
using Var = std::shared_ptr<Node>;

// One vertex of the dynamically built computation graph. Reverse-mode
// differentiation walks the recorded nodes in reverse creation order, which
// is a valid topological order because inputs are always created before the
// ops that consume them.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  int64_t seq = 0;
  std::vector<Var> inputs;
  std::function<void(Node*)> backward_fn;

  void EnsureGrad();
  void AccumulateGrad(const Tensor& g);
};

bool GradEnabled();

// RAII switch disabling graph construction (inference / oracle evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Var Constant(Tensor value);
Var Parameter(Tensor value);

// Wraps a computed value as a graph node; degrades to a constant leaf when
// gradients are disabled or no input needs them.
Var MakeOp(Tensor value, std::vector<Var> inputs, std::function<void(Node*)> backward_fn);

// Seeds root->grad with ones and propagates through the graph.
void Backward(const Var& root);

// ---- elementwise ----
// Add/Mul accept equal shapes, or b whose shape is a suffix of a's
// (broadcast over the leading dims), which covers bias terms.
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Neg(const Var& a);
Var Scale(const Var& a, double c);
Var AddScalar(const Var& a, double c);
Var Relu(const Var& a);
Var Sigmoid(const Var& a);
Var Swish(const Var& a);
Var Gelu(const Var& a);
Var Tanh(const Var& a);

// ---- linear algebra ----
Var MatMul(const Var& a, const Var& b);                    // (M,K)x(K,N)
Var Bmm(const Var& a, const Var& b);                       // (B,M,K)x(B,K,N)
Var Affine(const Var& x, const Var& w, const Var& b);      // (...,In) x (Out,In)^T + (Out)

// ---- shape ----
Var Reshape(const Var& a, Shape shape);
Var Permute(const Var& a, const std::vector<int>& axes);
Var Concat(const std::vector<Var>& parts, int dim);
Var SliceDim(const Var& a, int dim, int64_t start, int64_t len);
Var ExpandLeading(const Var& a, int64_t n);  // (d...) -> (n,d...)

// ---- reductions / normalizations ----
Var SumAll(const Var& a);
Var MeanAll(const Var& a);
Var SoftmaxLastDim(const Var& a);
Var LogSoftmaxLastDim(const Var& a);
Var LayerNorm(const Var& x, const Var& gamma, const Var& beta, double eps);

// Per-channel batch normalization for (B,C,...) layouts (channel dim 1).
// Training mode uses batch statistics and updates the running buffers in
// place; inference mode reads the running buffers.
Var BatchNormChannel(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                     Tensor* running_var, bool training, double momentum, double eps);

Var Dropout(const Var& x, double p, bool training, RngState* rng);

// ---- embedding / conv ----
Var EmbeddingLookup(const Var& weight, const std::vector<int>& ids, Shape out_leading);

struct Conv3dGeom {
  std::array<int, 3> stride{1, 1, 1};  // (t,h,w)
  std::array<int, 3> pad{0, 0, 0};
};
// x: (B,Cin,T,H,W), w: (Cout,Cin,kt,kh,kw), b: (Cout) or empty Var for none.
Var Conv3d(const Var& x, const Var& w, const Var& b, const Conv3dGeom& geom);

// x: (B,T,C), w: (C,k) with odd k, same-length output (zero padded).
Var DepthwiseConv1d(const Var& x, const Var& w, const Var& b);

// ---- losses ----
// log_probs: (B,T,V) log-softmax outputs. Returns per-batch-mean CTC loss.
// Labels must not contain blank_id. If a label is unreachable for its input
// length, the loss is +inf and *infeasible is set when provided.
Var CtcLoss(const Var& log_probs, const std::vector<std::vector<int>>& labels,
            const std::vector<int>& input_lengths, int blank_id, bool* infeasible);

// logits: (B,L,V); targets: flat B*L token ids with ignore_index skipped.
// Label-smoothed cross entropy, mean over non-ignored positions; smoothing
// mass eps is spread over the V-1 non-target classes.
Var CrossEntropyLabelSmoothing(const Var& logits, const std::vector<int>& targets,
                               int ignore_index, double eps);

}  // namespace ag
}  // namespace vsr

#endif  // VSRKIT_CORE_AUTOGRAD_H_
