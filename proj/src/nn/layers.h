// nn/layers.h

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

#ifndef VSRKIT_NN_LAYERS_H_
#define VSRKIT_NN_LAYERS_H_

#include <cstdint>
#include <vector>

#include "core/autograd.h"
#include "core/rng.h"
#include "core/tensor.h"
#include "nn/module.h"

namespace vsr {

enum class Activation { kRelu, kSwish, kGelu };

ag::Var ApplyActivation(const ag::Var& x, Activation act);

// Parameter initializers. Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for
// weights and biases, matching common convnet/transformer practice.
Tensor UniformInit(Shape shape, int64_t fan_in, RngState* rng);
Tensor NormalInit(Shape shape, double stddev, RngState* rng);

class Linear : public Module {
 public:
  Linear(int64_t in_dim, int64_t out_dim, RngState* rng, bool with_bias = true);
  ag::Var Forward(const ag::Var& x) const { return ag::Affine(x, weight_, bias_); }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

class LayerNormLayer : public Module {
 public:
  explicit LayerNormLayer(int64_t dim, double eps = 1e-5);
  ag::Var Forward(const ag::Var& x) const { return ag::LayerNorm(x, gamma_, beta_, eps_); }

 private:
  ag::Var gamma_;
  ag::Var beta_;
  double eps_;
};

// Channel batch norm for (B,C,...) tensors; keeps running estimates for
// inference. Variance is the biased estimate in both paths.
class BatchNormChannelLayer : public Module {
 public:
  explicit BatchNormChannelLayer(int64_t channels, double momentum = 0.1, double eps = 1e-5);
  ag::Var Forward(const ag::Var& x);

 private:
  ag::Var gamma_;
  ag::Var beta_;
  Tensor running_mean_;
  Tensor running_var_;
  double momentum_;
  double eps_;
};

class Embedding : public Module {
 public:
  Embedding(int64_t vocab_size, int64_t dim, RngState* rng);
  // ids laid out row-major with the given leading shape; output (...,D).
  ag::Var Forward(const std::vector<int>& ids, Shape leading) const {
    return ag::EmbeddingLookup(weight_, ids, std::move(leading));
  }

 private:
  ag::Var weight_;
};

// Two-layer position-wise feed-forward with inner dropout.
class FeedForward : public Module {
 public:
  FeedForward(int64_t dim, int64_t hidden, Activation act, double dropout, RngState* rng);
  ag::Var Forward(const ag::Var& x, RngState* dropout_rng);

 private:
  Linear w1_;
  Linear w2_;
  Activation act_;
  double dropout_;
};

// Sinusoidal absolute position table, (T, D).
Tensor SinusoidalPositions(int64_t max_len, int64_t dim);

// Additive attention mask (B,H,Tq,Tk): 0 where attendable, -1e30 where not.
// key_lengths masks padded keys; causal adds the autoregressive constraint.
Tensor BuildAttentionMask(int64_t batch, int64_t heads, int64_t tq, int64_t tk,
                          const std::vector<int>& key_lengths, bool causal);

// Multiplicative (B,T,D) mask: 1 for valid frames, 0 for padding. Applied
// before temporal convolutions so padded content can never leak into valid
// positions.
Tensor BuildTimeMask(int64_t batch, int64_t t, int64_t d, const std::vector<int>& lengths);

}  // namespace vsr

#endif  // VSRKIT_NN_LAYERS_H_
