// nn/layers.cc

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

#include "nn/layers.h"

#include <cmath>
#include <stdexcept>

namespace vsr {

ag::Var ApplyActivation(const ag::Var& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return ag::Relu(x);
    case Activation::kSwish:
      return ag::Swish(x);
    case Activation::kGelu:
      return ag::Gelu(x);
  }
  throw std::logic_error("ApplyActivation: unknown activation");
}

Tensor UniformInit(Shape shape, int64_t fan_in, RngState* rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t[i] = rng->Uniform(-bound, bound);
  return t;
}

Tensor NormalInit(Shape shape, double stddev, RngState* rng) {
  Tensor t(std::move(shape));
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t[i] = rng->Normal() * stddev;
  return t;
}

Linear::Linear(int64_t in_dim, int64_t out_dim, RngState* rng, bool with_bias) {
  weight_ = AddParameter("weight", UniformInit({out_dim, in_dim}, in_dim, rng));
  if (with_bias) {
    bias_ = AddParameter("bias", UniformInit({out_dim}, in_dim, rng));
  }
}

LayerNormLayer::LayerNormLayer(int64_t dim, double eps) : eps_(eps) {
  gamma_ = AddParameter("gamma", Tensor::Full({dim}, 1.0));
  beta_ = AddParameter("beta", Tensor::Zeros({dim}));
}

BatchNormChannelLayer::BatchNormChannelLayer(int64_t channels, double momentum, double eps)
    : running_mean_(Tensor::Zeros({channels})),
      running_var_(Tensor::Full({channels}, 1.0)),
      momentum_(momentum),
      eps_(eps) {
  gamma_ = AddParameter("gamma", Tensor::Full({channels}, 1.0));
  beta_ = AddParameter("beta", Tensor::Zeros({channels}));
  AddBuffer("running_mean", &running_mean_);
  AddBuffer("running_var", &running_var_);
}

ag::Var BatchNormChannelLayer::Forward(const ag::Var& x) {
  return ag::BatchNormChannel(x, gamma_, beta_, &running_mean_, &running_var_, training(),
                              momentum_, eps_);
}

Embedding::Embedding(int64_t vocab_size, int64_t dim, RngState* rng) {
  weight_ = AddParameter(
      "weight", NormalInit({vocab_size, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
}

FeedForward::FeedForward(int64_t dim, int64_t hidden, Activation act, double dropout,
                         RngState* rng)
    : w1_(dim, hidden, rng), w2_(hidden, dim, rng), act_(act), dropout_(dropout) {
  AddChild("w1", &w1_);
  AddChild("w2", &w2_);
}

ag::Var FeedForward::Forward(const ag::Var& x, RngState* dropout_rng) {
  ag::Var h = ApplyActivation(w1_.Forward(x), act_);
  h = ag::Dropout(h, dropout_, training(), dropout_rng);
  return w2_.Forward(h);
}

Tensor SinusoidalPositions(int64_t max_len, int64_t dim) {
  Tensor pe(Shape{max_len, dim});
  for (int64_t pos = 0; pos < max_len; ++pos) {
    for (int64_t i = 0; i < dim; i += 2) {
      double rate = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                             static_cast<double>(dim));
      double angle = static_cast<double>(pos) * rate;
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor BuildAttentionMask(int64_t batch, int64_t heads, int64_t tq, int64_t tk,
                          const std::vector<int>& key_lengths, bool causal) {
  constexpr double kMaskValue = -1e30;
  Tensor mask(Shape{batch, heads, tq, tk});
  for (int64_t b = 0; b < batch; ++b) {
    int64_t valid = key_lengths.empty() ? tk : key_lengths[static_cast<size_t>(b)];
    for (int64_t h = 0; h < heads; ++h) {
      for (int64_t i = 0; i < tq; ++i) {
        double* row = mask.data() + ((b * heads + h) * tq + i) * tk;
        int64_t limit = causal ? std::min<int64_t>(valid, i + 1) : valid;
        for (int64_t j = limit; j < tk; ++j) row[j] = kMaskValue;
      }
    }
  }
  return mask;
}

Tensor BuildTimeMask(int64_t batch, int64_t t, int64_t d, const std::vector<int>& lengths) {
  Tensor mask(Shape{batch, t, d});
  for (int64_t b = 0; b < batch; ++b) {
    int64_t valid = lengths.empty() ? t : lengths[static_cast<size_t>(b)];
    double* p = mask.data() + b * t * d;
    std::fill(p, p + valid * d, 1.0);
  }
  return mask;
}

}  // namespace vsr
