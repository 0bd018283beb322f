// nn/attention.cc

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

#include "nn/attention.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vsr {

MultiHeadAttention::MultiHeadAttention(int64_t dim, int64_t num_heads, double dropout,
                                       bool relative_bias, int64_t max_relative_distance,
                                       RngState* rng)
    : dim_(dim),
      num_heads_(num_heads),
      head_dim_(dim / num_heads),
      dropout_(dropout),
      relative_bias_(relative_bias),
      max_rel_(max_relative_distance),
      wq_(dim, dim, rng),
      wk_(dim, dim, rng),
      wv_(dim, dim, rng),
      wo_(dim, dim, rng) {
  if (dim % num_heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: dim must be divisible by num_heads");
  }
  AddChild("wq", &wq_);
  AddChild("wk", &wk_);
  AddChild("wv", &wv_);
  AddChild("wo", &wo_);
  if (relative_bias_) {
    rel_table_ = AddParameter("rel_bias", Tensor::Zeros({num_heads_, 2 * max_rel_ + 1}));
  }
}

ag::Var MultiHeadAttention::RelativeBias(int64_t tq, int64_t tk) const {
  const int64_t H = num_heads_, R = max_rel_;
  Tensor out(Shape{H, tq, tk});
  const Tensor& table = rel_table_->value;
  for (int64_t h = 0; h < H; ++h) {
    for (int64_t i = 0; i < tq; ++i) {
      double* row = out.data() + (h * tq + i) * tk;
      for (int64_t j = 0; j < tk; ++j) {
        int64_t rel = std::clamp<int64_t>(j - i, -R, R);
        row[j] = table[h * (2 * R + 1) + rel + R];
      }
    }
  }
  return ag::MakeOp(std::move(out), {rel_table_}, [H, tq, tk, R](ag::Node* node) {
    ag::Node* p = node->inputs[0].get();
    p->EnsureGrad();
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t i = 0; i < tq; ++i) {
        const double* g = node->grad.data() + (h * tq + i) * tk;
        for (int64_t j = 0; j < tk; ++j) {
          int64_t rel = std::clamp<int64_t>(j - i, -R, R);
          p->grad[h * (2 * R + 1) + rel + R] += g[j];
        }
      }
    }
  });
}

ag::Var MultiHeadAttention::Forward(const ag::Var& query, const ag::Var& key,
                                    const ag::Var& value, const Tensor& mask,
                                    RngState* dropout_rng) {
  const int64_t B = query->value.dim(0);
  const int64_t Tq = query->value.dim(1);
  const int64_t Tk = key->value.dim(1);
  const int64_t H = num_heads_, dh = head_dim_;

  auto split_heads = [&](const ag::Var& x, int64_t t) {
    ag::Var r = ag::Reshape(x, {B, t, H, dh});
    r = ag::Permute(r, {0, 2, 1, 3});  // (B,H,T,dh)
    return ag::Reshape(r, {B * H, t, dh});
  };

  ag::Var q = split_heads(wq_.Forward(query), Tq);
  ag::Var k = split_heads(wk_.Forward(key), Tk);
  ag::Var v = split_heads(wv_.Forward(value), Tk);

  ag::Var kt = ag::Reshape(
      ag::Permute(ag::Reshape(k, {B, H, Tk, dh}), {0, 1, 3, 2}), {B * H, dh, Tk});
  ag::Var scores = ag::Scale(ag::Bmm(q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  scores = ag::Reshape(scores, {B, H, Tq, Tk});

  if (relative_bias_) {
    scores = ag::Add(scores, ag::ExpandLeading(RelativeBias(Tq, Tk), B));
  }
  if (!mask.empty()) {
    if (!(mask.shape() == Shape{B, H, Tq, Tk})) {
      throw std::invalid_argument("MultiHeadAttention: mask shape mismatch " +
                                  ShapeToString(mask.shape()));
    }
    scores = ag::Add(scores, ag::Constant(mask));
  }

  ag::Var attn = ag::SoftmaxLastDim(ag::Reshape(scores, {B * H, Tq, Tk}));
  attn = ag::Dropout(attn, dropout_, training(), dropout_rng);
  ag::Var ctx = ag::Bmm(attn, v);  // (B*H,Tq,dh)
  ctx = ag::Permute(ag::Reshape(ctx, {B, H, Tq, dh}), {0, 2, 1, 3});
  ctx = ag::Reshape(ctx, {B, Tq, dim_});
  return wo_.Forward(ctx);
}

}  // namespace vsr
