// nn/attention.h

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

#ifndef VSRKIT_NN_ATTENTION_H_
#define VSRKIT_NN_ATTENTION_H_

#include <cstdint>
#include <vector>

#include "core/autograd.h"
#include "core/rng.h"
#include "nn/layers.h"
#include "nn/module.h"

namespace vsr {

// Scaled dot-product multi-head attention. Self-attention variants carry a
// learned per-head relative-position bias added to the attention logits
// (bucketed by clamped signed distance); cross-attention runs without it.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int64_t dim, int64_t num_heads, double dropout, bool relative_bias,
                     int64_t max_relative_distance, RngState* rng);

  // query (B,Tq,D), key/value (B,Tk,D); mask additive (B,H,Tq,Tk) or empty.
  ag::Var Forward(const ag::Var& query, const ag::Var& key, const ag::Var& value,
                  const Tensor& mask, RngState* dropout_rng);

  int64_t num_heads() const { return num_heads_; }

 private:
  ag::Var RelativeBias(int64_t tq, int64_t tk) const;  // (H,Tq,Tk)

  int64_t dim_;
  int64_t num_heads_;
  int64_t head_dim_;
  double dropout_;
  bool relative_bias_;
  int64_t max_rel_;
  Linear wq_;
  Linear wk_;
  Linear wv_;
  Linear wo_;
  ag::Var rel_table_;  // (H, 2*max_rel+1)
};

}  // namespace vsr

#endif  // VSRKIT_NN_ATTENTION_H_
