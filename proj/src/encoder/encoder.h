// encoder/encoder.h

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

#ifndef VSRKIT_ENCODER_ENCODER_H_
#define VSRKIT_ENCODER_ENCODER_H_

#include <memory>
#include <string>
#include <vector>

#include "core/rng.h"
#include "nn/attention.h"
#include "nn/layers.h"
#include "nn/module.h"
#include "nn/sequence.h"

namespace vsr {

enum class EncoderVariant { kConformer, kBranchformer, kEBranchformer };

EncoderVariant EncoderVariantFromString(const std::string& name);
std::string EncoderVariantToString(EncoderVariant v);

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::kEBranchformer;
  int num_layers = 12;
  int model_dim = 256;
  int num_heads = 4;
  int feedforward_dim = 1024;
  double dropout = 0.1;
  int conv_kernel = 15;        // depthwise kernel in conv / gating branches
  int merge_conv_kernel = 3;   // branch-fusion depthwise kernel
  int max_relative_distance = 64;

  void Validate() const;
};

// Shared contract for the interchangeable 12-layer encoders: input and
// output are both (B,T,model_dim); positions at or beyond lengths[i] never
// influence valid outputs.
class Encoder : public Module {
 public:
  explicit Encoder(const EncoderConfig& config) : config_(config) {}
  virtual FeatureSequence Forward(const FeatureSequence& in, RngState* dropout_rng) = 0;
  const EncoderConfig& config() const { return config_; }

 protected:
  void CheckInput(const FeatureSequence& in) const;
  EncoderConfig config_;
};

std::unique_ptr<Encoder> MakeEncoder(const EncoderConfig& config, RngState* rng);

// Convolution-gated MLP branch shared by the Branchformer variants: channel
// expansion, then a gate built from a depthwise temporal convolution on half
// of the hidden units.
class ConvGatedMlp : public Module {
 public:
  ConvGatedMlp(int64_t dim, int64_t hidden, int kernel, double dropout, RngState* rng);
  ag::Var Forward(const ag::Var& x, const std::vector<int>& lengths, RngState* dropout_rng);

 private:
  int64_t half_;
  double dropout_;
  Linear proj_in_;
  LayerNormLayer gate_norm_;
  ag::Var dw_weight_, dw_bias_;
  Linear proj_out_;
};

}  // namespace vsr

#endif  // VSRKIT_ENCODER_ENCODER_H_
