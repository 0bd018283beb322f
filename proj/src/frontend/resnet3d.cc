// frontend/resnet3d.cc

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

#include "frontend/resnet3d.h"

#include <stdexcept>
#include <string>

namespace vsr {

namespace {

constexpr int kSupportedCrops[] = {80, 96, 112, 128};

Tensor ConvInit(Shape shape, RngState* rng) {
  int64_t fan_in = shape[1] * shape[2] * shape[3] * shape[4];
  return UniformInit(std::move(shape), fan_in, rng);
}

}  // namespace

void FrontendConfig::Validate() const {
  if (block_depths.size() != 4 || block_channels.size() != 4) {
    throw std::invalid_argument("FrontendConfig: need exactly 4 stages");
  }
  for (size_t i = 1; i < block_channels.size(); ++i) {
    if (block_channels[i] <= block_channels[i - 1]) {
      throw std::invalid_argument("FrontendConfig: channels must be strictly increasing");
    }
  }
  if (stem_channels != block_channels[0]) {
    throw std::invalid_argument("FrontendConfig: stem_channels must equal block_channels[0]");
  }
  for (int d : block_depths) {
    if (d < 1) throw std::invalid_argument("FrontendConfig: block depth must be >= 1");
  }
  if (input_channels != 1 && input_channels != 3) {
    throw std::invalid_argument("FrontendConfig: input_channels must be 1 or 3");
  }
}

BasicBlock3d::BasicBlock3d(int in_channels, int out_channels, bool downsample, RngState* rng)
    : downsample_(downsample), bn1_(out_channels), bn2_(out_channels) {
  if (!downsample && in_channels != out_channels) {
    throw std::invalid_argument(
        "BasicBlock3d: channel change requires a downsampling projection shortcut (" +
        std::to_string(in_channels) + " -> " + std::to_string(out_channels) + ")");
  }
  if (downsample && out_channels < in_channels) {
    throw std::invalid_argument("BasicBlock3d: downsampling block must not shrink channels");
  }
  conv1_w_ = AddParameter("conv1.weight", ConvInit({out_channels, in_channels, 3, 3, 3}, rng));
  conv1_b_ = AddParameter("conv1.bias", UniformInit({out_channels},
                                                    in_channels * 27, rng));
  conv2_w_ = AddParameter("conv2.weight", ConvInit({out_channels, out_channels, 3, 3, 3}, rng));
  conv2_b_ = AddParameter("conv2.bias", UniformInit({out_channels}, out_channels * 27, rng));
  AddChild("bn1", &bn1_);
  AddChild("bn2", &bn2_);
  if (downsample_) {
    proj_w_ = AddParameter("proj.weight", ConvInit({out_channels, in_channels, 1, 1, 1}, rng));
    proj_bn_ = std::make_unique<BatchNormChannelLayer>(out_channels);
    AddChild("proj_bn", proj_bn_.get());
  }
}

ag::Var BasicBlock3d::Forward(const ag::Var& x) {
  ag::Conv3dGeom g1;
  g1.stride = {1, downsample_ ? 2 : 1, downsample_ ? 2 : 1};
  g1.pad = {1, 1, 1};
  ag::Var h = ag::Conv3d(x, conv1_w_, conv1_b_, g1);
  h = ag::Relu(bn1_.Forward(h));
  ag::Conv3dGeom g2;
  g2.stride = {1, 1, 1};
  g2.pad = {1, 1, 1};
  h = bn2_.Forward(ag::Conv3d(h, conv2_w_, conv2_b_, g2));

  ag::Var shortcut = x;
  if (downsample_) {
    ag::Conv3dGeom gp;
    gp.stride = {1, 2, 2};
    gp.pad = {0, 0, 0};
    shortcut = proj_bn_->Forward(ag::Conv3d(x, proj_w_, ag::Var(), gp));
  }
  return ag::Relu(ag::Add(h, shortcut));
}

VisualFrontend::VisualFrontend(const FrontendConfig& config, RngState* rng)
    : config_(config), stem_bn_(config.stem_channels) {
  config_.Validate();
  stem_w_ = AddParameter("stem.weight",
                         ConvInit({config_.stem_channels, config_.input_channels, 5, 7, 7}, rng));
  stem_b_ = AddParameter("stem.bias",
                         UniformInit({config_.stem_channels}, config_.input_channels * 245, rng));
  AddChild("stem_bn", &stem_bn_);
  int in_ch = config_.stem_channels;
  for (int stage = 0; stage < 4; ++stage) {
    int out_ch = config_.block_channels[static_cast<size_t>(stage)];
    for (int d = 0; d < config_.block_depths[static_cast<size_t>(stage)]; ++d) {
      bool down = d == 0;  // first block of every stage halves H and W
      auto block = std::make_unique<BasicBlock3d>(in_ch, out_ch, down, rng);
      AddChild("stage" + std::to_string(stage + 1) + ".block" + std::to_string(d), block.get());
      blocks_.push_back(std::move(block));
      in_ch = out_ch;
    }
  }
}

int VisualFrontend::num_blocks() const { return static_cast<int>(blocks_.size()); }

int VisualFrontend::num_downsampling_blocks() const {
  int n = 0;
  for (const auto& b : blocks_) {
    if (b->downsamples()) ++n;
  }
  return n;
}

FeatureSequence VisualFrontend::Forward(const ag::Var& video, const std::vector<int>& lengths) {
  const Tensor& v = video->value;
  if (v.ndim() != 5) {
    throw std::invalid_argument("VisualFrontend: expected (B,T,C,H,W) input, got " +
                                ShapeToString(v.shape()));
  }
  int64_t B = v.dim(0), T = v.dim(1), C = v.dim(2), H = v.dim(3), W = v.dim(4);
  if (C != config_.input_channels) {
    throw std::invalid_argument("VisualFrontend: channel mismatch");
  }
  if (H != W) {
    throw std::invalid_argument("VisualFrontend: input must be square, got " +
                                std::to_string(H) + "x" + std::to_string(W));
  }
  bool supported = false;
  for (int crop : kSupportedCrops) supported |= (H == crop);
  if (!supported) {
    throw std::invalid_argument("VisualFrontend: unsupported crop size " + std::to_string(H));
  }

  ag::Var x = ag::Permute(video, {0, 2, 1, 3, 4});  // (B,C,T,H,W)
  ag::Conv3dGeom stem_geom;
  stem_geom.stride = {1, 1, 1};
  stem_geom.pad = {2, 3, 3};
  x = ag::Conv3d(x, stem_w_, stem_b_, stem_geom);
  x = ag::Relu(stem_bn_.Forward(x));
  for (auto& block : blocks_) x = block->Forward(x);

  // Average the spatial grid: (B,C',T,H',W') -> (B,T,C').
  int64_t Cf = x->value.dim(1);
  int64_t Hf = x->value.dim(3), Wf = x->value.dim(4);
  x = ag::Reshape(x, {B, Cf, T, Hf * Wf});
  x = ag::Permute(x, {0, 2, 1, 3});  // (B,T,C',HW)
  // Mean over the last dim via reshape to (B*T*C',HW) rows.
  const int64_t rows = B * T * Cf;
  ag::Var flat = ag::Reshape(x, {rows, Hf * Wf});
  // Row mean = matmul with a constant column of 1/HW.
  Tensor ones_col(Shape{Hf * Wf, 1}, 1.0 / static_cast<double>(Hf * Wf));
  ag::Var pooled = ag::MatMul(flat, ag::Constant(std::move(ones_col)));
  FeatureSequence out;
  out.values = ag::Reshape(pooled, {B, T, Cf});
  out.lengths = lengths.empty() ? std::vector<int>(static_cast<size_t>(B), static_cast<int>(T))
                                : lengths;
  return out;
}

}  // namespace vsr
