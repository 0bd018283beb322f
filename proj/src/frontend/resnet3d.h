// frontend/resnet3d.h

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

#ifndef VSRKIT_FRONTEND_RESNET3D_H_
#define VSRKIT_FRONTEND_RESNET3D_H_

#include <memory>
#include <vector>

#include "core/autograd.h"
#include "core/rng.h"
#include "nn/layers.h"
#include "nn/module.h"
#include "nn/sequence.h"

namespace vsr {

// 3D-convolutional visual frontend: a stem Conv3D lifting the input channels,
// four residual stages whose first block halves height and width (16x total),
// and a final spatial average pooling down to one feature vector per frame.
// All temporal strides are 1, so the output keeps the input frame count.
struct FrontendConfig {
  std::vector<int> block_depths{3, 4, 6, 3};
  std::vector<int> block_channels{32, 64, 128, 256};
  int stem_channels = 32;
  int input_channels = 1;

  int output_dim() const { return block_channels.back(); }
  void Validate() const;
};

// Residual unit of two 3x3x3 conv+norm pairs. A downsampling block strides
// height/width by 2 and projects the shortcut with a strided 1x1x1 conv;
// otherwise the shortcut is the identity and shapes are preserved.
class BasicBlock3d : public Module {
 public:
  BasicBlock3d(int in_channels, int out_channels, bool downsample, RngState* rng);
  // x: (B,Cin,T,H,W) -> (B,Cout,T,H',W')
  ag::Var Forward(const ag::Var& x);

  bool downsamples() const { return downsample_; }

 private:
  bool downsample_;
  ag::Var conv1_w_, conv1_b_;
  ag::Var conv2_w_, conv2_b_;
  BatchNormChannelLayer bn1_;
  BatchNormChannelLayer bn2_;
  ag::Var proj_w_;
  std::unique_ptr<BatchNormChannelLayer> proj_bn_;
};

class VisualFrontend : public Module {
 public:
  VisualFrontend(const FrontendConfig& config, RngState* rng);

  // video: (B,T,C,H,W) with H == W in {80,96,112,128}; output (B,T,D).
  FeatureSequence Forward(const ag::Var& video, const std::vector<int>& lengths);

  int num_blocks() const;
  int num_downsampling_blocks() const;
  const FrontendConfig& config() const { return config_; }

 private:
  FrontendConfig config_;
  ag::Var stem_w_, stem_b_;
  BatchNormChannelLayer stem_bn_;
  std::vector<std::unique_ptr<BasicBlock3d>> blocks_;
};

}  // namespace vsr

#endif  // VSRKIT_FRONTEND_RESNET3D_H_
