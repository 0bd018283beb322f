// nn/sequence.h

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

#ifndef VSRKIT_NN_SEQUENCE_H_
#define VSRKIT_NN_SEQUENCE_H_

#include <vector>

#include "core/autograd.h"

namespace vsr {

// Batched time-major feature sequence: values (B,T,D) padded to the longest
// item, lengths holding each item's valid frame count.
struct FeatureSequence {
  ag::Var values;
  std::vector<int> lengths;

  int64_t batch() const { return values->value.dim(0); }
  int64_t time() const { return values->value.dim(1); }
  int64_t dim() const { return values->value.dim(2); }
};

}  // namespace vsr

#endif  // VSRKIT_NN_SEQUENCE_H_
