// nn/module.h

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

#ifndef VSRKIT_NN_MODULE_H_
#define VSRKIT_NN_MODULE_H_

#include <string>
#include <utility>
#include <vector>

#include "core/autograd.h"
#include "core/tensor.h"

namespace vsr {

// Base class holding a named registry of trainable parameters, persistent
// buffers (e.g. running statistics) and child modules. Checkpoints and the
// optimizer address everything through the dotted names, always in sorted
// order, so parameter traversal is reproducible.
class Module {
 public:
  virtual ~Module() = default;

  ag::Var AddParameter(const std::string& name, Tensor init);
  void AddBuffer(const std::string& name, Tensor* tensor);
  void AddChild(const std::string& name, Module* child);

  // Dotted-name views over the whole subtree, sorted by name.
  std::vector<std::pair<std::string, ag::Var>> NamedParameters() const;
  std::vector<std::pair<std::string, Tensor*>> NamedBuffers() const;
  // Parameters and buffers together: the full serializable state.
  std::vector<std::pair<std::string, Tensor*>> NamedState() const;

  int64_t ParameterCount() const;

  void SetTraining(bool training);
  bool training() const { return training_; }

 protected:
  bool training_ = true;

 private:
  void Collect(const std::string& prefix,
               std::vector<std::pair<std::string, ag::Var>>* params,
               std::vector<std::pair<std::string, Tensor*>>* buffers) const;

  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

}  // namespace vsr

#endif  // VSRKIT_NN_MODULE_H_
