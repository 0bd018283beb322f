// nn/module.cc

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

#include "nn/module.h"

#include <algorithm>

namespace vsr {

ag::Var Module::AddParameter(const std::string& name, Tensor init) {
  ag::Var v = ag::Parameter(std::move(init));
  params_.emplace_back(name, v);
  return v;
}

void Module::AddBuffer(const std::string& name, Tensor* tensor) {
  buffers_.emplace_back(name, tensor);
}

void Module::AddChild(const std::string& name, Module* child) {
  children_.emplace_back(name, child);
}

void Module::Collect(const std::string& prefix,
                     std::vector<std::pair<std::string, ag::Var>>* params,
                     std::vector<std::pair<std::string, Tensor*>>* buffers) const {
  for (const auto& [name, var] : params_) {
    if (params) params->emplace_back(prefix + name, var);
  }
  for (const auto& [name, buf] : buffers_) {
    if (buffers) buffers->emplace_back(prefix + name, buf);
  }
  for (const auto& [name, child] : children_) {
    child->Collect(prefix + name + ".", params, buffers);
  }
}

std::vector<std::pair<std::string, ag::Var>> Module::NamedParameters() const {
  std::vector<std::pair<std::string, ag::Var>> out;
  Collect("", &out, nullptr);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Module::NamedBuffers() const {
  std::vector<std::pair<std::string, Tensor*>> out;
  Collect("", nullptr, &out);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Module::NamedState() const {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, var] : NamedParameters()) out.emplace_back(name, &var->value);
  for (auto& [name, buf] : NamedBuffers()) out.emplace_back(name, buf);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

int64_t Module::ParameterCount() const {
  int64_t n = 0;
  for (const auto& [name, var] : NamedParameters()) n += var->value.numel();
  return n;
}

void Module::SetTraining(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->SetTraining(training);
}

}  // namespace vsr
