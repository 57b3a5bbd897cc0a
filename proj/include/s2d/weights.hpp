// Copyright (c) 2026 The s2d Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <string>

#include "s2d/tensor.hpp"

namespace s2d {

// Named tensor collection. Ordered map so iteration (init, optimizer steps,
// serialization) is deterministic. Trainable parameters carry
// requires_grad=true; batch-norm running statistics are stored alongside
// with requires_grad=false.
class WeightStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    auto [it, inserted] = items_.emplace(name, std::move(t));
    if (!inserted) fail("duplicate weight name: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return items_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) fail("missing weight: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) fail("missing weight: " + name);
    return it->second;
  }

  std::map<std::string, Tensor>& items() { return items_; }
  const std::map<std::string, Tensor>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  void zero_grads() {
    for (auto& [name, t] : items_)
      if (t.requires_grad()) t.zero_grad();
  }

  // Copies values from `src` into existing entries; every entry must be
  // present in src with a matching shape.
  void assign_from(const WeightStore& src) {
    for (auto& [name, t] : items_) {
      if (!src.has(name)) fail("checkpoint is missing weight '" + name + "'");
      const Tensor& s = src.at(name);
      if (s.shape() != t.shape())
        fail("weight '" + name + "' shape mismatch: expected " + t.shape().str() + ", got " +
             s.shape().str());
      t.vec() = s.vec();
    }
  }

  WeightStore deep_copy() const {
    WeightStore out;
    for (const auto& [name, t] : items_) out.add(name, t.clone());
    return out;
  }

 private:
  std::map<std::string, Tensor> items_;
};

}  // namespace s2d
